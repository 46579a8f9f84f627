#pragma once

#include <optional>
#include <span>
#include <vector>

#include "arcl/calibration.hpp"
#include "arcl/model.hpp"
#include "arcl/tensor.hpp"

namespace arcl {

enum class AttackLoss { CrossEntropy, KL };

/// L-infinity iterative attack settings. Defaults are the evaluation attack
/// (PGD-20) on inputs in [0, 1].
struct AttackConfig {
  double epsilon = 0.1;
  double step_size = 0.025;
  int steps = 20;
  AttackLoss loss = AttackLoss::CrossEntropy;
  /// Freeze each example at its first misclassified iterate.
  bool early_stop = false;
  /// Start from a uniform draw in the epsilon ball instead of x itself.
  bool random_start = true;
  /// When set, the attacked loss is computed on calibrated logits.
  std::optional<RowVector> calibration;
  double lower = 0.0;
  double upper = 1.0;

  /// Throws ConfigError when the invariants do not hold.
  void validate() const;
};

/// Sign-gradient CE attack with N steps and the desk-scale defaults.
AttackConfig pgd_config(int steps, double epsilon = 0.1, double step_size = 0.025);

struct AttackResult {
  Matrix adversarial;
  /// Per example: the number of iterates that were misclassified (class-il).
  std::vector<int> k;
};

/// Projected sign-gradient ascent on the (optionally calibrated) cross-entropy.
AttackResult pgd(const Mlp& model, const Matrix& x, std::span<const int> y, const AttackConfig& cfg,
                 Rng& rng);

/// Single step of size epsilon from x.
Matrix fgsm(const Mlp& model, const Matrix& x, std::span<const int> y, double epsilon,
            double lower = 0.0, double upper = 1.0);

/// Projected sign-gradient ascent on KL(f(x) || f(x_adv)) from a Gaussian start
/// with sigma = epsilon / 10. Labels are only used to count k.
AttackResult trades_inner_max(const Mlp& model, const Matrix& x, std::span<const int> y,
                              const AttackConfig& cfg, Rng& rng);

/// Clips `candidate` into the epsilon ball around `origin` and then into the box.
void project(Matrix& candidate, const Matrix& origin, double epsilon, double lower, double upper);

}  // namespace arcl
