#include "arcl/attack.hpp"

#include <algorithm>
#include <string>

#include "arcl/errors.hpp"

namespace arcl {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("attack: epsilon must be >= 0");
  if (steps < 0) throw ConfigError("attack: steps must be >= 0");
  if (steps > 0 && !(step_size > 0.0)) throw ConfigError("attack: step_size must be > 0 when steps > 0");
  if (!(lower < upper)) throw ConfigError("attack: input bounds need lower < upper");
}

AttackConfig pgd_config(int steps, double epsilon, double step_size) {
  AttackConfig cfg;
  cfg.steps = steps;
  cfg.epsilon = epsilon;
  cfg.step_size = step_size;
  return cfg;
}

void project(Matrix& candidate, const Matrix& origin, double epsilon, double lower, double upper) {
  candidate = candidate.array()
                  .max(origin.array() - epsilon)
                  .min(origin.array() + epsilon)
                  .max(lower)
                  .min(upper)
                  .matrix();
}

namespace {

void check_inputs(const Mlp& model, const Matrix& x, std::span<const int> y, const AttackConfig& cfg) {
  cfg.validate();
  if (static_cast<Eigen::Index>(y.size()) != x.rows()) {
    throw DimensionError("attack: " + std::to_string(y.size()) + " labels for " +
                         std::to_string(x.rows()) + " inputs");
  }
  for (int label : y) {
    if (label < 0 || label >= model.num_classes()) {
      throw InputError("attack: label " + std::to_string(label) + " outside model head");
    }
  }
  if (cfg.calibration && cfg.calibration->cols() != model.num_classes()) {
    throw DimensionError("attack: calibration vector has " + std::to_string(cfg.calibration->cols()) +
                         " entries for " + std::to_string(model.num_classes()) + " classes");
  }
}

Var maybe_calibrate(const Var& z, const AttackConfig& cfg) {
  return cfg.calibration ? apply_calibration(z, *cfg.calibration) : z;
}

// Shared ascent loop. `loss_of` maps the (possibly calibrated) logits of the
// current iterate to the scalar being maximized.
template <typename LossOf>
AttackResult ascend(const Mlp& model, const Matrix& x, std::span<const int> y, const AttackConfig& cfg,
                    Matrix start, LossOf&& loss_of) {
  AttackResult result;
  result.adversarial = std::move(start);
  result.k.assign(y.size(), 0);
  std::vector<bool> frozen(y.size(), false);

  for (int step = 0; step < cfg.steps; ++step) {
    ForwardPass pass = forward(model, result.adversarial, {.parameters = false, .input = true});
    Var loss = loss_of(maybe_calibrate(pass.logits, cfg));
    ad::backward(loss);
    const Matrix& g = pass.input.grad();
    for (Eigen::Index r = 0; r < result.adversarial.rows(); ++r) {
      if (frozen[static_cast<std::size_t>(r)]) continue;
      result.adversarial.row(r) += cfg.step_size * g.row(r).array().sign().matrix();
    }
    project(result.adversarial, x, cfg.epsilon, cfg.lower, cfg.upper);

    const std::vector<int> pred = predict(model, result.adversarial, Setting::ClassIncremental);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (frozen[i] || pred[i] == y[i]) continue;
      ++result.k[i];
      if (cfg.early_stop) frozen[i] = true;
    }
  }
  return result;
}

}  // namespace

AttackResult pgd(const Mlp& model, const Matrix& x, std::span<const int> y, const AttackConfig& cfg,
                 Rng& rng) {
  check_inputs(model, x, y, cfg);
  Matrix start = x;
  if (cfg.random_start && cfg.epsilon > 0.0) {
    std::uniform_real_distribution<double> noise(-cfg.epsilon, cfg.epsilon);
    for (Eigen::Index i = 0; i < start.size(); ++i) start.data()[i] += noise(rng);
    project(start, x, cfg.epsilon, cfg.lower, cfg.upper);
  }
  return ascend(model, x, y, cfg, std::move(start),
                [y](const Var& z) { return ad::softmax_cross_entropy(z, y); });
}

Matrix fgsm(const Mlp& model, const Matrix& x, std::span<const int> y, double epsilon, double lower,
            double upper) {
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.step_size = epsilon;
  cfg.steps = 1;
  cfg.random_start = false;
  cfg.lower = lower;
  cfg.upper = upper;
  if (epsilon == 0.0) {
    cfg.steps = 0;
    check_inputs(model, x, y, cfg);
    return x;
  }
  Rng unused(0);
  return pgd(model, x, y, cfg, unused).adversarial;
}

AttackResult trades_inner_max(const Mlp& model, const Matrix& x, std::span<const int> y,
                              const AttackConfig& cfg, Rng& rng) {
  if (cfg.loss != AttackLoss::KL) throw ConfigError("trades_inner_max: attack loss must be kl");
  check_inputs(model, x, y, cfg);
  Matrix start = x;
  if (cfg.epsilon > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.epsilon / 10.0);
    for (Eigen::Index i = 0; i < start.size(); ++i) start.data()[i] += noise(rng);
    project(start, x, cfg.epsilon, cfg.lower, cfg.upper);
  }
  Matrix clean = logits(model, x);
  if (cfg.calibration) clean = apply_calibration(clean, *cfg.calibration);
  const Var target = Var::constant(std::move(clean));
  return ascend(model, x, y, cfg, std::move(start),
                [&target](const Var& z) { return ad::kl_divergence(target, z); });
}

}  // namespace arcl
