#include "arcl/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>

#include "arcl/attack.hpp"
#include "arcl/calibration.hpp"
#include "arcl/errors.hpp"
#include "arcl/evaluation.hpp"
#include "arcl/memory.hpp"
#include "arcl/model.hpp"
#include "arcl/trainer.hpp"

namespace arcl {

namespace {

using Clock = std::chrono::steady_clock;

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, lo, hi);
  return m;
}

std::vector<int> random_labels(Rng& rng, int n, int classes) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (int& v : y) v = uniform_int(rng, 0, classes - 1);
  return y;
}

Mlp random_mlp(Rng& rng, int width, int classes, int max_hidden_layers, int max_hidden) {
  std::vector<int> sizes{width};
  const int depth = uniform_int(rng, 1, max_hidden_layers);
  for (int l = 0; l < depth; ++l) sizes.push_back(uniform_int(rng, 2, max_hidden));
  sizes.push_back(classes);
  Mlp m = Mlp::init(sizes, rng());
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    m.bias(l) = random_matrix(rng, 1, m.bias(l).cols(), -0.5, 0.5);
  }
  return m;
}

// Smallest |pre-activation| over the hidden layers, by direct evaluation.
double nearest_kink(const Mlp& m, const Matrix& x) {
  double nearest = std::numeric_limits<double>::infinity();
  Matrix h = x;
  for (std::size_t l = 0; l + 1 < m.num_layers(); ++l) {
    Matrix z = h * m.weight(l);
    z.rowwise() += m.bias(l).row(0);
    nearest = std::min(nearest, z.cwiseAbs().minCoeff());
    h = z.cwiseMax(0.0);
  }
  return nearest;
}

struct LossCase {
  const char* name;
  bool calibrated;
  enum Kind { CE, KL, MSE } kind;
};

constexpr LossCase kLossCases[] = {
    {"ce", false, LossCase::CE},  {"ce_calibrated", true, LossCase::CE}, {"kl", false, LossCase::KL},
    {"kl_calibrated", true, LossCase::KL}, {"mse", false, LossCase::MSE},
};

struct GradInstance {
  Matrix x;
  Matrix x0;
  std::vector<int> y;
  RowVector v;
  Matrix target;
};

Var loss_graph(const LossCase& c, const Parameters& params, const Var& x, const GradInstance& in) {
  auto head = [&](const Var& input) {
    Var z = forward(params, input);
    return c.calibrated ? apply_calibration(z, in.v) : z;
  };
  switch (c.kind) {
    case LossCase::CE: return ad::softmax_cross_entropy(head(x), in.y);
    case LossCase::KL: return ad::kl_divergence(head(Var::constant(in.x0)), head(x));
    case LossCase::MSE: return ad::mse(head(x), in.target);
  }
  return {};
}

double loss_value(const LossCase& c, const Mlp& m, const Matrix& x, const GradInstance& in) {
  return loss_graph(c, parameter_leaves(m, false), Var::constant(x), in).item();
}

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

CheckResult finish(CheckResult r, Clock::time_point start) {
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

}  // namespace

CheckResult check_gradients(std::uint64_t seed, int instances) {
  const auto start = Clock::now();
  constexpr double h = 1e-4;
  Rng rng(seed);
  double worst = 0.0;
  std::string worst_where = "-";
  int redraws = 0;
  long compared = 0;

  for (int n = 0; n < instances; ++n) {
    const int width = uniform_int(rng, 2, 6);
    const int classes = uniform_int(rng, 2, 6);
    const int batch = uniform_int(rng, 1, 4);
    Mlp model = random_mlp(rng, width, classes, 2, 6);
    GradInstance in;
    in.x = random_matrix(rng, batch, width, 0.0, 1.0);
    in.x0 = random_matrix(rng, batch, width, 0.0, 1.0);
    in.y = random_labels(rng, batch, classes);
    in.v = random_matrix(rng, 1, classes, 0.0, 3.0);
    in.target = random_matrix(rng, batch, classes, -2.0, 2.0);
    // Central differences straddling a ReLU kink measure the kink, not the
    // gradient, so such draws are replaced.
    if (std::min(nearest_kink(model, in.x), nearest_kink(model, in.x0)) < 1e-3) {
      ++redraws;
      --n;
      continue;
    }

    for (const LossCase& c : kLossCases) {
      ForwardPass pass = forward(model, in.x, {.parameters = true, .input = true});
      ad::backward(loss_graph(c, pass.params, pass.input, in));

      auto compare = [&](double analytic, double numeric, const std::string& where) {
        const double e = rel_error(analytic, numeric);
        ++compared;
        if (e > worst) {
          worst = e;
          worst_where = "instance " + std::to_string(n) + " " + c.name + " " + where;
        }
      };
      Matrix xp = in.x;
      for (Eigen::Index i = 0; i < xp.size(); ++i) {
        const double saved = xp.data()[i];
        xp.data()[i] = saved + h;
        const double up = loss_value(c, model, xp, in);
        xp.data()[i] = saved - h;
        const double down = loss_value(c, model, xp, in);
        xp.data()[i] = saved;
        compare(pass.input.grad().data()[i], (up - down) / (2 * h), "input");
      }
      for (std::size_t l = 0; l < model.num_layers(); ++l) {
        for (int which = 0; which < 2; ++which) {
          double* p = which == 0 ? model.weight(l).data() : model.bias(l).data();
          const Matrix& g = which == 0 ? pass.params.weights[l].grad() : pass.params.biases[l].grad();
          for (Eigen::Index i = 0; i < g.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double up = loss_value(c, model, in.x, in);
            p[i] = saved - h;
            const double down = loss_value(c, model, in.x, in);
            p[i] = saved;
            compare(g.data()[i], (up - down) / (2 * h),
                    std::string(which == 0 ? "W" : "b") + std::to_string(l));
          }
        }
      }
    }
  }

  CheckResult r;
  r.name = "gradients";
  r.passed = worst < 1e-5;
  r.detail = std::to_string(instances) + " instances, " + std::to_string(compared) +
             " coordinates, max relative error " + fmt("%.3g", worst) + " at " + worst_where + " (" +
             std::to_string(redraws) + " draws near a ReLU kink replaced)";
  return finish(r, start);
}

CheckResult check_attack_contract(std::uint64_t seed, int draws) {
  const auto start = Clock::now();
  Rng rng(seed);
  double worst_excess = -std::numeric_limits<double>::infinity();
  int failures = 0;
  int zero_eps = 0;
  std::string first_failure;

  auto fail = [&](const std::string& what) {
    if (failures++ == 0) first_failure = what;
  };

  for (int d = 0; d < draws; ++d) {
    const int width = uniform_int(rng, 2, 8);
    const int classes = uniform_int(rng, 2, 5);
    const int batch = uniform_int(rng, 1, 6);
    const Mlp model = random_mlp(rng, width, classes, 2, 8);

    AttackConfig cfg;
    cfg.lower = uniform(rng, -1.0, 0.0);
    cfg.upper = cfg.lower + uniform(rng, 0.5, 2.0);
    cfg.epsilon = uniform(rng, 0.0, 1.0) < 0.2 ? 0.0 : uniform(rng, 1e-3, 0.5);
    cfg.step_size = uniform(rng, 1e-3, 0.3);
    cfg.steps = uniform_int(rng, 0, 20);
    cfg.random_start = uniform_int(rng, 0, 1) == 1;
    cfg.early_stop = uniform_int(rng, 0, 1) == 1;
    if (uniform(rng, 0.0, 1.0) < 0.3) cfg.calibration = random_matrix(rng, 1, classes, 0.0, 3.0);

    Matrix x = random_matrix(rng, batch, width, cfg.lower, cfg.upper);
    // Pin some coordinates to the box faces, where projection matters most.
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const int face = uniform_int(rng, 0, 9);
      if (face == 0) x.data()[i] = cfg.lower;
      if (face == 1) x.data()[i] = cfg.upper;
    }
    const std::vector<int> y = random_labels(rng, batch, classes);

    const int kind = d % 3;
    Matrix adv;
    std::optional<std::vector<int>> k;
    int n_steps = cfg.steps;
    const char* name = "pgd";
    if (kind == 0) {
      AttackResult res = pgd(model, x, y, cfg, rng);
      adv = std::move(res.adversarial);
      k = std::move(res.k);
    } else if (kind == 1) {
      name = "fgsm";
      adv = fgsm(model, x, y, cfg.epsilon, cfg.lower, cfg.upper);
      n_steps = 1;
    } else {
      name = "trades";
      cfg.loss = AttackLoss::KL;
      AttackResult res = trades_inner_max(model, x, y, cfg, rng);
      adv = std::move(res.adversarial);
      k = std::move(res.k);
    }
    const std::string tag = std::string(name) + " draw " + std::to_string(d);

    const double dist = (adv - x).cwiseAbs().maxCoeff();
    worst_excess = std::max(worst_excess, dist - cfg.epsilon);
    if (dist > cfg.epsilon + 1e-12) fail(tag + ": left the epsilon ball");
    if (adv.minCoeff() < cfg.lower || adv.maxCoeff() > cfg.upper) fail(tag + ": left the input box");
    if (cfg.epsilon == 0.0) {
      ++zero_eps;
      if (adv != x) fail(tag + ": epsilon 0 changed the input");
    }
    if (k) {
      if (k->size() != y.size()) fail(tag + ": k has the wrong length");
      for (int ki : *k) {
        if (ki < 0 || ki > n_steps) fail(tag + ": k = " + std::to_string(ki) + " outside [0, N]");
      }
    }
  }

  CheckResult r;
  r.name = "attack contract";
  r.passed = failures == 0;
  r.detail = std::to_string(draws) + " draws (" + std::to_string(zero_eps) + " with epsilon 0), max ||x_adv - x|| - eps = " +
             fmt("%.3g", worst_excess) + (failures ? ", first failure: " + first_failure : "");
  return finish(r, start);
}

CheckResult check_calibration_monotonicity(std::uint64_t seed, int draws) {
  const auto start = Clock::now();
  Rng rng(seed);
  int failures = 0;
  double worst_mask = 0.0;
  double worst_grad = 0.0;
  std::string first_failure;
  auto fail = [&](const std::string& what) {
    if (failures++ == 0) first_failure = what;
  };

  for (int d = 0; d < draws; ++d) {
    const int classes = uniform_int(rng, 2, 12);
    const Matrix z = random_matrix(rng, 1, classes, -5.0, 5.0);
    const RowVector v = random_matrix(rng, 1, classes, 0.0, 4.0);
    const int j = uniform_int(rng, 0, classes - 1);
    RowVector raised = v;
    raised(j) += uniform(rng, 0.05, 2.0);

    const Matrix p = ad::softmax_rows(apply_calibration(z, v));
    const Matrix q = ad::softmax_rows(apply_calibration(z, raised));
    if (!(q(0, j) < p(0, j))) fail("draw " + std::to_string(d) + ": raising v_j did not lower p_j");
    for (int i = 0; i < classes; ++i) {
      if (i != j && !(q(0, i) > p(0, i))) fail("draw " + std::to_string(d) + ": p_i did not rise");
    }

    // The calibrated CE gradient with respect to the logits is
    // softmax(z - v) - onehot(y).
    const int y = uniform_int(rng, 0, classes - 1);
    Var zl = Var::leaf(z, true);
    ad::backward(ad::softmax_cross_entropy(apply_calibration(zl, v), std::span<const int>(&y, 1)));
    RowVector expected(classes);
    double norm = 0.0;
    for (int i = 0; i < classes; ++i) norm += std::exp(z(0, i) - v(i));
    for (int i = 0; i < classes; ++i) expected(i) = std::exp(z(0, i) - v(i)) / norm - (i == y ? 1.0 : 0.0);
    worst_grad = std::max(worst_grad, (zl.grad() - expected).cwiseAbs().maxCoeff());

    // Masking limit: past heads pushed down by kMaskingOffset.
    const int per_task = uniform_int(rng, 1, 3);
    const int tasks = uniform_int(rng, 2, 5);
    const int total = per_task * tasks;
    const HeadPartition part = head_partition(uniform_int(rng, 1, tasks), per_task, total);
    const Matrix zm = random_matrix(rng, 1, total, -5.0, 5.0);
    const Matrix masked = ad::softmax_rows(apply_calibration(zm, masking_vector(part, DataOrigin::Current).v));
    double kept = 0.0;
    for (int c = part.current_begin(); c < total; ++c) kept += std::exp(zm(0, c));
    for (int c = 0; c < total; ++c) {
      const double oracle = c < part.current_begin() ? 0.0 : std::exp(zm(0, c)) / kept;
      worst_mask = std::max(worst_mask, std::abs(masked(0, c) - oracle));
    }
  }
  if (worst_mask > 1e-9) fail("masking limit differs by " + fmt("%.3g", worst_mask));
  if (worst_grad > 1e-12) fail("calibrated CE gradient differs by " + fmt("%.3g", worst_grad));

  CheckResult r;
  r.name = "calibration monotonicity";
  r.passed = failures == 0;
  r.detail = std::to_string(draws) + " draws, masking error " + fmt("%.3g", worst_mask) + ", logit gradient error " +
             fmt("%.3g", worst_grad) + (failures ? ", first failure: " + first_failure : "");
  return finish(r, start);
}

namespace {

// Direct-loop oracles, written independently of the library metrics.
std::optional<double> oracle_faa(const std::vector<std::vector<std::optional<double>>>& a) {
  const std::size_t t = a.size();
  double s = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (!a[t - 1][i]) return std::nullopt;
    s += *a[t - 1][i];
  }
  return s / static_cast<double>(t);
}

std::optional<double> oracle_forgetting(const std::vector<std::vector<std::optional<double>>>& a) {
  const std::size_t t = a.size();
  if (t < 2) return std::nullopt;
  double s = 0.0;
  for (std::size_t j = 0; j + 1 < t; ++j) {
    double best = -1.0;
    for (std::size_t l = j; l + 1 < t; ++l) {
      if (a[l][j] && *a[l][j] > best) best = *a[l][j];
    }
    if (best < 0.0 || !a[t - 1][j]) return std::nullopt;
    s += best - *a[t - 1][j];
  }
  return s / static_cast<double>(t - 1);
}

SettingMetrics table_entry(double faa_clean, double forgetting_clean) {
  SettingMetrics m;
  m.faa_clean = faa_clean;
  m.forgetting_clean = forgetting_clean;
  return m;
}

}  // namespace

CheckResult check_metric_oracle(std::uint64_t seed, int draws) {
  const auto start = Clock::now();
  Rng rng(seed);
  int failures = 0;
  int undefined = 0;
  double worst = 0.0;
  std::string first_failure;
  auto fail = [&](const std::string& what) {
    if (failures++ == 0) first_failure = what;
  };

  for (int d = 0; d < draws; ++d) {
    const int tasks = uniform_int(rng, 1, 8);
    const bool sparse = uniform_int(rng, 0, 4) == 0;
    std::vector<std::vector<std::optional<double>>> raw(tasks, std::vector<std::optional<double>>(tasks));
    AccuracyMatrix a(tasks);
    for (int r = 0; r < tasks; ++r) {
      for (int c = 0; c <= r; ++c) {
        if (sparse && r + 1 < tasks && uniform_int(rng, 0, 2) == 0) continue;
        double v = uniform(rng, 0.0, 100.0);
        if (uniform_int(rng, 0, 1)) v = std::round(v * 100.0) / 100.0;
        raw[r][c] = v;
        a.set(r, c, v);
      }
    }
    const double f_lib = faa(a);
    const double f_ref = *oracle_faa(raw);
    worst = std::max(worst, std::abs(f_lib - f_ref));
    if (std::abs(f_lib - f_ref) > 1e-12) fail("faa mismatch in draw " + std::to_string(d));

    const std::optional<double> g_ref = oracle_forgetting(raw);
    std::optional<double> g_lib;
    try {
      g_lib = forgetting(a);
    } catch (const UsageError&) {
    }
    if (g_ref.has_value() != g_lib.has_value()) {
      fail("forgetting definedness differs in draw " + std::to_string(d));
    } else if (g_ref) {
      worst = std::max(worst, std::abs(*g_lib - *g_ref));
      if (std::abs(*g_lib - *g_ref) > 1e-12) fail("forgetting mismatch in draw " + std::to_string(d));
    } else {
      ++undefined;
    }
  }

  // Published ER rows at buffer 200: standard and adversarially trained.
  MetricReport er_std, er_at;
  er_std.class_il = table_entry(48.80, 60.00);
  er_std.task_il = table_entry(92.89, 5.00);
  er_at.class_il = table_entry(28.18, 80.58);
  er_at.task_il = table_entry(84.49, 10.23);
  const DerivedMetrics dm = derived_metrics({&er_std, &er_at, nullptr, nullptr});
  const double crd = std::round(dm.crd * 100.0) / 100.0;
  // 12.905 is not representable; round half up at the second decimal.
  const double fri = std::floor(dm.fri * 100.0 + 0.5 + 1e-9) / 100.0;
  if (crd != 14.51) fail("CRD = " + fmt("%.4f", dm.crd) + ", expected 14.51");
  if (fri != 12.91) fail("FRI = " + fmt("%.4f", dm.fri) + ", expected 12.91");

  CheckResult r;
  r.name = "metric oracle";
  r.passed = failures == 0;
  r.detail = std::to_string(draws) + " matrices (" + std::to_string(undefined) +
             " with undefined forgetting), max deviation " + fmt("%.3g", worst) + "; CRD " + fmt("%.2f", crd) +
             ", FRI " + fmt("%.2f", fri) + (failures ? "; first failure: " + first_failure : "");
  return finish(r, start);
}

CheckResult check_raer_invariant(std::uint64_t seed) {
  const auto start = Clock::now();
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.num_tasks = 2;
  spec.input_dim = 8;
  spec.per_class_train = 60;
  spec.per_class_test = 20;
  spec.spread = 0.15;
  spec.seed = seed;
  const TaskStream stream = make_synthetic_stream(spec);

  TrainConfig cfg;
  cfg.epochs_per_task = 3;
  cfg.buffer_size = 30;
  cfg.hidden_layers = {16};
  cfg.seed = seed;
  EvalConfig eval;
  eval.robust = false;

  StrategyConfig raer;
  raer.defense = Defense::AT;
  raer.raer.enabled = true;
  raer.raer.rho = 3;

  int epochs = 0;
  int violations = 0;
  std::size_t entries_seen = 0;
  std::size_t min_fill = cfg.buffer_size;
  const RunResult strict = run_stream(stream, raer, cfg, eval, [&](const EpochLog&, const Buffer& b) {
    ++epochs;
    entries_seen += b.size();
    min_fill = std::min(min_fill, b.size());
    for (const BufferEntry& e : b.entries()) violations += e.k >= raer.raer.rho ? 1 : 0;
  });

  // rho above the attack length admits everything: identical to reservoir.
  StrategyConfig loose = raer;
  loose.raer.rho = cfg.attack.steps + 1;
  StrategyConfig plain = raer;
  plain.raer.enabled = false;
  const RunResult a = run_stream(stream, loose, cfg, eval);
  const RunResult b = run_stream(stream, plain, cfg, eval);
  bool same = a.checkpoints == b.checkpoints && a.accuracy == b.accuracy &&
              a.buffer.seen_eligible() == b.buffer.seen_eligible() && a.buffer.size() == b.buffer.size();
  for (std::size_t i = 0; same && i < a.buffer.size(); ++i) {
    const BufferEntry& ea = a.buffer.entries()[i];
    const BufferEntry& eb = b.buffer.entries()[i];
    same = ea.x == eb.x && ea.y == eb.y && ea.k == eb.k && ea.task_id == eb.task_id;
  }

  // The threshold has to bite for the invariant to say anything.
  std::size_t offered = 0;
  for (const Dataset& t : stream.train) offered += t.size() * static_cast<std::size_t>(cfg.epochs_per_task);
  const std::size_t rejected = offered - strict.buffer.seen_eligible();

  CheckResult r;
  r.name = "raer invariant";
  r.passed = violations == 0 && same && epochs == cfg.epochs_per_task * stream.num_tasks() && entries_seen > 0 &&
             rejected > 0;
  r.detail = std::to_string(epochs) + " epochs, " + std::to_string(rejected) + "/" + std::to_string(offered) +
             " candidates rejected, " + std::to_string(entries_seen) + " entry checks, " +
             std::to_string(violations) + " with k >= rho; rho > N " +
             (same ? "matches reservoir bitwise" : "DIFFERS from reservoir");
  return finish(r, start);
}

std::vector<CheckResult> run_property_checks(std::uint64_t seed) {
  using Suite = CheckResult (*)(std::uint64_t);
  const std::pair<const char*, Suite> suites[] = {
      {"gradients", [](std::uint64_t s) { return check_gradients(s); }},
      {"attack contract", [](std::uint64_t s) { return check_attack_contract(s); }},
      {"calibration monotonicity", [](std::uint64_t s) { return check_calibration_monotonicity(s); }},
      {"metric oracle", [](std::uint64_t s) { return check_metric_oracle(s); }},
      {"raer invariant", check_raer_invariant},
  };
  std::vector<CheckResult> out;
  for (std::uint64_t i = 0; i < std::size(suites); ++i) {
    try {
      out.push_back(suites[i].second(seed + i));
    } catch (const std::exception& e) {
      out.push_back({suites[i].first, false, std::string("threw: ") + e.what(), 0.0});
    }
  }
  return out;
}

}  // namespace arcl
