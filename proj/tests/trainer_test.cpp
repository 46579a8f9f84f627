#include <algorithm>
#include <cmath>
#include <numeric>

#include <doctest.h>

#include "arcl/errors.hpp"
#include "arcl/trainer.hpp"
#include "helpers.hpp"

using namespace arcl;

namespace {

TaskStream small_stream(std::uint64_t seed, int per_class = 40) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.per_class_train = per_class;
  spec.per_class_test = 20;
  return make_synthetic_stream(spec);
}

TrainConfig quick(std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.epochs_per_task = 2;
  cfg.seed = seed;
  cfg.buffer_size = 30;
  return cfg;
}

EvalConfig clean_only() {
  EvalConfig e;
  e.robust = false;
  return e;
}

StrategyConfig strategy(Replay r, Defense d) {
  StrategyConfig s;
  s.replay = r;
  s.defense = d;
  if (r == Replay::DERpp) s.derpp_beta = 0.5;
  return s;
}

LossInputs inputs_for(const Matrix& x, const std::vector<int>& y, int classes) {
  LossInputs in;
  in.current.clean = x;
  in.current.adversarial = x;
  in.current.labels = y;
  in.partition = head_partition(1, 2, classes);
  in.v = RowVector::Zero(classes);
  return in;
}

double ce(const Mlp& m, const Matrix& x, const std::vector<int>& y) {
  return ad::softmax_cross_entropy(Var::constant(logits(m, x)), y).item();
}

// One step of minibatch SGD on mean cross-entropy for a one-hidden-layer ReLU
// network, with the backward pass written out by hand.
void manual_step(Mlp& m, const Matrix& x, const std::vector<int>& y, double lr) {
  const Matrix pre = (x * m.weight(0)).rowwise() + m.bias(0);
  const Matrix h = pre.cwiseMax(0.0);
  const Matrix z = (h * m.weight(1)).rowwise() + m.bias(1);
  Matrix dz = ad::softmax_rows(z);
  for (Eigen::Index r = 0; r < dz.rows(); ++r) dz(r, y[static_cast<std::size_t>(r)]) -= 1.0;
  dz /= static_cast<double>(x.rows());
  const Matrix dw1 = h.transpose() * dz;
  const RowVector db1 = dz.colwise().sum();
  const Matrix dh = (dz * m.weight(1).transpose()).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
  const Matrix dw0 = x.transpose() * dh;
  const RowVector db0 = dh.colwise().sum();
  m.weight(0) -= lr * dw0;
  m.bias(0) -= lr * db0;
  m.weight(1) -= lr * dw1;
  m.bias(1) -= lr * db1;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("at with an empty replay batch is cross-entropy on the adversarial batch") {
  Rng rng(1);
  const Mlp m = Mlp::init({4, 6, 4}, 2);
  const Matrix x = testing::uniform(rng, 5, 4, 0, 1);
  const Matrix xa = testing::uniform(rng, 5, 4, 0, 1);
  const std::vector<int> y{0, 1, 1, 0, 1};
  LossInputs in = inputs_for(x, y, 4);
  in.current.adversarial = xa;
  const double loss = compose_loss(strategy(Replay::ER, Defense::AT), parameter_leaves(m, false), in).item();
  CHECK(loss == doctest::Approx(ce(m, xa, y)).epsilon(1e-14));
}

TEST_CASE("trades with beta zero is clean cross-entropy") {
  Rng rng(2);
  const Mlp m = Mlp::init({4, 6, 4}, 3);
  const Matrix x = testing::uniform(rng, 5, 4, 0, 1);
  const std::vector<int> y{0, 1, 1, 0, 1};
  LossInputs in = inputs_for(x, y, 4);
  in.current.adversarial = testing::uniform(rng, 5, 4, 0, 1);
  StrategyConfig s = strategy(Replay::None, Defense::TRADES);
  s.trades_beta = 0.0;
  CHECK(compose_loss(s, parameter_leaves(m, false), in).item() == doctest::Approx(ce(m, x, y)).epsilon(1e-14));
}

TEST_CASE("der distillation vanishes when stored logits match the model") {
  Rng rng(3);
  const Mlp m = Mlp::init({4, 6, 4}, 4);
  const Matrix x = testing::uniform(rng, 5, 4, 0, 1);
  const std::vector<int> y{0, 1, 1, 0, 1};
  LossInputs in = inputs_for(x, y, 4);
  in.replay.clean = testing::uniform(rng, 3, 4, 0, 1);
  in.replay.labels = {0, 0, 1};
  in.replay.stored_logits = logits(m, in.replay.clean);
  const double der = compose_loss(strategy(Replay::DER, Defense::None), parameter_leaves(m, false), in).item();
  const double er = compose_loss(strategy(Replay::ER, Defense::None), parameter_leaves(m, false), in).item();
  CHECK(der == doctest::Approx(er).epsilon(1e-14));
  CHECK(er == doctest::Approx(ce(m, x, y) + ce(m, in.replay.clean, in.replay.labels)).epsilon(1e-14));

  in.replay.stored_logits.resize(0, 0);
  CHECK_THROWS_AS(compose_loss(strategy(Replay::DER, Defense::None), parameter_leaves(m, false), in), ConfigError);
}

TEST_CASE("one plain task matches a hand-written minibatch SGD loop") {
  SyntheticSpec spec;
  spec.num_tasks = 1;
  spec.num_classes = 3;
  spec.per_class_train = 30;
  spec.per_class_test = 10;
  spec.input_dim = 5;
  spec.seed = 9;
  const TaskStream stream = make_synthetic_stream(spec);
  TrainConfig cfg;
  cfg.epochs_per_task = 3;
  cfg.batch_size = 16;
  cfg.hidden_layers = {7};
  cfg.seed = 11;
  const RunResult r = run_stream(stream, strategy(Replay::None, Defense::None), cfg, clean_only());

  Mlp oracle = Mlp::init({5, 7, 3}, cfg.seed);
  Rng rng = derive_rng(cfg.seed, {0x7A1Au});
  const Dataset& data = stream.train.front();
  std::vector<std::size_t> order(data.size());
  for (int e = 0; e < cfg.epochs_per_task; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += 16) {
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(s),
                                          order.begin() + static_cast<std::ptrdiff_t>(std::min(s + 16, order.size())));
      const Dataset b = data.subset(rows);
      manual_step(oracle, b.inputs, b.labels, cfg.learning_rate);
    }
  }
  const Mlp& got = r.checkpoints.back();
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK((got.weight(l) - oracle.weight(l)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((got.bias(l) - oracle.bias(l)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("runs are deterministic and the accuracy matrix fills causally") {
  const TaskStream stream = small_stream(3);
  EvalConfig eval;
  eval.attack = pgd_config(3);
  StrategyConfig s = strategy(Replay::DERpp, Defense::AT);
  s.aflc.enabled = true;
  s.raer.enabled = true;
  const RunResult a = run_stream(stream, s, quick(5), eval);
  const RunResult b = run_stream(stream, s, quick(5), eval);
  CHECK(a.accuracy == b.accuracy);
  REQUIRE(a.checkpoints.size() == 5u);
  for (std::size_t t = 0; t < 5; ++t) CHECK(a.checkpoints[t] == b.checkpoints[t]);

  for (DataKind kind : kDataKinds) {
    for (Setting setting : kSettings) {
      const AccuracyMatrix& m = a.accuracy.get(kind, setting);
      for (int t = 0; t < 5; ++t) {
        CHECK(m.row_complete(t));
        for (int i = t + 1; i < 5; ++i) CHECK_FALSE(m.at(t, i).has_value());
      }
    }
  }
}

TEST_CASE("raer never buffers an example whose attack succeeded rho or more times") {
  const TaskStream stream = small_stream(4);
  StrategyConfig s = strategy(Replay::ER, Defense::AT);
  s.raer.enabled = true;
  s.raer.rho = 3;
  int epochs = 0;
  run_stream(stream, s, quick(1), clean_only(), [&](const EpochLog&, const Buffer& buffer) {
    ++epochs;
    for (const BufferEntry& e : buffer.entries()) CHECK(e.k < 3);
  });
  CHECK(epochs == 10);
}

TEST_CASE("fine-tuning without replay forgets the first task") {
  const TaskStream stream = make_synthetic_stream({});
  const RunResult r = run_stream(stream, strategy(Replay::None, Defense::None), TrainConfig{}, clean_only());
  const AccuracyMatrix& m = r.accuracy.get(DataKind::Clean, Setting::ClassIncremental);
  CHECK(*m.at(0, 0) > 90.0);
  CHECK(*m.at(4, 0) < 15.0);
}

TEST_CASE("calibration shrinks the gradient reaching past heads") {
  Rng rng(12);
  const Mlp m = Mlp::init({4, 6, 6}, 7);
  const Matrix x = testing::uniform(rng, 8, 4, 0, 1);
  const std::vector<int> y{4, 5, 4, 5, 4, 5, 4, 5};
  LossInputs in = inputs_for(x, y, 6);
  in.partition = head_partition(3, 2, 6);
  auto past_grad = [&](const RowVector& v) {
    in.v = v;
    Parameters p = parameter_leaves(m, true);
    ad::backward(compose_loss(strategy(Replay::ER, Defense::None), p, in));
    return p.weights.back().grad().leftCols(4).norm();
  };
  const double plain = past_grad(RowVector::Zero(6));
  const double calibrated = past_grad(testing::row({2, 2, 2, 2, 0, 0}));
  CHECK(calibrated < plain);
}

TEST_CASE("adversarial batches carry larger head gradients at task switches") {
  int larger = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TaskStream stream = make_synthetic_stream({.seed = 1000 + seed});
    TrainConfig cfg;
    cfg.seed = seed;
    const RunResult r = run_stream(stream, strategy(Replay::ER, Defense::AT), cfg, clean_only());
    for (const HeadNormRecord& h : r.diagnostics.head_norms) {
      if (h.task < 2 || h.epoch != 0) continue;
      ++total;
      larger += h.adversarial > h.clean ? 1 : 0;
    }
  }
  MESSAGE(larger << " of " << total << " task-switch epochs");
  REQUIRE(total == 20);
  CHECK(larger >= 16);
}

TEST_CASE("joint training sees every class at once") {
  const TaskStream stream = small_stream(6);
  const RunResult r = run_joint(stream, strategy(Replay::ER, Defense::AT), quick(), clean_only());
  REQUIRE(r.checkpoints.size() == 1u);
  CHECK(r.buffer.empty());
  CHECK(r.accuracy.get(DataKind::Clean, Setting::ClassIncremental).row_complete(4));
  CHECK_FALSE(r.accuracy.get(DataKind::Clean, Setting::ClassIncremental).at(0, 0).has_value());
  for (const EpochLog& e : r.diagnostics.epochs) CHECK(std::isfinite(e.loss));
}

TEST_CASE("invalid settings are rejected") {
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  StrategyConfig s;
  s.raer.enabled = true;
  s.raer.rho = -1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK_THROWS_AS(parse_replay("replay-all"), ConfigError);
}

}
