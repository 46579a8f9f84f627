#include "arcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "arcl/errors.hpp"

namespace arcl {

const char* to_string(Replay r) {
  switch (r) {
    case Replay::None: return "none";
    case Replay::ER: return "er";
    case Replay::DER: return "der";
    case Replay::DERpp: return "derpp";
  }
  return "?";
}

const char* to_string(Defense d) {
  switch (d) {
    case Defense::None: return "none";
    case Defense::AT: return "at";
    case Defense::TRADES: return "trades";
    case Defense::FAT: return "fat";
  }
  return "?";
}

Replay parse_replay(const std::string& s) {
  if (s == "none" || s == "sgd") return Replay::None;
  if (s == "er") return Replay::ER;
  if (s == "der") return Replay::DER;
  if (s == "derpp") return Replay::DERpp;
  throw ConfigError("replay: expected one of none|er|der|derpp, got '" + s + "'");
}

Defense parse_defense(const std::string& s) {
  if (s == "none") return Defense::None;
  if (s == "at") return Defense::AT;
  if (s == "trades") return Defense::TRADES;
  if (s == "fat") return Defense::FAT;
  throw ConfigError("defense: expected one of none|at|trades|fat, got '" + s + "'");
}

void StrategyConfig::validate() const {
  if (derpp_beta.has_value() != (replay == Replay::DERpp)) {
    throw ConfigError("strategy: derpp_beta is required exactly when replay = derpp");
  }
  if (masking && aflc.enabled) throw ConfigError("strategy: masking and aflc are mutually exclusive");
  if (raer.enabled && raer.rho < 0) throw ConfigError("strategy: rho must be >= 0");
  if (!(der_alpha >= 0.0) || !(trades_beta >= 0.0) || (derpp_beta && !(*derpp_beta >= 0.0))) {
    throw ConfigError("strategy: loss weights must be >= 0");
  }
  if (!std::isfinite(aflc.alpha)) throw ConfigError("strategy: alpha must be finite");
}

void TrainConfig::validate() const {
  if (epochs_per_task <= 0) throw ConfigError("train: epochs_per_task must be positive");
  if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  for (int h : hidden_layers) {
    if (h <= 0) throw ConfigError("train: hidden layer sizes must be positive");
  }
  attack.validate();
}

std::string EpochLog::to_line() const {
  std::ostringstream out;
  out.precision(10);
  out << "task=" << task << " epoch=" << epoch << " loss=" << loss << " buffer=" << buffer_fill
      << " mean_k=" << mean_k;
  return out.str();
}

Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> salt) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (std::uint64_t s : salt) {
    words.push_back(static_cast<std::uint32_t>(s));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

namespace {

Var calibrated(const Var& z, const RowVector& v) { return apply_calibration(z, v); }

Var logits_of(const Parameters& params, const Matrix& x) { return forward(params, Var::constant(x)); }

}  // namespace

Var compose_loss(const StrategyConfig& strategy, const Parameters& params, const LossInputs& in) {
  const int classes = static_cast<int>(params.weights.back().cols());
  RowVector v_current = in.v.size() ? in.v : RowVector::Zero(classes);
  RowVector v_replay = v_current;
  if (strategy.masking) {
    v_current = masking_vector(in.partition, DataOrigin::Current).v;
    v_replay = RowVector::Zero(classes);
  }

  auto defense_term = [&](const LossBatch& b, const RowVector& v) -> Var {
    auto need_adversarial = [&] {
      if (b.adversarial.rows() != b.clean.rows()) {
        throw ConfigError(std::string("compose_loss: defense ") + to_string(strategy.defense) +
                          " needs adversarial inputs for every example");
      }
    };
    switch (strategy.defense) {
      case Defense::None:
        return ad::softmax_cross_entropy(calibrated(logits_of(params, b.clean), v), b.labels);
      case Defense::AT:
      case Defense::FAT:
        need_adversarial();
        return ad::softmax_cross_entropy(calibrated(logits_of(params, b.adversarial), v), b.labels);
      case Defense::TRADES: {
        const Var clean = calibrated(logits_of(params, b.clean), v);
        Var loss = ad::softmax_cross_entropy(clean, b.labels);
        if (strategy.trades_beta == 0.0) return loss;
        need_adversarial();
        const Var adv = calibrated(logits_of(params, b.adversarial), v);
        return loss + strategy.trades_beta * ad::kl_divergence(clean, adv);
      }
    }
    throw ConfigError("compose_loss: unknown defense");
  };

  Var loss = defense_term(in.current, v_current);
  if (strategy.replay == Replay::None || in.replay.empty()) return loss;

  loss = loss + defense_term(in.replay, v_replay);
  if (strategy.replay == Replay::DER || strategy.replay == Replay::DERpp) {
    if (in.replay.stored_logits.rows() != static_cast<Eigen::Index>(in.replay.labels.size()) ||
        in.replay.stored_logits.cols() != classes) {
      throw ConfigError("compose_loss: der replay requires stored logits for every replayed example");
    }
    loss = loss + strategy.der_alpha * ad::mse(logits_of(params, in.replay.clean), in.replay.stored_logits);
  }
  if (strategy.replay == Replay::DERpp && !in.replay_labels.empty()) {
    const Var z = calibrated(logits_of(params, in.replay_labels.clean), v_replay);
    loss = loss + strategy.derpp_beta.value_or(0.0) * ad::softmax_cross_entropy(z, in.replay_labels.labels);
  }
  return loss;
}

namespace {

LossBatch batch_from_entries(const std::vector<BufferEntry>& entries, int width, int classes,
                             bool want_logits) {
  LossBatch b;
  b.clean.resize(static_cast<Eigen::Index>(entries.size()), width);
  if (want_logits) b.stored_logits.resize(static_cast<Eigen::Index>(entries.size()), classes);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    b.clean.row(r) = entries[i].x;
    b.labels.push_back(entries[i].y);
    if (want_logits) {
      if (!entries[i].logits) throw ConfigError("train: der replay entry without stored logits");
      b.stored_logits.row(r) = *entries[i].logits;
    }
  }
  return b;
}

Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  if (bottom.rows() > 0) out.bottomRows(bottom.rows()) = bottom;
  return out;
}

}  // namespace

void train_task(RunState& state, const Dataset& task_data, const StrategyConfig& strategy,
                const TrainConfig& cfg, int task, int classes_per_task, const EpochSink& sink) {
  strategy.validate();
  cfg.validate();
  Mlp& model = state.model;
  const int classes = model.num_classes();
  const HeadPartition partition = head_partition(task, classes_per_task, classes);
  for (int y : task_data.labels) {
    if (y < partition.current_begin() || y >= partition.current_end()) {
      throw ConfigError("train_task: label " + std::to_string(y) + " is not a class of task " +
                        std::to_string(task));
    }
  }
  if (task_data.size() == 0) throw ConfigError("train_task: empty task dataset");

  const bool replaying = strategy.replay != Replay::None;
  const bool store_logits = strategy.replay == Replay::DER || strategy.replay == Replay::DERpp;
  const bool needs_attack = strategy.defense != Defense::None || strategy.raer.enabled;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  std::vector<std::size_t> order(task_data.size());
  for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
    RowVector v = RowVector::Zero(classes);
    if (strategy.aflc.enabled) {
      state.calibration = aflc_vector(class_counts(state.buffer, task_data, classes), strategy.aflc.alpha,
                                      partition, strategy.aflc.further_prior);
      for (int c : state.calibration.zero_count_classes) {
        state.diagnostics.warnings.push_back("task " + std::to_string(task) + " epoch " +
                                             std::to_string(epoch) + ": class " + std::to_string(c) +
                                             " has no samples; using the largest offset");
      }
      v = state.calibration.v;
    } else {
      state.calibration = CalibrationVector::zeros(classes);
      state.calibration.task = task;
    }

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng);

    double loss_total = 0.0;
    std::size_t batches = 0;
    double k_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(std::min(start + batch, order.size())));
      const Dataset current = task_data.subset(rows);

      LossInputs in;
      in.partition = partition;
      in.v = v;
      in.current.clean = current.inputs;
      in.current.labels = current.labels;
      if (replaying) {
        in.replay = batch_from_entries(sample_batch(state.buffer, batch, state.rng), task_data.width(), classes,
                                       store_logits);
        if (strategy.replay == Replay::DERpp) {
          in.replay_labels = batch_from_entries(sample_batch(state.buffer, batch, state.rng), task_data.width(),
                                                classes, false);
        }
      }

      // Adversarial examples for [current; replay], tracking k per example.
      std::vector<int> k(current.size(), 0);
      if (needs_attack) {
        const Matrix x_all = stack_rows(in.current.clean, in.replay.clean);
        std::vector<int> y_all = in.current.labels;
        y_all.insert(y_all.end(), in.replay.labels.begin(), in.replay.labels.end());

        AttackConfig attack = cfg.attack;
        if (strategy.aflc.enabled) attack.calibration = v;
        AttackResult adv;
        if (strategy.defense == Defense::TRADES) {
          attack.loss = AttackLoss::KL;
          adv = trades_inner_max(model, x_all, y_all, attack, state.rng);
        } else {
          attack.early_stop = strategy.defense == Defense::FAT;
          adv = pgd(model, x_all, y_all, attack, state.rng);
        }
        const auto n_cur = static_cast<Eigen::Index>(current.size());
        in.current.adversarial = adv.adversarial.topRows(n_cur);
        in.replay.adversarial = adv.adversarial.bottomRows(adv.adversarial.rows() - n_cur);
        std::copy(adv.k.begin(), adv.k.begin() + n_cur, k.begin());

        if (start == 0 && strategy.defense != Defense::None) {
          const auto [clean_norm, adv_norm] = head_gradient_norms(model, in.current.clean, in.current.labels,
                                                                  in.current.adversarial, in.current.labels);
          state.diagnostics.head_norms.push_back({task, epoch, clean_norm, adv_norm});
        }
      }

      Parameters params = parameter_leaves(model, true);
      const Var loss = compose_loss(strategy, params, in);
      if (!std::isfinite(loss.item())) {
        throw std::runtime_error("train_task: non-finite loss at task " + std::to_string(task) + " epoch " +
                                 std::to_string(epoch));
      }
      ad::backward(loss);
      sgd_step(model, params, cfg.learning_rate);
      loss_total += loss.item();
      ++batches;

      if (replaying) {
        Matrix stored;
        if (store_logits) stored = logits(model, current.inputs);
        for (std::size_t i = 0; i < current.size(); ++i) {
          BufferEntry entry;
          entry.x = current.inputs.row(static_cast<Eigen::Index>(i));
          entry.y = current.labels[i];
          if (store_logits) entry.logits = stored.row(static_cast<Eigen::Index>(i));
          entry.k = k[i];
          entry.task_id = task;
          if (strategy.raer.enabled) raer_insert(state.buffer, std::move(entry), strategy.raer.rho, state.rng);
          else reservoir_insert(state.buffer, std::move(entry), state.rng);
        }
      }
      for (int ki : k) k_total += ki;
    }

    EpochLog log{task, epoch, loss_total / static_cast<double>(batches), state.buffer.size(),
                 k_total / static_cast<double>(task_data.size())};
    state.diagnostics.epochs.push_back(log);
    if (sink) sink(log, state.buffer);
  }
}

void evaluate_stage(const Mlp& model, const TaskStream& stream, int stage, const EvalConfig& eval,
                    const std::optional<RowVector>& calibration, std::uint64_t seed, AccuracyMatrices& out) {
  for (int i = 0; i <= stage; ++i) {
    const Dataset& test = stream.test[static_cast<std::size_t>(i)];
    const HeadPartition part = head_partition(i + 1, stream.classes_per_task, stream.num_classes);
    for (Setting s : kSettings) {
      out.get(DataKind::Clean, s).set(stage, i, accuracy(model, test.inputs, test.labels, s, &part));
    }
    if (!eval.robust) continue;
    AttackConfig attack = eval.attack;
    if (eval.adaptive && calibration) attack.calibration = *calibration;
    Rng rng = derive_rng(seed, {0xE7A1u, static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(i)});
    const Matrix adv = pgd(model, test.inputs, test.labels, attack, rng).adversarial;
    for (Setting s : kSettings) {
      out.get(DataKind::Adversarial, s).set(stage, i, accuracy(model, adv, test.labels, s, &part));
    }
  }
}

namespace {

RunState initial_state(const TaskStream& stream, const StrategyConfig& strategy, const TrainConfig& cfg) {
  strategy.validate();
  cfg.validate();
  std::vector<int> sizes{stream.input_width()};
  sizes.insert(sizes.end(), cfg.hidden_layers.begin(), cfg.hidden_layers.end());
  sizes.push_back(stream.num_classes);
  RunState state{Mlp::init(sizes, cfg.seed),
                 Buffer(strategy.replay == Replay::None ? 0 : cfg.buffer_size),
                 derive_rng(cfg.seed, {0x7A1Au}), CalibrationVector::zeros(stream.num_classes), {}};
  return state;
}

void check_stream(const TaskStream& stream) {
  if (stream.num_tasks() == 0 || stream.test.size() != stream.train.size()) {
    throw ConfigError("run_stream: stream needs matching train and test splits");
  }
  if (stream.classes_per_task * stream.num_tasks() != stream.num_classes) {
    throw ConfigError("run_stream: tasks do not partition the classes");
  }
}

}  // namespace

RunResult run_stream(const TaskStream& stream, const StrategyConfig& strategy, const TrainConfig& cfg,
                     const EvalConfig& eval, const EpochSink& sink) {
  check_stream(stream);
  RunState state = initial_state(stream, strategy, cfg);
  RunResult result;
  result.accuracy = AccuracyMatrices(stream.num_tasks());
  for (int t = 1; t <= stream.num_tasks(); ++t) {
    train_task(state, stream.train[static_cast<std::size_t>(t - 1)], strategy, cfg, t, stream.classes_per_task,
               sink);
    result.checkpoints.push_back(state.model);
    evaluate_stage(state.model, stream, t - 1, eval, state.calibration.v, cfg.seed, result.accuracy);
  }
  result.final_calibration = state.calibration;
  result.diagnostics = std::move(state.diagnostics);
  result.buffer = std::move(state.buffer);
  return result;
}

RunResult run_joint(const TaskStream& stream, const StrategyConfig& strategy, const TrainConfig& cfg,
                    const EvalConfig& eval, const EpochSink& sink) {
  check_stream(stream);
  StrategyConfig joint_strategy = strategy;
  joint_strategy.replay = Replay::None;
  joint_strategy.derpp_beta.reset();
  joint_strategy.raer.enabled = false;
  joint_strategy.masking = false;

  const TaskStream joint = joint_stream(stream);
  RunState state = initial_state(joint, joint_strategy, cfg);
  train_task(state, joint.train.front(), joint_strategy, cfg, 1, joint.classes_per_task, sink);

  RunResult result;
  result.accuracy = AccuracyMatrices(stream.num_tasks());
  result.checkpoints.push_back(state.model);
  evaluate_stage(state.model, stream, stream.num_tasks() - 1, eval, state.calibration.v, cfg.seed,
                 result.accuracy);
  result.final_calibration = state.calibration;
  result.diagnostics = std::move(state.diagnostics);
  result.buffer = std::move(state.buffer);
  return result;
}

}  // namespace arcl
