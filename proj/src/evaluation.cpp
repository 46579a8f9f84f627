#include "arcl/evaluation.hpp"

#include <cmath>
#include <string>

#include "arcl/errors.hpp"

namespace arcl {

std::size_t AccuracyMatrix::index(int row, int col) const {
  if (row < 0 || row >= tasks_ || col < 0 || col >= tasks_) {
    throw UsageError("AccuracyMatrix: cell (" + std::to_string(row) + ", " + std::to_string(col) +
                     ") outside a " + std::to_string(tasks_) + "x" + std::to_string(tasks_) + " matrix");
  }
  return static_cast<std::size_t>(row) * static_cast<std::size_t>(tasks_) + static_cast<std::size_t>(col);
}

void AccuracyMatrix::set(int row, int col, double value) {
  if (col > row) throw UsageError("AccuracyMatrix: task " + std::to_string(col) + " not trained by stage " +
                                  std::to_string(row));
  if (!(value >= 0.0 && value <= 100.0)) throw InputError("AccuracyMatrix: accuracy outside [0, 100]");
  cells_[index(row, col)] = value;
}

bool AccuracyMatrix::row_complete(int row) const {
  for (int i = 0; i <= row; ++i) {
    if (!at(row, i)) return false;
  }
  return true;
}

double faa(const AccuracyMatrix& a) {
  if (a.tasks() == 0 || !a.row_complete(a.tasks() - 1)) {
    throw UsageError("faa: final row of the accuracy matrix is incomplete");
  }
  const int last = a.tasks() - 1;
  double total = 0.0;
  for (int i = 0; i <= last; ++i) total += *a.at(last, i);
  return total / a.tasks();
}

double forgetting(const AccuracyMatrix& a) {
  const int tasks = a.tasks();
  if (tasks < 2) throw UsageError("forgetting: undefined for fewer than 2 tasks");
  const int last = tasks - 1;
  double total = 0.0;
  for (int j = 0; j < last; ++j) {
    std::optional<double> best;
    for (int l = j; l < last; ++l) {
      if (const auto& cell = a.at(l, j); cell && (!best || *cell > *best)) best = cell;
    }
    const auto& final_acc = a.at(last, j);
    if (!best || !final_acc) {
      throw UsageError("forgetting: no history for task " + std::to_string(j));
    }
    total += *best - *final_acc;
  }
  return total / (tasks - 1);
}

const char* to_string(DataKind k) { return k == DataKind::Clean ? "clean" : "adversarial"; }

MetricReport metric_report(const AccuracyMatrices& a) {
  MetricReport r;
  auto maybe_forgetting = [](const AccuracyMatrix& m) -> std::optional<double> {
    try {
      return forgetting(m);
    } catch (const UsageError&) {
      return std::nullopt;
    }
  };
  for (Setting s : kSettings) {
    SettingMetrics& out = r.at(s);
    out.faa_clean = faa(a.get(DataKind::Clean, s));
    out.faa_adv = faa(a.get(DataKind::Adversarial, s));
    out.forgetting_clean = maybe_forgetting(a.get(DataKind::Clean, s));
    out.forgetting_adv = maybe_forgetting(a.get(DataKind::Adversarial, s));
  }
  return r;
}

DerivedMetrics derived_metrics(const DerivedInputs& runs, bool require_rrd) {
  if (!runs.continual_std || !runs.continual_adv) {
    throw UsageError("derived_metrics: missing standard or adversarial continual run");
  }
  const bool have_joint = runs.joint_std && runs.joint_adv;
  if (require_rrd && !have_joint) throw UsageError("derived_metrics: missing joint baseline");

  DerivedMetrics d;
  double rrd = 0.0;
  for (Setting s : kSettings) {
    const SettingMetrics& cl = runs.continual_std->at(s);
    const SettingMetrics& arcl = runs.continual_adv->at(s);
    d.crd += (cl.faa_clean - arcl.faa_clean) / 2.0;
    if (!cl.forgetting_clean || !arcl.forgetting_clean) {
      throw UsageError("derived_metrics: clean forgetting undefined for a continual run");
    }
    d.fri += (*arcl.forgetting_clean - *cl.forgetting_clean) / 2.0;
    if (have_joint) {
      const double joint_gain = runs.joint_adv->at(s).faa_adv - runs.joint_std->at(s).faa_adv;
      rrd += (joint_gain - (arcl.faa_adv - cl.faa_adv)) / 2.0;
    }
  }
  if (have_joint) d.rrd = rrd;
  return d;
}

double accuracy(const Mlp& model, const Matrix& inputs, std::span<const int> labels, Setting setting,
                const HeadPartition* partition) {
  if (labels.empty()) throw UsageError("accuracy: empty evaluation set");
  const std::vector<int> pred = predict(model, inputs, setting, partition);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

namespace {

Matrix input_gradients(const Mlp& model, const Matrix& inputs, std::span<const int> labels) {
  ForwardPass pass = forward(model, inputs, {.parameters = false, .input = true});
  ad::backward(ad::softmax_cross_entropy(pass.logits, labels));
  return pass.input.grad();
}

}  // namespace

std::optional<CosineSummary> gradient_cosine(const Mlp& a, const Mlp& b, const Matrix& inputs,
                                             std::span<const int> labels) {
  if (a.input_width() != b.input_width()) {
    throw DimensionError("gradient_cosine: models differ in input width");
  }
  const Matrix ga = input_gradients(a, inputs, labels);
  const Matrix gb = input_gradients(b, inputs, labels);
  CosineSummary s;
  double total = 0.0;
  for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
    const double na = ga.row(r).norm();
    const double nb = gb.row(r).norm();
    if (na == 0.0 || nb == 0.0) {
      ++s.skipped;
      continue;
    }
    total += ga.row(r).dot(gb.row(r)) / (na * nb);
    ++s.used;
  }
  if (s.used == 0) return std::nullopt;
  s.mean = total / static_cast<double>(s.used);
  return s;
}

std::pair<double, double> head_gradient_norms(const Mlp& model, const Matrix& clean_inputs,
                                              std::span<const int> clean_labels, const Matrix& adv_inputs,
                                              std::span<const int> adv_labels) {
  if (clean_labels.empty() || adv_labels.empty()) throw UsageError("head_gradient_norms: empty batch");
  auto head_norm = [&model](const Matrix& x, std::span<const int> y) {
    ForwardPass pass = forward(model, x, {.parameters = true, .input = false});
    ad::backward(ad::softmax_cross_entropy(pass.logits, y));
    const std::size_t head = model.num_layers() - 1;
    return std::sqrt(pass.params.weights[head].grad().squaredNorm() +
                     pass.params.biases[head].grad().squaredNorm());
  };
  return {head_norm(clean_inputs, clean_labels), head_norm(adv_inputs, adv_labels)};
}

}  // namespace arcl
