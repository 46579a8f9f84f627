#include "arcl/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <string>

#include "arcl/errors.hpp"

namespace arcl {

Mlp Mlp::init(std::vector<int> layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw ConfigError("init_model: need at least 2 layer sizes");
  for (int s : layer_sizes) {
    if (s <= 0) throw ConfigError("init_model: layer sizes must be positive, got " + std::to_string(s));
  }
  Rng rng(seed);
  Mlp m;
  m.layer_sizes_ = std::move(layer_sizes);
  for (std::size_t l = 0; l + 1 < m.layer_sizes_.size(); ++l) {
    const int fan_in = m.layer_sizes_[l];
    const int fan_out = m.layer_sizes_[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    m.weights_.push_back(std::move(w));
    m.biases_.push_back(RowVector::Zero(fan_out));
  }
  return m;
}

Mlp Mlp::from_parameters(std::vector<Matrix> weights, std::vector<RowVector> biases) {
  if (weights.empty() || weights.size() != biases.size()) {
    throw ConfigError("from_parameters: need matching non-empty weight and bias lists");
  }
  Mlp m;
  m.layer_sizes_.push_back(static_cast<int>(weights.front().rows()));
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != m.layer_sizes_.back() || biases[l].cols() != weights[l].cols() ||
        weights[l].cols() == 0) {
      throw DimensionError("from_parameters: layer " + std::to_string(l) + " weight " +
                           shape_string(weights[l]) + " bias " + shape_string(biases[l]));
    }
    m.layer_sizes_.push_back(static_cast<int>(weights[l].cols()));
  }
  m.weights_ = std::move(weights);
  m.biases_ = std::move(biases);
  return m;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
  }
  return n;
}

namespace {

void check_width(const Mlp& model, const Matrix& inputs, const char* op) {
  if (inputs.cols() != model.input_width()) {
    throw DimensionError(std::string(op) + ": input width " + std::to_string(inputs.cols()) +
                         " does not match model input width " + std::to_string(model.input_width()));
  }
}

}  // namespace

Parameters parameter_leaves(const Mlp& model, bool requires_grad) {
  Parameters p;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    p.weights.push_back(Var::leaf(model.weight(l), requires_grad));
    p.biases.push_back(Var::leaf(model.bias(l), requires_grad));
  }
  return p;
}

Var forward(const Parameters& params, const Var& inputs) {
  if (inputs.cols() != params.input_width()) {
    throw DimensionError("forward: input width " + std::to_string(inputs.cols()) +
                         " does not match model input width " + std::to_string(params.input_width()));
  }
  Var h = inputs;
  const std::size_t layers = params.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::add(ad::matmul(h, params.weights[l]), params.biases[l]);
    if (l + 1 < layers) h = ad::relu(h);
  }
  return h;
}

ForwardPass forward(const Mlp& model, const Matrix& inputs, GradTargets targets) {
  check_width(model, inputs, "forward");
  ForwardPass pass;
  pass.input = Var::leaf(inputs, targets.input);
  pass.params = parameter_leaves(model, targets.parameters);
  pass.logits = forward(pass.params, pass.input);
  return pass;
}

Matrix logits(const Mlp& model, const Matrix& inputs) {
  check_width(model, inputs, "logits");
  Matrix h = inputs;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    Matrix next = h * model.weight(l);
    next.rowwise() += model.bias(l).row(0);
    if (l + 1 < model.num_layers()) next = next.cwiseMax(0.0);
    h = std::move(next);
  }
  return h;
}

void sgd_step(Mlp& model, const Parameters& params, double learning_rate) {
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    model.weight(l) -= learning_rate * params.weights[l].grad();
    model.bias(l) -= learning_rate * params.biases[l].grad();
  }
}

HeadPartition head_partition(int task, int classes_per_task, int num_classes) {
  if (classes_per_task <= 0 || num_classes <= 0 || num_classes % classes_per_task != 0) {
    throw ConfigError("head_partition: classes_per_task " + std::to_string(classes_per_task) +
                      " must divide num_classes " + std::to_string(num_classes));
  }
  const int tasks = num_classes / classes_per_task;
  if (task < 1 || task > tasks) {
    throw ConfigError("head_partition: task " + std::to_string(task) + " outside [1, " +
                      std::to_string(tasks) + "]");
  }
  HeadPartition p;
  p.task = task;
  p.classes_per_task = classes_per_task;
  p.num_classes = num_classes;
  for (int c = 0; c < num_classes; ++c) {
    if (c < p.current_begin()) p.past.push_back(c);
    else if (c < p.current_end()) p.current.push_back(c);
    else p.future.push_back(c);
  }
  return p;
}

const char* to_string(Setting s) {
  return s == Setting::ClassIncremental ? "class_il" : "task_il";
}

std::vector<int> predict_from_logits(const Matrix& logits, Setting setting,
                                     const HeadPartition* partition) {
  if (setting == Setting::TaskIncremental && partition == nullptr) {
    throw UsageError("predict: task_il prediction requires the example's task partition");
  }
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index begin = 0;
    Eigen::Index end = logits.cols();
    if (setting == Setting::TaskIncremental) {
      begin = partition->current_begin();
      end = partition->current_end();
    }
    Eigen::Index best = begin;
    for (Eigen::Index c = begin + 1; c < end; ++c) {
      if (logits(r, c) > logits(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict(const Mlp& model, const Matrix& inputs, Setting setting,
                         const HeadPartition* partition) {
  return predict_from_logits(logits(model, inputs), setting, partition);
}

namespace {

void write_hex(std::ostream& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  out << buf;
}

double read_hex(std::istream& in, const char* what) {
  std::string token;
  if (!(in >> token)) throw FormatError(std::string("checkpoint: truncated while reading ") + what);
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0') {
    throw FormatError(std::string("checkpoint: bad number '") + token + "' in " + what);
  }
  return v;
}

void expect(std::istream& in, const std::string& keyword) {
  std::string token;
  if (!(in >> token) || token != keyword) {
    throw FormatError("checkpoint: expected '" + keyword + "', got '" + token + "'");
  }
}

long read_int(std::istream& in, const char* what) {
  long v = 0;
  if (!(in >> v)) throw FormatError(std::string("checkpoint: expected integer for ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const Mlp& model, std::ostream& out) {
  out << "arcl-mlp 1\n";
  out << "layers " << model.layer_sizes().size();
  for (int s : model.layer_sizes()) out << ' ' << s;
  out << '\n';
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const Matrix& w = model.weight(l);
    out << "W " << l << ' ' << w.rows() << ' ' << w.cols() << '\n';
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        if (c) out << ' ';
        write_hex(out, w(r, c));
      }
      out << '\n';
    }
    const RowVector& b = model.bias(l);
    out << "b " << l << ' ' << b.cols() << '\n';
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
      if (c) out << ' ';
      write_hex(out, b(c));
    }
    out << '\n';
  }
}

Mlp load_checkpoint(std::istream& in) {
  expect(in, "arcl-mlp");
  if (read_int(in, "version") != 1) throw FormatError("checkpoint: unsupported version");
  expect(in, "layers");
  const long count = read_int(in, "layer count");
  if (count < 2) throw FormatError("checkpoint: fewer than 2 layers");
  std::vector<long> sizes;
  for (long i = 0; i < count; ++i) sizes.push_back(read_int(in, "layer size"));

  std::vector<Matrix> weights;
  std::vector<RowVector> biases;
  for (long l = 0; l + 1 < count; ++l) {
    expect(in, "W");
    if (read_int(in, "layer index") != l) throw FormatError("checkpoint: layer index out of order");
    const long rows = read_int(in, "rows");
    const long cols = read_int(in, "cols");
    if (rows != sizes[l] || cols != sizes[l + 1]) throw FormatError("checkpoint: weight shape mismatch");
    Matrix w(rows, cols);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = read_hex(in, "weights");
    expect(in, "b");
    if (read_int(in, "layer index") != l) throw FormatError("checkpoint: layer index out of order");
    if (read_int(in, "bias width") != cols) throw FormatError("checkpoint: bias shape mismatch");
    RowVector b(cols);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = read_hex(in, "biases");
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }
  return Mlp::from_parameters(std::move(weights), std::move(biases));
}

}  // namespace arcl
