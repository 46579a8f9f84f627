#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// Every operation evaluates its value eagerly and records a closure that
// pushes the node's gradient into its operands. Graphs are rebuilt on each
// forward pass and are confined to one thread.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "arcl/errors.hpp"
#include "arcl/tensor.hpp"

namespace arcl::ad {

template <typename Scalar>
struct Node {
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

template <typename Scalar>
class Var {
 public:
  using Matrix = MatrixX<Scalar>;

  Var() = default;

  /// A graph input. Only leaves created with requires_grad collect gradients.
  static Var leaf(Matrix value, bool requires_grad = true) {
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
    return Var(std::move(node));
  }

  static Var constant(Matrix value) { return leaf(std::move(value), false); }

  const Matrix& value() const { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }
  Scalar item() const { return node_->value(0, 0); }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.setZero(rows(), cols());
  }

  Node<Scalar>& node() const { return *node_; }
  const std::shared_ptr<Node<Scalar>>& handle() const { return node_; }

  explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

namespace detail {

template <typename Scalar, typename Backward>
Var<Scalar> make_node(MatrixX<Scalar> value, std::vector<Var<Scalar>> operands, Backward&& rule) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  for (const auto& op : operands) node->requires_grad = node->requires_grad || op.requires_grad();
  if (node->requires_grad) {
    node->grad = MatrixX<Scalar>::Zero(node->value.rows(), node->value.cols());
    node->parents.reserve(operands.size());
    for (const auto& op : operands) node->parents.push_back(op.handle());
    node->backward = std::forward<Backward>(rule);
  }
  return Var<Scalar>(std::move(node));
}

// Parent slot i, or nullptr when it does not take gradients.
template <typename Scalar>
Node<Scalar>* sink(Node<Scalar>& self, std::size_t i) {
  Node<Scalar>* p = self.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

template <typename Scalar>
[[noreturn]] void shape_error(const std::string& op, const Var<Scalar>& a, const Var<Scalar>& b) {
  throw DimensionError(op + ": incompatible shapes " + shape_string(a.value()) + " and " +
                       shape_string(b.value()));
}

// Row-wise log-softmax, stabilized by subtracting the row maximum.
template <typename Scalar>
MatrixX<Scalar> log_softmax_rows(const MatrixX<Scalar>& z) {
  MatrixX<Scalar> out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const Scalar m = z.row(r).maxCoeff();
    const Scalar lse = m + std::log((z.row(r).array() - m).exp().sum());
    out.row(r) = z.row(r).array() - lse;
  }
  return out;
}

template <typename Scalar>
void check_labels(std::span<const int> labels, Eigen::Index rows, Eigen::Index classes) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw InputError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
}

}  // namespace detail

template <typename Scalar>
MatrixX<Scalar> softmax_rows(const MatrixX<Scalar>& z) {
  return detail::log_softmax_rows(z).array().exp().matrix();
}

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra operations
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows()) detail::shape_error("matmul", a, b);
  MatrixX<Scalar> value = a.value() * b.value();
  return detail::make_node<Scalar>(std::move(value), {a, b}, [](Node<Scalar>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* pa = detail::sink(self, 0)) pa->grad.noalias() += self.grad * bv.transpose();
    if (auto* pb = detail::sink(self, 1)) pb->grad.noalias() += av.transpose() * self.grad;
  });
}

/// a + b, where b either matches a or is a single row broadcast over a's rows.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  const bool same = a.rows() == b.rows() && a.cols() == b.cols();
  const bool row_broadcast = b.rows() == 1 && b.cols() == a.cols();
  if (!same && !row_broadcast) detail::shape_error("add", a, b);
  MatrixX<Scalar> value = a.value();
  if (same) value += b.value();
  else value.rowwise() += b.value().row(0);
  return detail::make_node<Scalar>(std::move(value), {a, b}, [same](Node<Scalar>& self) {
    if (auto* pa = detail::sink(self, 0)) pa->grad += self.grad;
    if (auto* pb = detail::sink(self, 1)) {
      if (same) pb->grad += self.grad;
      else pb->grad += self.grad.colwise().sum();
    }
  });
}

/// a - b with the same broadcasting rule as add.
template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  const bool same = a.rows() == b.rows() && a.cols() == b.cols();
  const bool row_broadcast = b.rows() == 1 && b.cols() == a.cols();
  if (!same && !row_broadcast) detail::shape_error("sub", a, b);
  MatrixX<Scalar> value = a.value();
  if (same) value -= b.value();
  else value.rowwise() -= b.value().row(0);
  return detail::make_node<Scalar>(std::move(value), {a, b}, [same](Node<Scalar>& self) {
    if (auto* pa = detail::sink(self, 0)) pa->grad += self.grad;
    if (auto* pb = detail::sink(self, 1)) {
      if (same) pb->grad -= self.grad;
      else pb->grad -= self.grad.colwise().sum();
    }
  });
}

/// Hadamard product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("mul", a, b);
  MatrixX<Scalar> value = a.value().cwiseProduct(b.value());
  return detail::make_node<Scalar>(std::move(value), {a, b}, [](Node<Scalar>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* pa = detail::sink(self, 0)) pa->grad += self.grad.cwiseProduct(bv);
    if (auto* pb = detail::sink(self, 1)) pb->grad += self.grad.cwiseProduct(av);
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  MatrixX<Scalar> value = a.value() * s;
  return detail::make_node<Scalar>(std::move(value), {a}, [s](Node<Scalar>& self) {
    if (auto* pa = detail::sink(self, 0)) pa->grad += self.grad * s;
  });
}

/// max(0, x); the subgradient at 0 is 0.
template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  MatrixX<Scalar> value = a.value().cwiseMax(Scalar(0));
  return detail::make_node<Scalar>(std::move(value), {a}, [](Node<Scalar>& self) {
    if (auto* pa = detail::sink(self, 0)) {
      pa->grad.array() += (pa->value.array() > Scalar(0)).select(self.grad.array(), Scalar(0));
    }
  });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& a) {
  MatrixX<Scalar> value = a.value().array().log().matrix();
  return detail::make_node<Scalar>(std::move(value), {a}, [](Node<Scalar>& self) {
    if (auto* pa = detail::sink(self, 0)) pa->grad.array() += self.grad.array() / pa->value.array();
  });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
  MatrixX<Scalar> value = a.value().array().exp().matrix();
  return detail::make_node<Scalar>(std::move(value), {a}, [](Node<Scalar>& self) {
    if (auto* pa = detail::sink(self, 0)) pa->grad.array() += self.grad.array() * self.value.array();
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  MatrixX<Scalar> value(1, 1);
  value(0, 0) = a.value().sum();
  return detail::make_node<Scalar>(std::move(value), {a}, [](Node<Scalar>& self) {
    if (auto* pa = detail::sink(self, 0)) pa->grad.array() += self.grad(0, 0);
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  const auto count = static_cast<Scalar>(a.value().size());
  MatrixX<Scalar> value(1, 1);
  value(0, 0) = a.value().sum() / count;
  return detail::make_node<Scalar>(std::move(value), {a}, [count](Node<Scalar>& self) {
    if (auto* pa = detail::sink(self, 0)) pa->grad.array() += self.grad(0, 0) / count;
  });
}

/// Per-row maximum as an n x 1 column; `argmax` receives the first maximizing
/// column of each row and the gradient is routed there.
template <typename Scalar>
Var<Scalar> row_max(const Var<Scalar>& a, std::vector<Eigen::Index>* argmax = nullptr) {
  std::vector<Eigen::Index> index(static_cast<std::size_t>(a.rows()));
  MatrixX<Scalar> value(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    value(r, 0) = a.value().row(r).maxCoeff(&index[static_cast<std::size_t>(r)]);
  }
  if (argmax) *argmax = index;
  return detail::make_node<Scalar>(std::move(value), {a}, [index](Node<Scalar>& self) {
    if (auto* pa = detail::sink(self, 0)) {
      for (std::size_t r = 0; r < index.size(); ++r) {
        pa->grad(static_cast<Eigen::Index>(r), index[r]) += self.grad(static_cast<Eigen::Index>(r), 0);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean over rows of -log softmax(logits)[label].
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
  detail::check_labels<Scalar>(labels, logits.rows(), logits.cols());
  const auto n = logits.rows();
  MatrixX<Scalar> log_p = detail::log_softmax_rows(logits.value());
  Scalar total = 0;
  for (Eigen::Index r = 0; r < n; ++r) total -= log_p(r, labels[static_cast<std::size_t>(r)]);
  MatrixX<Scalar> value(1, 1);
  value(0, 0) = n > 0 ? total / static_cast<Scalar>(n) : Scalar(0);
  std::vector<int> y(labels.begin(), labels.end());
  return detail::make_node<Scalar>(
      std::move(value), {logits}, [log_p = std::move(log_p), y = std::move(y)](Node<Scalar>& self) {
        auto* pa = detail::sink(self, 0);
        if (!pa || log_p.rows() == 0) return;
        const Scalar g = self.grad(0, 0) / static_cast<Scalar>(log_p.rows());
        MatrixX<Scalar> d = log_p.array().exp().matrix();
        for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, y[static_cast<std::size_t>(r)]) -= Scalar(1);
        pa->grad += g * d;
      });
}

/// Mean over rows of KL(softmax(p_logits) || softmax(q_logits)), computed in log space.
template <typename Scalar>
Var<Scalar> kl_divergence(const Var<Scalar>& p_logits, const Var<Scalar>& q_logits) {
  if (p_logits.rows() != q_logits.rows() || p_logits.cols() != q_logits.cols()) {
    detail::shape_error("kl_divergence", p_logits, q_logits);
  }
  const auto n = p_logits.rows();
  MatrixX<Scalar> log_p = detail::log_softmax_rows(p_logits.value());
  MatrixX<Scalar> log_q = detail::log_softmax_rows(q_logits.value());
  MatrixX<Scalar> p = log_p.array().exp().matrix();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_kl =
      (p.array() * (log_p - log_q).array()).rowwise().sum().matrix();
  MatrixX<Scalar> value(1, 1);
  value(0, 0) = n > 0 ? row_kl.sum() / static_cast<Scalar>(n) : Scalar(0);
  return detail::make_node<Scalar>(
      std::move(value), {p_logits, q_logits},
      [p = std::move(p), log_p = std::move(log_p), log_q = std::move(log_q),
       row_kl = std::move(row_kl)](Node<Scalar>& self) {
        if (p.rows() == 0) return;
        const Scalar g = self.grad(0, 0) / static_cast<Scalar>(p.rows());
        if (auto* pp = detail::sink(self, 0)) {
          // d/dp_j = P_j * (log P_j - log Q_j - KL_row)
          MatrixX<Scalar> diff = log_p - log_q;
          diff.colwise() -= row_kl;
          pp->grad += g * p.cwiseProduct(diff);
        }
        if (auto* pq = detail::sink(self, 1)) {
          pq->grad += g * (log_q.array().exp().matrix() - p);
        }
      });
}

/// Mean over all elements of (a - target)^2; the target is a constant.
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const MatrixX<Scalar>& target) {
  if (a.rows() != target.rows() || a.cols() != target.cols()) {
    throw DimensionError("mse: incompatible shapes " + shape_string(a.value()) + " and " +
                         shape_string(target));
  }
  MatrixX<Scalar> residual = a.value() - target;
  const auto count = static_cast<Scalar>(residual.size());
  MatrixX<Scalar> value(1, 1);
  value(0, 0) = count > 0 ? residual.squaredNorm() / count : Scalar(0);
  return detail::make_node<Scalar>(std::move(value), {a},
                                   [residual = std::move(residual), count](Node<Scalar>& self) {
                                     if (auto* pa = detail::sink(self, 0); pa && count > 0) {
                                       pa->grad += (Scalar(2) * self.grad(0, 0) / count) * residual;
                                     }
                                   });
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Reverse sweep
// ---------------------------------------------------------------------------

/// Accumulates d(root)/d(node) into every reachable node that requires a
/// gradient. Interior gradients are reset per call, leaf gradients accumulate.
template <typename Scalar>
void backward(const Var<Scalar>& root) {
  if (!root.is_scalar()) {
    throw UsageError("backward: root must be 1x1, got " + shape_string(root.value()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; reversed, this is a topological order.
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{&root.node(), 0}};
  visited.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<Scalar>* node : order) {
    if (node->backward) node->grad.setZero();
  }
  root.node().grad(0, 0) += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Compares the reverse-mode gradient of `build(point)` against central
/// differences with step h. Returns max |analytic - numeric| / max(1, |numeric|).
template <typename Scalar, typename Build>
Scalar finite_difference_check(Build&& build, const MatrixX<Scalar>& point, Scalar h) {
  Var<Scalar> x = Var<Scalar>::leaf(point, true);
  Var<Scalar> loss = build(x);
  backward(loss);
  const MatrixX<Scalar> analytic = x.grad();

  Scalar worst = 0;
  MatrixX<Scalar> probe = point;
  for (Eigen::Index i = 0; i < probe.size(); ++i) {
    const Scalar saved = probe.data()[i];
    probe.data()[i] = saved + h;
    const Scalar up = build(Var<Scalar>::constant(probe)).item();
    probe.data()[i] = saved - h;
    const Scalar down = build(Var<Scalar>::constant(probe)).item();
    probe.data()[i] = saved;
    const Scalar numeric = (up - down) / (Scalar(2) * h);
    const Scalar err = std::abs(analytic.data()[i] - numeric) / std::max(Scalar(1), std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace arcl::ad

namespace arcl {
using Var = ad::Var<double>;
}  // namespace arcl
