#pragma once

// Tape-free reverse-mode differentiation over rank-2 tensors. Each op returns a node
// that holds its value and a closure pushing its gradient into its parents.

#include <sintra/error.hpp>
#include <sintra/nn/tensor.hpp>
#include <sintra/random.hpp>

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace sintra::nn {

template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  /// Set on a loss once backward() has run through it.
  bool consumed = false;
  std::vector<Var<T>> parents;
  std::function<void(Node&)> backprop;

  /// Gradient accumulator, allocated (zeroed) on first use.
  Tensor<T>& grad_buffer() {
    if (!grad.same_shape(value)) grad = Tensor<T>(value.rows(), value.cols());
    return grad;
  }

  void zero_grad() {
    if (grad.same_shape(value))
      grad.zero();
    else
      grad = Tensor<T>(value.rows(), value.cols());
  }

  bool is_leaf() const { return !backprop; }
};

template <class T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <class T>
Var<T> parameter(Tensor<T> value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  n->grad_buffer();
  return n;
}

namespace detail {

inline thread_local int no_grad_depth = 0;

template <class T, class F>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, F&& backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (no_grad_depth > 0) return n;
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::forward<F>(backprop);
  }
  return n;
}

template <class T>
void require(bool ok, const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!ok) throw UsageError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace detail

/// While alive, ops on this thread record no graph (inference).
class NoGradGuard {
public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Reverse pass from a 1x1 loss. Gradients accumulate into every parameter reachable
/// from `loss`; the graph is released afterwards, so a second call on the same loss
/// throws UsageError. Throws NumericError if a parameter gradient is not finite.
template <class T>
void backward(const Var<T>& loss) {
  if (loss->value.size() != 1) throw UsageError("backward needs a scalar loss, got " + loss->value.shape_string());
  if (loss->consumed) throw UsageError("backward already ran on this graph; run a new forward pass first");
  loss->consumed = true;
  if (!loss->requires_grad) return;

  // Post-order DFS gives parents before children.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss->grad_buffer()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
  for (Node<T>* n : order) {
    if (n->backprop) {
      n->backprop = nullptr;
      n->parents.clear();
    } else if (!n->grad.all_finite()) {
      throw NumericError("non-finite gradient in a " + n->value.shape_string() + " parameter");
    }
  }
}

/// a * b
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require(a->value.cols() == b->value.rows(), "matmul", a->value, b->value);
  Tensor<T> out(a->value.rows(), b->value.cols());
  out.mat().noalias() = a->value.mat() * b->value.mat();
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& A = self.parents[0];
    auto& B = self.parents[1];
    if (A->requires_grad) A->grad_buffer().mat().noalias() += self.grad.mat() * B->value.mat().transpose();
    if (B->requires_grad) B->grad_buffer().mat().noalias() += A->value.mat().transpose() * self.grad.mat();
  });
}

/// a * b^T
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  detail::require(a->value.cols() == b->value.cols(), "matmul_nt", a->value, b->value);
  Tensor<T> out(a->value.rows(), b->value.rows());
  out.mat().noalias() = a->value.mat() * b->value.mat().transpose();
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& A = self.parents[0];
    auto& B = self.parents[1];
    if (A->requires_grad) A->grad_buffer().mat().noalias() += self.grad.mat() * B->value.mat();
    if (B->requires_grad) B->grad_buffer().mat().noalias() += self.grad.mat().transpose() * A->value.mat();
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require(a->value.same_shape(b->value), "add", a->value, b->value);
  Tensor<T> out = a->value;
  out.mat() += b->value.mat();
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->grad_buffer().mat() += self.grad.mat();
  });
}

/// a + row, broadcasting a 1 x n row over every row of a.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  detail::require(row->value.rows() == 1 && row->value.cols() == a->value.cols(), "add_row", a->value, row->value);
  Tensor<T> out = a->value;
  out.mat().rowwise() += row->value.mat().row(0);
  return detail::make_op<T>(std::move(out), {a, row}, [](Node<T>& self) {
    auto& A = self.parents[0];
    auto& R = self.parents[1];
    if (A->requires_grad) A->grad_buffer().mat() += self.grad.mat();
    if (R->requires_grad) R->grad_buffer().mat() += self.grad.mat().colwise().sum();
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  out.mat() *= s;
  return detail::make_op<T>(std::move(out), {a}, [s](Node<T>& self) {
    self.parents[0]->grad_buffer().mat() += s * self.grad.mat();
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& A = self.parents[0];
    auto& g = A->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (A->value[i] > T(0)) g[i] += self.grad[i];
  });
}

/// Row-wise layer normalization with learned 1 x n gain and bias.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const std::size_t rows = x->value.rows(), cols = x->value.cols();
  detail::require(gain->value.cols() == cols && bias->value.cols() == cols, "layer_norm", x->value, gain->value);
  Tensor<T> xhat(rows, cols);
  Tensor<T> rstd(rows, 1);
  Tensor<T> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = x->value.mat().row(r);
    T mean = row.mean();
    T var = (row.array() - mean).square().mean();
    T rs = T(1) / std::sqrt(var + eps);
    rstd(r, 0) = rs;
    xhat.mat().row(r) = (row.array() - mean) * rs;
    out.mat().row(r) = xhat.mat().row(r).cwiseProduct(gain->value.mat().row(0)) + bias->value.mat().row(0);
  }
  return detail::make_op<T>(std::move(out), {x, gain, bias},
                            [xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
    auto& X = self.parents[0];
    auto& G = self.parents[1];
    auto& B = self.parents[2];
    const auto& g = self.grad;
    if (G->requires_grad) G->grad_buffer().mat() += g.mat().cwiseProduct(xhat.mat()).colwise().sum();
    if (B->requires_grad) B->grad_buffer().mat() += g.mat().colwise().sum();
    if (X->requires_grad) {
      auto& gx = X->grad_buffer();
      const T n = static_cast<T>(g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r) {
        RowMatrix<T> dxhat = g.mat().row(r).cwiseProduct(G->value.mat().row(0));
        T mean_d = dxhat.sum() / n;
        T mean_dx = dxhat.cwiseProduct(xhat.mat().row(r)).sum() / n;
        gx.mat().row(r).array() +=
            rstd(r, 0) * (dxhat.array() - mean_d - xhat.mat().row(r).array() * mean_dx);
      }
    }
  });
}

/// Softmax over each row, keeping only columns j <= i + offset (causal attention over
/// `offset` memory slots followed by the current positions). Masked entries are 0.
template <class T>
Var<T> masked_softmax(const Var<T>& s, long offset) {
  const std::size_t rows = s->value.rows(), cols = s->value.cols();
  Tensor<T> out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    long last = std::min<long>(static_cast<long>(cols) - 1, static_cast<long>(i) + offset);
    if (last < 0) continue;
    T mx = s->value(i, 0);
    for (long j = 1; j <= last; ++j) mx = std::max(mx, s->value(i, j));
    T total = 0;
    for (long j = 0; j <= last; ++j) total += out(i, j) = std::exp(s->value(i, j) - mx);
    for (long j = 0; j <= last; ++j) out(i, j) /= total;
  }
  return detail::make_op<T>(std::move(out), {s}, [](Node<T>& self) {
    auto& S = self.parents[0];
    auto& gs = S->grad_buffer();
    const auto& p = self.value;
    for (std::size_t i = 0; i < p.rows(); ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < p.cols(); ++j) dot += self.grad(i, j) * p(i, j);
      for (std::size_t j = 0; j < p.cols(); ++j) gs(i, j) += p(i, j) * (self.grad(i, j) - dot);
    }
  });
}

/// Relative-position shift. `x` is L x K with column r scoring relative distance K-1-r;
/// the result scores query i (at absolute position mem+i) against key j, i.e.
/// out(i, j) = x(i, L-1-i+j) for j <= mem+i and 0 for future keys.
template <class T>
Var<T> rel_shift(const Var<T>& x, long mem) {
  const long L = static_cast<long>(x->value.rows()), K = static_cast<long>(x->value.cols());
  if (K != mem + L) throw UsageError("rel_shift: key length must equal memory + query length");
  Tensor<T> out(static_cast<std::size_t>(L), static_cast<std::size_t>(K));
  for (long i = 0; i < L; ++i)
    for (long j = 0; j <= mem + i; ++j) out(i, j) = x->value(i, L - 1 - i + j);
  return detail::make_op<T>(std::move(out), {x}, [L, mem](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (long i = 0; i < L; ++i)
      for (long j = 0; j <= mem + i; ++j) g(i, L - 1 - i + j) += self.grad(i, j);
  });
}

/// Columns [first, first + count).
template <class T>
Var<T> slice_cols(const Var<T>& a, std::size_t first, std::size_t count) {
  if (first + count > a->value.cols()) throw UsageError("slice_cols out of range");
  Tensor<T> out(a->value.rows(), count);
  out.mat() = a->value.mat().middleCols(first, count);
  return detail::make_op<T>(std::move(out), {a}, [first, count](Node<T>& self) {
    self.parents[0]->grad_buffer().mat().middleCols(first, count) += self.grad.mat();
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw UsageError("concat_cols of nothing");
  std::size_t rows = parts[0]->value.rows(), cols = 0;
  for (const auto& p : parts) {
    detail::require(p->value.rows() == rows, "concat_cols", parts[0]->value, p->value);
    cols += p->value.cols();
  }
  Tensor<T> out(rows, cols);
  std::size_t at = 0;
  for (const auto& p : parts) {
    out.mat().middleCols(at, p->value.cols()) = p->value.mat();
    at += p->value.cols();
  }
  return detail::make_op<T>(std::move(out), parts, [](Node<T>& self) {
    std::size_t at = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) p->grad_buffer().mat() += self.grad.mat().middleCols(at, p->value.cols());
      at += p->value.cols();
    }
  });
}

/// [a; b] stacked by rows.
template <class T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
  detail::require(a->value.cols() == b->value.cols(), "concat_rows", a->value, b->value);
  Tensor<T> out(a->value.rows() + b->value.rows(), a->value.cols());
  out.mat().topRows(a->value.rows()) = a->value.mat();
  out.mat().bottomRows(b->value.rows()) = b->value.mat();
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& A = self.parents[0];
    auto& B = self.parents[1];
    if (A->requires_grad) A->grad_buffer().mat() += self.grad.mat().topRows(A->value.rows());
    if (B->requires_grad) B->grad_buffer().mat() += self.grad.mat().bottomRows(B->value.rows());
  });
}

/// Rows of `table` selected by `ids`.
template <class T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids) {
  Tensor<T> out(ids.size(), table->value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table->value.rows())
      throw DataError("token " + std::to_string(ids[i]) + " outside vocabulary of " +
                      std::to_string(table->value.rows()));
    out.mat().row(i) = table->value.mat().row(ids[i]);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return detail::make_op<T>(std::move(out), {table}, [saved = std::move(saved)](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < saved.size(); ++i) g.mat().row(saved[i]) += self.grad.mat().row(i);
  });
}

/// sum_k weights[k] * xs[k] + bias: a 1x1 convolution over a stack of equally shaped
/// inputs. `weights` is 1 x n, `bias` is 1 x 1.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, const Var<T>& weights, const Var<T>& bias) {
  if (xs.empty() || weights->value.rows() != 1 || weights->value.cols() != xs.size() || bias->value.size() != 1)
    throw UsageError("weighted_sum: need one weight per input and a scalar bias");
  Tensor<T> out(xs[0]->value.rows(), xs[0]->value.cols(), bias->value[0]);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    detail::require(xs[k]->value.same_shape(xs[0]->value), "weighted_sum", xs[0]->value, xs[k]->value);
    out.mat() += weights->value[k] * xs[k]->value.mat();
  }
  std::vector<Var<T>> parents = xs;
  parents.push_back(weights);
  parents.push_back(bias);
  return detail::make_op<T>(std::move(out), std::move(parents), [n = xs.size()](Node<T>& self) {
    auto& W = self.parents[n];
    auto& B = self.parents[n + 1];
    for (std::size_t k = 0; k < n; ++k) {
      auto& X = self.parents[k];
      if (X->requires_grad) X->grad_buffer().mat() += W->value[k] * self.grad.mat();
      if (W->requires_grad) W->grad_buffer()[k] += self.grad.mat().cwiseProduct(X->value.mat()).sum();
    }
    if (B->requires_grad) B->grad_buffer()[0] += self.grad.mat().sum();
  });
}

/// Inverted dropout; identity when `train` is false or `p` is 0.
template <class T>
Var<T> dropout(const Var<T>& a, double p, bool train, Rng* rng) {
  if (!train || p <= 0.0) return a;
  if (!rng) throw UsageError("dropout in training mode needs an RNG");
  if (p >= 1.0) throw UsageError("dropout probability must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask(a->value.rows(), a->value.cols());
  for (auto& m : mask.values()) m = rng->uniform() >= p ? keep_scale : T(0);
  Tensor<T> out = a->value;
  out.mat().array() *= mask.mat().array();
  return detail::make_op<T>(std::move(out), {a}, [mask = std::move(mask)](Node<T>& self) {
    self.parents[0]->grad_buffer().mat().array() += self.grad.mat().array() * mask.mat().array();
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  Tensor<T> out(1, 1, a->value.mat().sum());
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    self.parents[0]->grad_buffer().mat().array() += self.grad[0];
  });
}

/// sum(a .* w) with a constant weight tensor.
template <class T>
Var<T> dot(const Var<T>& a, const Tensor<T>& w) {
  detail::require(a->value.same_shape(w), "dot", a->value, w);
  Tensor<T> out(1, 1, a->value.mat().cwiseProduct(w.mat()).sum());
  return detail::make_op<T>(std::move(out), {a}, [w](Node<T>& self) {
    self.parents[0]->grad_buffer().mat() += self.grad[0] * w.mat();
  });
}

/// Mean over all rows of all inputs of -log softmax(row)[target]. logits[k] is
/// L_k x V_k, targets[k] holds L_k indices.
template <class T>
Var<T> nll_loss(const std::vector<Var<T>>& logits, const std::vector<std::vector<int>>& targets) {
  if (logits.size() != targets.size() || logits.empty()) throw UsageError("nll_loss: one target list per logits");
  std::size_t count = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (targets[k].size() != logits[k]->value.rows()) throw UsageError("nll_loss: target count mismatch");
    count += targets[k].size();
  }
  if (count == 0) throw UsageError("nll_loss: no targets");
  std::vector<Tensor<T>> probs;
  double total = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const auto& z = logits[k]->value;
    Tensor<T> p(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      int y = targets[k][i];
      if (y < 0 || static_cast<std::size_t>(y) >= z.cols()) throw DataError("nll_loss: target outside vocabulary");
      T mx = z.mat().row(i).maxCoeff();
      T s = 0;
      for (std::size_t j = 0; j < z.cols(); ++j) s += p(i, j) = std::exp(z(i, j) - mx);
      for (std::size_t j = 0; j < z.cols(); ++j) p(i, j) /= s;
      total += static_cast<double>(std::log(s) + mx - z(i, y));
    }
    probs.push_back(std::move(p));
  }
  Tensor<T> out(1, 1, static_cast<T>(total / static_cast<double>(count)));
  return detail::make_op<T>(std::move(out), logits,
                            [probs = std::move(probs), targets, count](Node<T>& self) {
    const T g = self.grad[0] / static_cast<T>(count);
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& Z = self.parents[k];
      if (!Z->requires_grad) continue;
      auto& gz = Z->grad_buffer();
      gz.mat() += g * probs[k].mat();
      for (std::size_t i = 0; i < targets[k].size(); ++i) gz(i, targets[k][i]) -= g;
    }
  });
}

}  // namespace sintra::nn
