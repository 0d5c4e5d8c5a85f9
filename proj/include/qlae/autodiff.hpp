#pragma once

#include "qlae/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace qlae {

template <class T>
struct Node;

/// Handle to a node in the computation graph. Graphs are DAGs built once per
/// step and discarded after backward; nodes own their values and gradients.
template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily during backward
  bool needs_grad = false;
  bool is_param = false;
  std::uint64_t seq = 0;
  std::vector<Var<T>> parents;
  // Reads this->grad and accumulates vector-Jacobian products into parents.
  std::function<void(Node<T>&)> backward_rule;

  Tensor<T>& grad_buffer() {
    if (grad.numel() == 0) grad = Tensor<T>(value.shape());
    return grad;
  }
};

namespace detail {
inline std::atomic<std::uint64_t> node_seq{0};
}

template <class T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backward_rule) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backward_rule = std::move(backward_rule);
  for (const auto& p : n->parents) {
    if (p->needs_grad) n->needs_grad = true;
  }
  n->seq = detail::node_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

template <class T>
Var<T> constant(Tensor<T> value) {
  return make_node<T>(std::move(value), {}, {});
}

template <class T>
Var<T> parameter(Tensor<T> value) {
  auto n = constant(std::move(value));
  n->needs_grad = true;
  n->is_param = true;
  return n;
}

template <class T>
using GradMap = std::unordered_map<const Node<T>*, Tensor<T>>;

/// Reverse-mode sweep from a scalar root. Gradients are accumulated in the
/// reverse of graph-construction order (descending node sequence number), so
/// repeated calls on the same graph are bit-identical. Returns an entry for
/// every reachable parameter leaf, including those behind stopped paths
/// (their gradient is zero); non-parameter leaves receive no entry.
template <class T>
GradMap<T> forward_backward(const Var<T>& root) {
  if (root->value.numel() != 1) {
    throw std::invalid_argument("forward_backward: root must be scalar-valued");
  }
  std::vector<Node<T>*> nodes;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });
  for (Node<T>* n : nodes) n->grad = Tensor<T>();
  root->grad = Tensor<T>({1}, std::vector<T>{T(1)});
  for (Node<T>* n : nodes) {
    if (n->backward_rule && n->grad.numel() != 0) n->backward_rule(*n);
  }
  GradMap<T> grads;
  for (Node<T>* n : nodes) {
    if (n->is_param) {
      grads.emplace(n, n->grad.numel() != 0 ? std::move(n->grad) : Tensor<T>(n->value.shape()));
    }
  }
  return grads;
}

/// Forward identity, backward zero: the parent stays reachable for parameter
/// discovery but no gradient flows into it.
template <class T>
Var<T> stop_gradient(const Var<T>& x) {
  auto n = make_node<T>(Tensor<T>(x->value), {x}, {});
  n->needs_grad = false;
  return n;
}

// ---------------------------------------------------------------------------
// Differentiable primitives
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src, T scale = T(1)) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += scale * src[i];
}

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "add");
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->needs_grad) detail::accumulate(n.parents[0]->grad_buffer(), n.grad);
    if (n.parents[1]->needs_grad) detail::accumulate(n.parents[1]->grad_buffer(), n.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "sub");
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->needs_grad) detail::accumulate(n.parents[0]->grad_buffer(), n.grad);
    if (n.parents[1]->needs_grad) detail::accumulate(n.parents[1]->grad_buffer(), n.grad, T(-1));
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "mul");
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->needs_grad) {
      Tensor<T>& ga = n.parents[0]->grad_buffer();
      const Tensor<T>& bv = n.parents[1]->value;
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i] * bv[i];
    }
    if (n.parents[1]->needs_grad) {
      Tensor<T>& gb = n.parents[1]->grad_buffer();
      const Tensor<T>& av = n.parents[0]->value;
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += n.grad[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c * a->value[i];
  return make_node<T>(std::move(out), {a}, [c](Node<T>& n) {
    if (n.parents[0]->needs_grad) detail::accumulate(n.parents[0]->grad_buffer(), n.grad, c);
  });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out({a->value.rows(), b->value.cols()});
  gemm(out, a->value, false, b->value, false, false);
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->needs_grad) {
      gemm(n.parents[0]->grad_buffer(), n.grad, false, n.parents[1]->value, true, true);
    }
    if (n.parents[1]->needs_grad) {
      gemm(n.parents[1]->grad_buffer(), n.parents[0]->value, true, n.grad, false, true);
    }
  });
}

/// out(i, j) = m(i, j) + v(j); the broadcast bias add.
template <class T>
Var<T> add_rowvec(const Var<T>& m, const Var<T>& v) {
  const std::size_t r = m->value.rows(), c = m->value.cols();
  if (v->value.numel() != c) throw std::invalid_argument("add_rowvec: length mismatch");
  Tensor<T> out({r, c});
  const T* src = m->value.data();
  const T* bias = v->value.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) dst[i * c + j] = src[i * c + j] + bias[j];
  }
  return make_node<T>(std::move(out), {m, v}, [r, c](Node<T>& n) {
    if (n.parents[0]->needs_grad) detail::accumulate(n.parents[0]->grad_buffer(), n.grad);
    if (n.parents[1]->needs_grad) {
      T* gv = n.parents[1]->grad_buffer().data();
      const T* g = n.grad.data();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
      }
    }
  });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T x = a->value[i];
    out[i] = x > T(0) ? x : slope * x;
  }
  return make_node<T>(std::move(out), {a}, [slope](Node<T>& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor<T>& ga = n.parents[0]->grad_buffer();
    const Tensor<T>& av = n.parents[0]->value;
    for (std::size_t i = 0; i < ga.numel(); ++i) {
      ga[i] += n.grad[i] * (av[i] > T(0) ? T(1) : slope);
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make_node<T>(Tensor<T>::scalar(s), {a}, [](Node<T>& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor<T>& ga = n.parents[0]->grad_buffer();
    const T g = n.grad[0];
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

/// Forward value is exactly `quantized`; backward passes the upstream
/// gradient to `pre` unchanged (identity Jacobian), i.e. the straight-through
/// estimator z_c + StopGradient(z - z_c) without the round-trip arithmetic.
template <class T>
Var<T> straight_through(const Var<T>& pre, const Var<T>& quantized) {
  detail::check_same_shape(pre->value, quantized->value, "straight_through");
  return make_node<T>(Tensor<T>(quantized->value), {pre}, [](Node<T>& n) {
    if (n.parents[0]->needs_grad) detail::accumulate(n.parents[0]->grad_buffer(), n.grad);
  });
}

/// Mean binary cross-entropy of Bernoulli targets against raw logits,
/// computed in the softplus form mean(t * softplus(-l) + (1 - t) * softplus(l)),
/// which contracts to mean(softplus(l) - t * l).
template <class T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& targets) {
  detail::check_same_shape(logits->value, targets, "bce_with_logits");
  const std::size_t m = targets.numel();
  if (m == 0) throw std::invalid_argument("bce_with_logits: empty input");
  for (std::size_t i = 0; i < m; ++i) {
    if (!(targets[i] >= T(0) && targets[i] <= T(1))) {
      throw std::invalid_argument("bce_with_logits: targets must lie in [0, 1]");
    }
  }
  const auto l = as_array(logits->value);
  const auto t = as_array(targets);
  // softplus(x) = log1p(exp(-|x|)) + max(x, 0) avoids overflow on both tails.
  const T acc = (((-l.abs()).exp().log1p() + l.max(T(0))) - t * l).sum();
  Tensor<T> t_copy(targets);
  return make_node<T>(Tensor<T>::scalar(acc / static_cast<T>(m)), {logits},
                      [t_held = std::move(t_copy), m](Node<T>& n) {
                        if (!n.parents[0]->needs_grad) return;
                        Tensor<T>& gl = n.parents[0]->grad_buffer();
                        const T g = n.grad[0] / static_cast<T>(m);
                        // d/dl = sigmoid(l) - t
                        as_array(gl) += g * ((T(1) + (-as_array(n.parents[0]->value)).exp()).inverse() -
                                             as_array(t_held));
                      });
}

/// Sum of squared differences, ||a - b||^2, as a single fused node.
template <class T>
Var<T> sum_squared_diff(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "sum_squared_diff");
  T acc = 0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) {
    const T d = a->value[i] - b->value[i];
    acc += d * d;
  }
  return make_node<T>(Tensor<T>::scalar(acc), {a, b}, [](Node<T>& n) {
    const Tensor<T>& av = n.parents[0]->value;
    const Tensor<T>& bv = n.parents[1]->value;
    const T g = n.grad[0];
    if (n.parents[0]->needs_grad) {
      Tensor<T>& ga = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g * T(2) * (av[i] - bv[i]);
    }
    if (n.parents[1]->needs_grad) {
      Tensor<T>& gb = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= g * T(2) * (av[i] - bv[i]);
    }
  });
}

}  // namespace qlae
