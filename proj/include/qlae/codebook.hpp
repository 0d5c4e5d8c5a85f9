#pragma once

#include "qlae/autodiff.hpp"
#include "qlae/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace qlae {

enum class CodebookMode { kPerDimension, kGlobal };

/// Learnable discrete-value array: one scalar codebook of n_v entries per
/// latent dimension. In global mode a single row is stored and broadcast to
/// every dimension, so the shared constraint holds by construction under any
/// optimizer update.
template <class T>
struct CodebookArray {
  Var<T> values;  // (global ? 1 : n_z) x n_v
  CodebookMode mode = CodebookMode::kPerDimension;
  int n_z = 0;
  int n_v = 0;

  std::size_t row_of(int dim) const { return mode == CodebookMode::kGlobal ? 0 : dim; }
  T entry(int dim, int index) const { return values->value.at(row_of(dim), index); }
};

/// Every codebook starts as the arithmetic progression from -0.5 to 0.5
/// inclusive with n_v points.
template <class T>
CodebookArray<T> init_codebooks(int n_z, int n_v, CodebookMode mode) {
  if (n_z < 1 || n_v < 2) throw std::invalid_argument("init_codebooks: need n_z >= 1, n_v >= 2");
  const std::size_t rows = mode == CodebookMode::kGlobal ? 1 : static_cast<std::size_t>(n_z);
  Tensor<T> v({rows, static_cast<std::size_t>(n_v)});
  for (std::size_t r = 0; r < rows; ++r) {
    for (int k = 0; k < n_v; ++k) {
      v.at(r, k) = T(-0.5) + static_cast<T>(k) / static_cast<T>(n_v - 1);
    }
  }
  CodebookArray<T> cb;
  cb.values = parameter(std::move(v));
  cb.mode = mode;
  cb.n_z = n_z;
  cb.n_v = n_v;
  return cb;
}

template <class T>
struct QuantizeValues {
  Tensor<T> z;               // same shape as z_c, entries drawn from the codebooks
  std::vector<int> indices;  // chosen codebook entry per coordinate
};

/// Nearest-code assignment, elementwise per dimension. Ties break toward the
/// smallest codebook index. Accepts a single code vector (n_z) or a batch
/// (rows x n_z).
template <class T>
QuantizeValues<T> quantize(const Tensor<T>& z_c, const CodebookArray<T>& cb) {
  const std::size_t n_z = static_cast<std::size_t>(cb.n_z);
  if (z_c.numel() % n_z != 0 ||
      (z_c.ndim() == 2 && z_c.cols() != n_z) ||
      (z_c.ndim() == 1 && z_c.numel() != n_z)) {
    throw std::invalid_argument("quantize: latent width does not match codebook");
  }
  QuantizeValues<T> out;
  out.z = Tensor<T>(z_c.shape());
  out.indices.resize(z_c.numel());
  const T* v = cb.values->value.data();
  const std::size_t n_v = static_cast<std::size_t>(cb.n_v);
  for (std::size_t i = 0; i < z_c.numel(); ++i) {
    const T x = z_c[i];
    if (!std::isfinite(x)) throw std::invalid_argument("quantize: non-finite latent entry");
    const T* row = v + cb.row_of(static_cast<int>(i % n_z)) * n_v;
    int best = 0;
    T best_dist = std::abs(x - row[0]);
    for (int k = 1; k < cb.n_v; ++k) {
      const T d = std::abs(x - row[k]);
      if (d < best_dist) {
        best_dist = d;
        best = k;
      }
    }
    out.indices[i] = best;
    out.z[i] = row[best];
  }
  return out;
}

/// Graph node selecting codebook entries by index; gradients scatter-add back
/// into the selected entries. This is the path L_quantize uses to train V.
template <class T>
Var<T> gather_codes(const CodebookArray<T>& cb, const std::vector<int>& indices,
                    const std::vector<std::size_t>& shape) {
  const std::size_t n_z = static_cast<std::size_t>(cb.n_z);
  Tensor<T> out(shape);
  if (out.numel() != indices.size()) throw std::invalid_argument("gather_codes: index count mismatch");
  const T* v = cb.values->value.data();
  const std::size_t stride = static_cast<std::size_t>(cb.n_v);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out[i] = v[cb.row_of(static_cast<int>(i % n_z)) * stride + indices[i]];
  }
  const bool global = cb.mode == CodebookMode::kGlobal;
  const std::size_t n_v = static_cast<std::size_t>(cb.n_v);
  return make_node<T>(std::move(out), {cb.values},
                      [idx = indices, n_z, n_v, global](Node<T>& n) {
                        if (!n.parents[0]->needs_grad) return;
                        Tensor<T>& gv = n.parents[0]->grad_buffer();
                        for (std::size_t i = 0; i < idx.size(); ++i) {
                          const std::size_t row = global ? 0 : i % n_z;
                          gv[row * n_v + idx[i]] += n.grad[i];
                        }
                      });
}

template <class T>
struct CodebookLossNodes {
  Var<T> quantize_loss;  // trains the codebook entries
  Var<T> commit_loss;    // trains the encoder output
};

/// Both losses equal ||z_c - z||^2 in the forward pass; the stop-gradients
/// route L_quantize into the codebook only and L_commit into z_c only.
template <class T>
CodebookLossNodes<T> codebook_losses(const Var<T>& z_c, const Var<T>& z) {
  return {sum_squared_diff(stop_gradient(z_c), z), sum_squared_diff(z_c, stop_gradient(z))};
}

}  // namespace qlae
