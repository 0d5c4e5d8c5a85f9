#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace qlae {

/// Dense row-major tensor of 32- or 64-bit reals. Immutable by convention
/// once handed to the graph; the few in-place mutators exist for
/// construction and optimizer updates.
///
/// Storage is 64-byte aligned so vectorized kernels take the same code path
/// for every allocation of a given shape, keeping results bit-reproducible
/// run to run.
template <class T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

public:
  using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != checked_numel(shape_)) {
      throw std::invalid_argument("Tensor: data length does not match shape");
    }
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t ndim() const { return shape_.size(); }

  std::size_t rows() const { return dim2().first; }
  std::size_t cols() const { return dim2().second; }

  const T* data() const { return data_.data(); }
  T* data() { return data_.data(); }
  const Storage& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

private:
  std::pair<std::size_t, std::size_t> dim2() const {
    if (shape_.size() != 2) throw std::logic_error("Tensor: expected 2-d tensor");
    return {shape_[0], shape_[1]};
  }

  static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
  }

  std::vector<std::size_t> shape_;
  Storage data_;
};

namespace detail {

// A row-major (r x c) buffer read as a column-major (c x r) Eigen map is the
// transpose for free. Routing every product through these views keeps Eigen
// on its fast col-major GEMM kernels regardless of operand orientation.
template <class T>
using CmMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>;
template <class T>
using CmMapMut = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>;

template <class T>
CmMap<T> as_transposed(const Tensor<T>& m) {
  return CmMap<T>(m.data(), static_cast<Eigen::Index>(m.cols()), static_cast<Eigen::Index>(m.rows()));
}

}  // namespace detail

/// Flat elementwise views, for vectorized unary/binary kernels.
template <class T>
Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> as_array(const Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.numel())};
}
template <class T>
Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> as_array(Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.numel())};
}

/// C (+)= op_a(A) * op_b(B) for 2-d tensors, where op is optional transpose.
/// All operands stay row-major; the kernel computes C^T = op(B)^T * op(A)^T
/// through transposed column-major views.
template <class T>
void gemm(Tensor<T>& c, const Tensor<T>& a, bool trans_a, const Tensor<T>& b, bool trans_b,
          bool accumulate) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != kb || c.rows() != m || c.cols() != n) {
    throw std::invalid_argument("gemm: shape mismatch");
  }
  auto at = detail::as_transposed(a);  // a^T
  auto bt = detail::as_transposed(b);  // b^T
  detail::CmMapMut<T> ct(c.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  // C^T = (AB)^T = B^T A^T; transposing an operand cancels the view transpose.
  if (!trans_a && !trans_b) {
    if (accumulate) ct.noalias() += bt * at;
    else ct.noalias() = bt * at;
  } else if (trans_a && !trans_b) {
    if (accumulate) ct.noalias() += bt * at.transpose();
    else ct.noalias() = bt * at.transpose();
  } else if (!trans_a && trans_b) {
    if (accumulate) ct.noalias() += bt.transpose() * at;
    else ct.noalias() = bt.transpose() * at;
  } else {
    if (accumulate) ct.noalias() += bt.transpose() * at.transpose();
    else ct.noalias() = bt.transpose() * at.transpose();
  }
}

template <class T>
Tensor<T> matmul_values(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> c({a.rows(), b.cols()});
  gemm(c, a, false, b, false, false);
  return c;
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ", ";
  }
  return out + ")";
}

}  // namespace qlae
