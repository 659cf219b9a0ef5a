// Dense row-major tensors and the handful of float kernels the model needs.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dtkt::num {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

/// Dense tensor with row-major storage. The model only ever needs rank 1
/// and rank 2; higher ranks are rejected at construction.
template <class T>
class basic_tensor {
 public:
  basic_tensor() = default;

  explicit basic_tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(validated_numel(shape_), fill) {}

  basic_tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (validated_numel(shape_) != data_.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape_) +
                                  " does not match data length " +
                                  std::to_string(data_.size()));
  }

  static basic_tensor from_vec(std::vector<T> v) {
    Shape s{v.size()};
    return basic_tensor(std::move(s), std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  bool same_shape(const basic_tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  static std::size_t validated_numel(const Shape& s) {
    if (s.empty() || s.size() > 2)
      throw std::invalid_argument("tensor: rank must be 1 or 2, got shape " + shape_str(s));
    for (std::size_t d : s)
      if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + shape_str(s));
    return shape_numel(s);
  }

  Shape shape_;
  std::vector<T> data_;
};

using TensorF = basic_tensor<float>;
using TensorD = basic_tensor<double>;

// ---------------------------------------------------------------------------
// Pointer-level kernels, shared by the forward path and the backward
// accumulation (which mixes double adjoints with float activations).
// Every reduction runs in ascending-index order so that identical math on
// different call sites produces bit-identical floats.
// ---------------------------------------------------------------------------

// c[m x n] += a[m x k] . b[k x n]
template <class R, class A, class B>
void gemm_nn_acc(R* c, const A* a, const B* b, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const A* ai = a + i * k;
    R* ci = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const R av = static_cast<R>(ai[kk]);
      const B* bk = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * static_cast<R>(bk[j]);
    }
  }
}

// c[m x n] += a[m x k] . b[n x k]^T
template <class R, class A, class B>
void gemm_nt_acc(R* c, const A* a, const B* b, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const A* ai = a + i * k;
    R* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const B* bj = b + j * k;
      R acc = R(0);
      for (std::size_t kk = 0; kk < k; ++kk) acc += static_cast<R>(ai[kk]) * static_cast<R>(bj[kk]);
      ci[j] += acc;
    }
  }
}

// c[m x n] += a[k x m]^T . b[k x n]
template <class R, class A, class B>
void gemm_tn_acc(R* c, const A* a, const B* b, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const A* ak = a + kk * m;
    const B* bk = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const R av = static_cast<R>(ak[i]);
      R* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * static_cast<R>(bk[j]);
    }
  }
}

// y[m] += a[m x k] . x[k]
template <class R, class A, class B>
void matvec_acc(R* y, const A* a, const B* x, std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const A* ai = a + i * k;
    R acc = R(0);
    for (std::size_t kk = 0; kk < k; ++kk) acc += static_cast<R>(ai[kk]) * static_cast<R>(x[kk]);
    y[i] += acc;
  }
}

// y[n] += w[m]^T . a[m x n]  (weighted sum of rows)
template <class R, class A, class B>
void vecmat_acc(R* y, const A* w, const B* a, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const R wi = static_cast<R>(w[i]);
    const B* ai = a + i * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += wi * static_cast<R>(ai[j]);
  }
}

// c[m x n] += x[m] . y[n]^T
template <class R, class A, class B>
void outer_acc(R* c, const A* x, const B* y, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const R xi = static_cast<R>(x[i]);
    R* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += xi * static_cast<R>(y[j]);
  }
}

// In-place numerically stable softmax of one row.
template <class T>
void softmax_row_inplace(T* v, std::size_t n) {
  T mx = v[0];
  for (std::size_t i = 1; i < n; ++i) mx = v[i] > mx ? v[i] : mx;
  T sum = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] - mx);
    sum += v[i];
  }
  for (std::size_t i = 0; i < n; ++i) v[i] /= sum;
}

// ---------------------------------------------------------------------------
// Shape-checked float wrappers for the forward path.
// ---------------------------------------------------------------------------

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

inline TensorF matmul(const TensorF& a, const TensorF& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
          "matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  TensorF c(Shape{a.rows(), b.cols()});
  gemm_nn_acc(c.data(), a.data(), b.data(), a.rows(), a.cols(), b.cols());
  return c;
}

inline TensorF matmul_nt(const TensorF& a, const TensorF& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
          "matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  TensorF c(Shape{a.rows(), b.rows()});
  gemm_nt_acc(c.data(), a.data(), b.data(), a.rows(), a.cols(), b.rows());
  return c;
}

// x may have any shape as long as it holds exactly cols(a) values.
inline TensorF matvec(const TensorF& a, const TensorF& x) {
  require(a.rank() == 2 && x.numel() == a.cols(),
          "matvec: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(x.shape()));
  TensorF y(Shape{a.rows()});
  matvec_acc(y.data(), a.data(), x.data(), a.rows(), a.cols());
  return y;
}

inline TensorF vecmat(const TensorF& w, const TensorF& a) {
  require(a.rank() == 2 && w.numel() == a.rows(),
          "vecmat: incompatible shapes " + shape_str(w.shape()) + " and " + shape_str(a.shape()));
  TensorF y(Shape{a.cols()});
  vecmat_acc(y.data(), w.data(), a.data(), a.rows(), a.cols());
  return y;
}

inline TensorF outer(const TensorF& x, const TensorF& y) {
  require(x.rank() == 1 && y.rank() == 1, "outer: expects two vectors, got " +
                                              shape_str(x.shape()) + " and " + shape_str(y.shape()));
  TensorF c(Shape{x.numel(), y.numel()});
  outer_acc(c.data(), x.data(), y.data(), x.numel(), y.numel());
  return c;
}

}  // namespace dtkt::num
