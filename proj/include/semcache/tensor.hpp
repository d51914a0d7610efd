/* Copyright 2026 The semcache Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Dense numerical kernel. Every routine here is a pure function with a fixed
// evaluation order, so identical inputs give bitwise-identical outputs.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "semcache/errors.hpp"

namespace semcache {

template <typename Scalar>
using MatrixX =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

// N-dimensional row-major array. Used where a rank other than two is needed
// (latent videos, serialized fixtures); matrices use MatrixX directly.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(VectorX<Scalar>::Zero(numel(shape_))) {}

  Tensor(std::vector<std::size_t> shape, VectorX<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != numel(shape_)) {
      throw DimensionError("tensor data length " +
                           std::to_string(data_.size()) +
                           " does not match shape product " +
                           std::to_string(numel(shape_)));
    }
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }

  const VectorX<Scalar>& data() const { return data_; }
  VectorX<Scalar>& data() { return data_; }

  Scalar operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static std::size_t numel(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  VectorX<Scalar> data_ = VectorX<Scalar>::Zero(1);
};

// Standard matrix product. Each output entry is accumulated over k in
// ascending order, starting from zero.
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ (" +
                         std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " times " +
                         std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
  const MatrixX<Scalar> lhs = a;
  const MatrixX<Scalar> rhs = b;
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(lhs.rows(), rhs.cols());
  for (Eigen::Index i = 0; i < lhs.rows(); ++i) {
    for (Eigen::Index k = 0; k < lhs.cols(); ++k) {
      const Scalar aik = lhs(i, k);
      for (Eigen::Index j = 0; j < rhs.cols(); ++j) {
        out(i, j) += aik * rhs(k, j);
      }
    }
  }
  return out;
}

// Row-wise softmax with max subtraction.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = a;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (out.cols() == 0) break;
    Scalar row_max = out(i, 0);
    for (Eigen::Index j = 1; j < out.cols(); ++j) row_max = std::max(row_max, out(i, j));
    Scalar sum = 0;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out(i, j) = std::exp(out(i, j) - row_max);
      sum += out(i, j);
    }
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) /= sum;
  }
  return out;
}

// Normalizes each row of `x` to zero mean and unit (population) variance,
// then applies the affine `gamma`, `beta`. eps is added to the variance.
template <typename Derived>
MatrixX<typename Derived::Scalar> layer_norm(
    const Eigen::MatrixBase<Derived>& x, const VectorX<typename Derived::Scalar>& gamma,
    const VectorX<typename Derived::Scalar>& beta, typename Derived::Scalar eps) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index channels = x.cols();
  if (gamma.size() != channels || beta.size() != channels) {
    throw DimensionError("layer_norm: affine parameters have length " +
                         std::to_string(gamma.size()) + "/" +
                         std::to_string(beta.size()) + ", expected " +
                         std::to_string(channels));
  }
  MatrixX<Scalar> out(x.rows(), channels);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Scalar mean = 0;
    for (Eigen::Index c = 0; c < channels; ++c) mean += x(i, c);
    mean /= static_cast<Scalar>(channels);
    Scalar var = 0;
    for (Eigen::Index c = 0; c < channels; ++c) {
      const Scalar d = x(i, c) - mean;
      var += d * d;
    }
    var /= static_cast<Scalar>(channels);
    const Scalar inv_std = Scalar(1) / std::sqrt(var + eps);
    for (Eigen::Index c = 0; c < channels; ++c) {
      out(i, c) = (x(i, c) - mean) * inv_std * gamma[c] + beta[c];
    }
  }
  return out;
}

namespace detail {

// Flips `v` so its largest-magnitude component (first on ties) is positive.
template <typename Scalar>
void canonical_sign(VectorX<Scalar>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  if (v[best] < 0) v = -v;
}

template <typename Scalar>
void orthogonalize(VectorX<Scalar>& v, const MatrixX<Scalar>& basis, Eigen::Index count) {
  for (Eigen::Index j = 0; j < count; ++j) {
    const VectorX<Scalar> b = basis.col(j);
    v -= b.dot(v) * b;
  }
}

// Any unit vector orthogonal to the first `count` basis columns.
template <typename Scalar>
VectorX<Scalar> orthogonal_fill(const MatrixX<Scalar>& basis, Eigen::Index count) {
  const Eigen::Index n = basis.rows();
  for (Eigen::Index e = 0; e < n; ++e) {
    VectorX<Scalar> v = VectorX<Scalar>::Unit(n, e);
    orthogonalize(v, basis, count);
    orthogonalize(v, basis, count);
    const Scalar norm = v.norm();
    if (norm > Scalar(1e-6)) return v / norm;
  }
  return VectorX<Scalar>::Unit(n, 0);
}

}  // namespace detail

// Leading `k` eigenvectors of a symmetric positive semi-definite matrix, as
// columns ordered by decreasing eigenvalue. Uses power iteration with
// deflation (tolerance 1e-10 on the iterate, at most 1000 iterations per
// vector). Columns are sign-normalized so their largest-magnitude component
// is positive. Within a repeated eigenvalue any orthonormal basis of the
// eigenspace may be returned.
template <typename Derived>
MatrixX<typename Derived::Scalar> top_eigvecs(const Eigen::MatrixBase<Derived>& cov,
                                              Eigen::Index k) {
  using Scalar = typename Derived::Scalar;
  constexpr int kMaxIterations = 1000;
  constexpr Scalar kTolerance = Scalar(1e-10);

  const Eigen::Index n = cov.rows();
  if (cov.cols() != n) {
    throw DimensionError("top_eigvecs: matrix is " + std::to_string(n) + "x" +
                         std::to_string(cov.cols()) + ", expected square");
  }
  if (k < 0 || k > n) {
    throw DimensionError("top_eigvecs: k=" + std::to_string(k) +
                         " outside [0, " + std::to_string(n) + "]");
  }
  MatrixX<Scalar> work = cov;
  const Scalar scale = std::max(Scalar(1), work.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (std::abs(work(i, j) - work(j, i)) > Scalar(1e-9) * scale) {
        throw ContractError("top_eigvecs: input is not symmetric at (" +
                            std::to_string(i) + ", " + std::to_string(j) + ")");
      }
    }
  }

  MatrixX<Scalar> vecs = MatrixX<Scalar>::Zero(n, k);
  for (Eigen::Index col = 0; col < k; ++col) {
    // Start from the deflated matrix's strongest column.
    Eigen::Index start = 0;
    Scalar best = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      const Scalar norm = work.col(j).norm();
      if (norm > best) {
        best = norm;
        start = j;
      }
    }
    VectorX<Scalar> v = work.col(start);
    detail::orthogonalize(v, vecs, col);
    Scalar norm = v.norm();
    if (!(norm > Scalar(0)) || best <= Scalar(1e-300)) {
      v = detail::orthogonal_fill(vecs, col);
    } else {
      v /= norm;
      detail::canonical_sign(v);
      for (int it = 0; it < kMaxIterations; ++it) {
        VectorX<Scalar> next = matmul(work, v).col(0);
        detail::orthogonalize(next, vecs, col);
        norm = next.norm();
        if (!(norm > Scalar(0))) {
          next = detail::orthogonal_fill(vecs, col);
        } else {
          next /= norm;
        }
        detail::canonical_sign(next);
        const Scalar change = (next - v).norm();
        v = next;
        if (change < kTolerance) break;
      }
    }
    detail::canonical_sign(v);
    vecs.col(col) = v;
    const Scalar lambda = v.dot(matmul(work, v).col(0));
    work -= lambda * v * v.transpose();
  }
  return vecs;
}

}  // namespace semcache
