#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tascforge/errors.hpp"

namespace tascforge {

// Dense multi-dimensional array of 64-bit floats, flat row-major storage.
// The last axis varies fastest; filter flattening and feature-map layout
// rely on this single canonical element order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  std::span<const double> span() const { return {data_.data(), data_.size()}; }
  std::span<double> span() { return {data_.data(), data_.size()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // rank-2 accessors
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Symmetric positive (semi-)definite matrix of order n, row-major n*n values.
// Symmetry is validated to 1e-10 relative on construction.
struct SPDMatrix {
  std::size_t n = 0;
  std::vector<double> data;

  SPDMatrix() = default;
  SPDMatrix(std::size_t order, std::vector<double> values);

  static SPDMatrix identity(std::size_t order);

  double at(std::size_t i, std::size_t j) const { return data[i * n + j]; }
  double& at(std::size_t i, std::size_t j) { return data[i * n + j]; }
};

struct CholeskyResult {
  Tensor lower;    // L with L*L^T = a + jitter*I
  double jitter;   // 0 when the plain factorization succeeded
};

// Lower-triangular Cholesky factor of a (+ jitter*I if needed). The first
// attempt uses no jitter; on failure the jitter escalates 1e-8 * 10^k up to
// 1e-2 before NotPositiveDefinite is thrown.
CholeskyResult cholesky_with_jitter(const SPDMatrix& a);
Tensor cholesky(const SPDMatrix& a);

// Solves L*x = b (or L^T*x = b when transposed) for rank-1 or rank-2 b.
Tensor triangular_solve(const Tensor& l, const Tensor& b, bool transposed = false);

Tensor matmul(const Tensor& a, const Tensor& b);

double dot(std::span<const double> u, std::span<const double> v);
double l2_norm(std::span<const double> u);
double l1_norm(std::span<const double> u);

double dot(const Tensor& u, const Tensor& v);
double l2_norm(const Tensor& u);
double l1_norm(const Tensor& u);

}  // namespace tascforge
