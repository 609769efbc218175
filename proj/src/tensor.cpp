#include "tascforge/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

namespace tascforge {

namespace {

std::size_t checked_element_count(const std::vector<std::size_t>& shape) {
  if (shape.empty()) fail(ErrorCode::ShapeMismatch, "tensor shape must be non-empty");
  std::size_t count = 1;
  for (std::size_t d : shape) {
    if (d == 0) fail(ErrorCode::ShapeMismatch, "tensor dims must be >= 1");
    count *= d;
  }
  return count;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_element_count(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_element_count(shape_) != data_.size())
    fail(ErrorCode::ShapeMismatch, "data length does not match product(shape)");
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

SPDMatrix::SPDMatrix(std::size_t order, std::vector<double> values)
    : n(order), data(std::move(values)) {
  if (n == 0) fail(ErrorCode::ShapeMismatch, "SPD matrix order must be >= 1");
  if (data.size() != n * n) fail(ErrorCode::ShapeMismatch, "SPD matrix needs n*n values");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double a = at(i, j), b = at(j, i);
      double scale = std::max({std::fabs(a), std::fabs(b), 1.0});
      if (std::fabs(a - b) > 1e-10 * scale)
        fail(ErrorCode::ShapeMismatch, "matrix is not symmetric within 1e-10 relative");
    }
  }
}

SPDMatrix SPDMatrix::identity(std::size_t order) {
  SPDMatrix m;
  m.n = order;
  m.data.assign(order * order, 0.0);
  for (std::size_t i = 0; i < order; ++i) m.at(i, i) = 1.0;
  return m;
}

namespace {

// One factorization attempt; fails when any pivot is non-positive or non-finite.
bool try_cholesky(const SPDMatrix& a, double jitter, Tensor& out) {
  const std::size_t n = a.n;
  out = Tensor({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = a.at(i, j) + (i == j ? jitter : 0.0);
      for (std::size_t k = 0; k < j; ++k) sum -= out.at(i, k) * out.at(j, k);
      if (i == j) {
        if (!(sum > 0.0) || !std::isfinite(sum)) return false;
        out.at(i, i) = std::sqrt(sum);
      } else {
        out.at(i, j) = sum / out.at(j, j);
      }
    }
  }
  return true;
}

}  // namespace

CholeskyResult cholesky_with_jitter(const SPDMatrix& a) {
  Tensor l;
  if (try_cholesky(a, 0.0, l)) return {std::move(l), 0.0};
  for (double jitter = 1e-8; jitter <= 1e-2 * (1.0 + 1e-12); jitter *= 10.0) {
    if (try_cholesky(a, jitter, l)) return {std::move(l), jitter};
  }
  fail(ErrorCode::NotPositiveDefinite,
       "matrix not positive definite after jitter escalation to 1e-2");
}

Tensor cholesky(const SPDMatrix& a) { return cholesky_with_jitter(a).lower; }

Tensor triangular_solve(const Tensor& l, const Tensor& b, bool transposed) {
  if (l.rank() != 2 || l.dim(0) != l.dim(1))
    fail(ErrorCode::ShapeMismatch, "triangular_solve expects a square rank-2 L");
  const std::size_t n = l.dim(0);
  if (b.rank() < 1 || b.rank() > 2 || b.dim(0) != n)
    fail(ErrorCode::ShapeMismatch, "rhs not conformable with L");
  for (std::size_t i = 0; i < n; ++i)
    if (l.at(i, i) == 0.0)
      fail(ErrorCode::SingularMatrix, "zero diagonal entry at row " + std::to_string(i));

  const std::size_t cols = b.rank() == 2 ? b.dim(1) : 1;
  Tensor x(b.shape(), b.values());
  auto elem = [&](Tensor& t, std::size_t i, std::size_t c) -> double& {
    return t[i * cols + c];
  };
  for (std::size_t c = 0; c < cols; ++c) {
    if (!transposed) {
      for (std::size_t i = 0; i < n; ++i) {
        double sum = elem(x, i, c);
        for (std::size_t k = 0; k < i; ++k) sum -= l.at(i, k) * elem(x, k, c);
        elem(x, i, c) = sum / l.at(i, i);
      }
    } else {
      for (std::size_t ii = n; ii-- > 0;) {
        double sum = elem(x, ii, c);
        for (std::size_t k = ii + 1; k < n; ++k) sum -= l.at(k, ii) * elem(x, k, c);
        elem(x, ii, c) = sum / l.at(ii, ii);
      }
    }
  }
  return x;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    fail(ErrorCode::ShapeMismatch, "matmul expects rank-2 operands with matching inner dim");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double apv = a.at(i, p);
      if (apv == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += apv * b.at(p, j);
    }
  }
  return out;
}

double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) fail(ErrorCode::ShapeMismatch, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double l2_norm(std::span<const double> u) {
  if (u.empty()) fail(ErrorCode::ShapeMismatch, "l2_norm: empty vector");
  double s = 0.0;
  for (double x : u) s += x * x;
  return std::sqrt(s);
}

double l1_norm(std::span<const double> u) {
  if (u.empty()) fail(ErrorCode::ShapeMismatch, "l1_norm: empty vector");
  double s = 0.0;
  for (double x : u) s += std::fabs(x);
  return s;
}

double dot(const Tensor& u, const Tensor& v) { return dot(u.span(), v.span()); }
double l2_norm(const Tensor& u) { return l2_norm(u.span()); }
double l1_norm(const Tensor& u) { return l1_norm(u.span()); }

}  // namespace tascforge
