#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tascforge/tensor.hpp"

using namespace tascforge;

namespace {

// Oracle: multiply L*L^T back and compare against a + jitter*I.
double max_reconstruction_error(const SPDMatrix& a, const CholeskyResult& r) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.n; ++i) {
    for (std::size_t j = 0; j < a.n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.n; ++k) s += r.lower.at(i, k) * r.lower.at(j, k);
      double want = a.at(i, j) + (i == j ? r.jitter : 0.0);
      worst = std::max(worst, std::fabs(s - want));
    }
  }
  return worst;
}

SPDMatrix random_spd(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> b(n * n);
  for (auto& x : b) x = g(rng);
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += b[i * n + k] * b[j * n + k];
      a[i * n + j] = s + (i == j ? 0.1 : 0.0);
    }
  return SPDMatrix(n, std::move(a));
}

}  // namespace

TEST_CASE("tensor shape invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(Tensor({2, 0}), Error);
  CHECK_THROWS_AS(Tensor(std::vector<std::size_t>{}), Error);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), Error);
}

TEST_CASE("cholesky of identity is identity") {
  auto r = cholesky_with_jitter(SPDMatrix::identity(3));
  CHECK(r.jitter == 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(r.lower.at(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("cholesky reconstructs [[4,2],[2,3]] to 1e-12") {
  SPDMatrix a(2, {4, 2, 2, 3});
  auto r = cholesky_with_jitter(a);
  CHECK(r.jitter == 0.0);
  CHECK(max_reconstruction_error(a, r) <= 1e-12);
}

TEST_CASE("cholesky rejects indefinite [[1,2],[2,1]]") {
  SPDMatrix a(2, {1, 2, 2, 1});
  CHECK_THROWS_AS(cholesky(a), Error);
  try {
    cholesky(a);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotPositiveDefinite);
  }
}

TEST_CASE("cholesky reconstruction property on random SPD matrices") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t n = 1 + static_cast<std::size_t>(rng() % 8);
    auto a = random_spd(n, rng);
    auto r = cholesky_with_jitter(a);
    double scale = 0.0;
    for (double v : a.data) scale = std::max(scale, std::fabs(v));
    CHECK(max_reconstruction_error(a, r) <= 1e-8 * std::max(scale, 1.0) + r.jitter);
  }
}

TEST_CASE("triangular_solve basic cases") {
  Tensor eye = Tensor::identity(2);
  Tensor b({2}, {1, 2});
  auto x = triangular_solve(eye, b);
  CHECK(x[0] == 1.0);
  CHECK(x[1] == 2.0);

  Tensor l({2, 2}, {2, 0, 1, 1});
  Tensor b2({2}, {2, 3});
  auto x2 = triangular_solve(l, b2);
  // substitute back: L*x must give b
  CHECK(l.at(0, 0) * x2[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(l.at(1, 0) * x2[0] + l.at(1, 1) * x2[1] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(x2[0] == doctest::Approx(1.0));
  CHECK(x2[1] == doctest::Approx(2.0));

  Tensor zdiag({2, 2}, {1, 0, 1, 0});
  CHECK_THROWS_AS(triangular_solve(zdiag, b), Error);
}

TEST_CASE("cholesky-solve composition solves a*x = b") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 2 + static_cast<std::size_t>(rng() % 6);
    auto a = random_spd(n, rng);
    Tensor b({n});
    for (std::size_t i = 0; i < n; ++i) b[i] = g(rng);
    auto l = cholesky(a);
    auto x = triangular_solve(l, triangular_solve(l, b), /*transposed=*/true);
    double binf = 0.0, resid = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a.at(i, j) * x[j];
      resid = std::max(resid, std::fabs(s - b[i]));
      binf = std::max(binf, std::fabs(b[i]));
    }
    CHECK(resid <= 1e-6 * binf);
  }
}

TEST_CASE("norms and dot") {
  Tensor u({3}, {1, -2, 3});
  CHECK(l1_norm(u) == 6.0);
  CHECK(l2_norm(u) == doctest::Approx(std::sqrt(14.0)));
  Tensor e0({2}, {1, 0}), e1({2}, {0, 1});
  CHECK(dot(e0, e1) == 0.0);
  CHECK_THROWS_AS(dot(u, e0), Error);
  CHECK_THROWS_AS(l1_norm(Tensor({1}, {0}).span().subspan(0, 0)), Error);
}

TEST_CASE("l1 norm absolute homogeneity") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_real_distribution<double> cs(-5.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 1 + rng() % 10;
    Tensor u({n});
    for (auto& x : u.values()) x = g(rng);
    double c = cs(rng);
    Tensor cu({n});
    for (std::size_t i = 0; i < n; ++i) cu[i] = c * u[i];
    CHECK(l1_norm(cu) == doctest::Approx(std::fabs(c) * l1_norm(u)).epsilon(1e-12));
  }
}

TEST_CASE("matmul identity and shape errors") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  auto prod = matmul(a, Tensor::identity(3));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(prod[i] == a[i]);
  CHECK_THROWS_AS(matmul(a, Tensor({2, 2})), Error);

  // hand-checked 2x2 product
  Tensor m({2, 2}, {1, 2, 3, 4}), n({2, 2}, {5, 6, 7, 8});
  auto p = matmul(m, n);
  CHECK(p.at(0, 0) == 19.0);
  CHECK(p.at(0, 1) == 22.0);
  CHECK(p.at(1, 0) == 43.0);
  CHECK(p.at(1, 1) == 50.0);
}

TEST_CASE("SPD symmetry validation") {
  CHECK_THROWS_AS(SPDMatrix(2, {1, 2, 2.1, 1}), Error);
}
