#include "fedsilo/numkit.hpp"

#include <cmath>
#include <set>

#include "doctest.h"

using namespace fedsilo;
using namespace fedsilo::numkit;

TEST_CASE("matvec identity and zero cases") {
  const Matrix id = Matrix::identity(3);
  CHECK(matvec(id, {1.0, 2.0, 3.0}) == Vector{1.0, 2.0, 3.0});

  const Matrix zeros(2, 2);
  CHECK(matvec(zeros, {5.0, 7.0}) == Vector{0.0, 0.0});

  const Matrix m(2, 2, {1.0, 2.0, 3.0, 4.0});
  CHECK(matvec(m, {1.0, 1.0}) == Vector{3.0, 7.0});
}

TEST_CASE("matvec rejects dimension mismatch") {
  const Matrix m(2, 3);
  CHECK_THROWS_AS(matvec(m, {1.0, 2.0}), Error);
  try {
    matvec(m, {1.0, 2.0});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
  }
}

TEST_CASE("matrix construction validates length and finiteness") {
  CHECK_THROWS_AS(Matrix(2, 2, {1.0, 2.0, 3.0}), Error);
  CHECK_THROWS_AS(Matrix(1, 2, {1.0, std::nan("")}), Error);
}

TEST_CASE("matmul against hand arithmetic and inverse round trip") {
  const Matrix a(2, 2, {1.0, 2.0, 3.0, 4.0});
  const Matrix b(2, 2, {0.0, 1.0, 1.0, 0.0});
  const Matrix ab = matmul(a, b);
  CHECK(ab == Matrix(2, 2, {2.0, 1.0, 4.0, 3.0}));

  const Matrix inv = inverse(a);
  const Matrix prod = matmul(a, inv);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(prod.at(r, c) == doctest::Approx(r == c ? 1.0 : 0.0).epsilon(1e-12));

  CHECK(determinant(a) == doctest::Approx(-2.0));
  CHECK_THROWS_AS(inverse(Matrix(2, 2, {1.0, 2.0, 2.0, 4.0})), Error);
}

TEST_CASE("finite_diff_grad on analytic functions") {
  const auto norm_sq = [](const Vector& x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return acc;
  };
  const Vector g1 = finite_diff_grad(norm_sq, {1.0, -2.0}, 1e-5);
  CHECK(std::abs(g1[0] - 2.0) < 1e-6);
  CHECK(std::abs(g1[1] + 4.0) < 1e-6);

  const Vector g2 = finite_diff_grad([](const Vector&) { return 3.5; }, {0.2, -9.0, 4.0}, 1e-5);
  for (double v : g2) CHECK(std::abs(v) < 1e-9);

  const Vector g3 = finite_diff_grad([](const Vector& x) { return x[0] * x[1]; }, {3.0, 5.0}, 1e-5);
  CHECK(std::abs(g3[0] - 5.0) < 1e-6);
  CHECK(std::abs(g3[1] - 3.0) < 1e-6);
}

TEST_CASE("finite_diff_grad surfaces the offending coordinate") {
  const auto bad = [](const Vector& x) { return x[1] > 0.0 ? std::nan("") : 0.0; };
  try {
    finite_diff_grad(bad, {0.0, 1.0}, 1e-3);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNumeric);
    CHECK(std::string(e.what()).find("coordinate 0") != std::string::npos);
  }
}

TEST_CASE("rng streams are deterministic and fork-independent") {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  // forks depend on the key, not on how much the parent has drawn
  Rng fresh(42);
  Rng drained(42);
  for (int i = 0; i < 17; ++i) drained.next_u64();
  Rng f1 = fresh.fork("label", 3, 9);
  Rng f2 = drained.fork("label", 3, 9);
  for (int i = 0; i < 20; ++i) CHECK(f1.next_u64() == f2.next_u64());

  // distinct labels and ids give distinct streams
  CHECK(Rng(7).fork("a").next_u64() != Rng(7).fork("b").next_u64());
  CHECK(Rng(7).fork("a", 1).next_u64() != Rng(7).fork("a", 2).next_u64());
}

TEST_CASE("rng uniform and permutation behave") {
  Rng rng(123);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 200; ++i) {
    const auto v = rng.below(7);
    CHECK(v < 7);
  }
  const auto perm = rng.permutation(50);
  std::set<std::size_t> seen(perm.begin(), perm.end());
  CHECK(seen.size() == 50);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 49);
}

TEST_CASE("rng normal is roughly standard") {
  Rng rng(2024);
  double sum = 0.0, sum_sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum_sq += z * z;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.05);
}
