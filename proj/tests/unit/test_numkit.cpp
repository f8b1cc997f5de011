#include <atomic>
#include <cmath>
#include <limits>
#include <set>

#include "disel/errors.hpp"
#include "disel/numkit.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace disel;

TEST_CASE("rng streams are pure functions of seed, key and position") {
  RngStream a(42);
  RngStream b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c(43);
  RngStream d(42);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += c.next_u64() == d.next_u64();
  CHECK(same == 0);
}

TEST_CASE("derived streams do not advance the parent and differ by key") {
  RngStream root(7);
  RngStream probe(7);
  const auto x = root.derive("train").next_u64();
  CHECK(root.next_u64() == probe.next_u64());
  CHECK(root.derive("train").next_u64() == x);
  CHECK(root.derive("eval").next_u64() != x);
  CHECK(root.derive("batch", 1).next_u64() != root.derive("batch", 2).next_u64());
  CHECK(root.derive(5).next_u64() == RngStream(7).derive(5).next_u64());
}

TEST_CASE("uniform and normal draws have the expected moments") {
  RngStream rng(1);
  const int n = 200000;
  double su = 0, su2 = 0, sn = 0, sn2 = 0;
  double lo = 1, hi = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    su += u;
    su2 += u * u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(su2 / n - (su / n) * (su / n) == doctest::Approx(1.0 / 12.0).epsilon(0.02));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("sigmoid is finite, symmetric and strictly inside (0, 1)") {
  for (double z : {-1e308, -800.0, -40.0, -1.0, 0.0, 1.0, 40.0, 800.0, 1e308}) {
    const double s = sigmoid(z);
    CHECK(std::isfinite(s));
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  CHECK(sigmoid(0.0) == 0.5);
  for (double z : {-5.0, -0.3, 0.7, 3.0}) {
    CHECK(sigmoid(z) == doctest::Approx(ref::logistic(z)).epsilon(1e-15));
    CHECK(sigmoid(z) + sigmoid(-z) == doctest::Approx(1.0).epsilon(1e-15));
  }
  // monotone across the clamp boundary
  double prev = 0.0;
  for (double z = -60.0; z <= 60.0; z += 0.25) {
    CHECK(sigmoid(z) >= prev);
    prev = sigmoid(z);
  }
}

TEST_CASE("kaiming init respects its bound") {
  CHECK(kaiming_bound(6) == doctest::Approx(1.0));
  CHECK_THROWS_AS(kaiming_bound(0), InvalidArgument);
  RngStream rng(3);
  const Matrix w = kaiming_uniform_init(30, 24, 24, rng);
  const double bound = std::sqrt(6.0 / 24.0);
  CHECK(w.cwiseAbs().maxCoeff() <= bound);
  CHECK(w.cwiseAbs().maxCoeff() > 0.9 * bound);
}

TEST_CASE("solve_spd agrees with an explicit inverse") {
  RngStream rng(11);
  for (std::size_t n : {1u, 3u, 8u}) {
    const Matrix g = ref::random_matrix(n, n, rng);
    Matrix a = ref::matmul(g, g.transpose());
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, i) += 0.5;
    const Matrix b = ref::random_matrix(n, 2, rng);
    const Matrix x = solve_spd(a, b);
    CHECK(ref::max_abs_diff(x, ref::matmul(ref::inverse(a), b)) < 1e-10);
  }
}

TEST_CASE("solve_spd rejects indefinite and mismatched systems") {
  Matrix a(2, 2);
  a << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(solve_spd(a, Vector(Vector::Ones(2))), NumericError);
  CHECK_THROWS_AS(solve_spd(Matrix(Matrix::Identity(2, 2)), Vector(Vector::Ones(3))), InvalidArgument);
}

TEST_CASE("thin svd reconstructs and orders singular values") {
  RngStream rng(5);
  const Matrix m = ref::matmul(ref::random_matrix(6, 2, rng), ref::random_matrix(2, 5, rng));
  const Svd s = thin_svd(m);
  for (Eigen::Index i = 1; i < s.s.size(); ++i) CHECK(s.s[i - 1] >= s.s[i]);
  const Matrix rebuilt = ref::matmul(ref::matmul(s.u, Matrix(s.s.asDiagonal())), s.v.transpose());
  CHECK(ref::max_abs_diff(rebuilt, m) < 1e-12);
  CHECK(s.s[2] < 1e-12 * s.s[0]);
}

TEST_CASE("content hash sees single-bit changes") {
  Matrix m = Matrix::Ones(3, 3);
  const auto h = content_hash(m);
  m(1, 1) = std::nextafter(1.0, 2.0);
  CHECK(content_hash(m) != h);
  m(1, 1) = 1.0;
  CHECK(content_hash(m) == h);
}

TEST_CASE("all_finite detects nan and inf") {
  Vector v = Vector::Zero(4);
  CHECK(all_finite(v));
  v[2] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(all_finite(v));
  Matrix m = Matrix::Zero(2, 2);
  m(0, 1) = std::nan("");
  CHECK_FALSE(all_finite(m));
}

TEST_CASE("parallel_for visits each index once for any thread count") {
  for (std::size_t threads : {1u, 2u, 7u, 0u}) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; }, threads);
    bool ok = true;
    for (auto& h : hits) ok = ok && h.load() == 1;
    CHECK(ok);
  }
  parallel_for(0, [](std::size_t) { FAIL("called"); });
}

TEST_CASE("mat_vec and mat_mat match loops") {
  RngStream rng(9);
  const Matrix a = ref::random_matrix(5, 4, rng);
  const Matrix b = ref::random_matrix(4, 3, rng);
  const Vector x = ref::random_vector(4, rng);
  CHECK(ref::max_abs_diff(mat_vec(a, x), ref::matvec(a, x)) < 1e-14);
  CHECK(ref::max_abs_diff(mat_mat(a, b), ref::matmul(a, b)) < 1e-14);
}
