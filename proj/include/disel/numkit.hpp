#pragma once

// Dense linear algebra, keyed random streams, initializers and the sigmoid.
// Matrices are row-major real64; everything else builds on these aliases.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>

namespace disel {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Counter-based random stream. Output i of a stream is a pure function of
/// (seed, key, i), so streams can be re-created anywhere and sub-streams
/// derived by key without coordinating draw order across threads.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t key = 0);

  /// Independent child stream; the parent is not advanced.
  [[nodiscard]] RngStream derive(std::uint64_t key) const;
  [[nodiscard]] RngStream derive(std::string_view purpose) const;
  [[nodiscard]] RngStream derive(std::string_view purpose, std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller; platform independent, unlike
  /// std::normal_distribution.
  double normal();

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] std::uint64_t key() const { return key_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t hash_string(std::string_view s);

/// Logistic function, evaluated without overflow for any finite input. The
/// result is clamped to the open interval (0, 1): it never rounds to exactly
/// 0 or 1 in double precision.
double sigmoid(double z);
Vector sigmoid(const Vector& z);

/// He/Kaiming uniform bound for the rectifier gain: sqrt(6 / fan_in).
double kaiming_bound(std::size_t fan_in);
Matrix kaiming_uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, RngStream& rng);

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, RngStream& rng);
Vector gaussian_vector(std::size_t dim, double stddev, RngStream& rng);

Vector mat_vec(const Matrix& m, const Vector& v);
Matrix mat_mat(const Matrix& a, const Matrix& b);

/// Solves a X = b for symmetric positive-definite a via Cholesky.
/// Throws InvalidArgument on shape mismatch and NumericError when a is not SPD.
Matrix solve_spd(const Matrix& a, const Matrix& b);
Vector solve_spd(const Matrix& a, const Vector& b);

struct Svd {
  Matrix u;  // rows x k
  Vector s;  // k, descending
  Matrix v;  // cols x k
};
Svd thin_svd(const Matrix& m);

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

/// FNV-1a over the raw bytes; used to prove frozen weights stay untouched.
std::uint64_t content_hash(std::span<const double> values);
std::uint64_t content_hash(const Matrix& m);

/// Runs fn(i) for every i in [0, count) on a small worker pool (threads = 0
/// picks the hardware concurrency). Callers write results into per-index
/// slots and reduce them in index order, which keeps results independent of
/// the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn, std::size_t threads = 0);

inline std::span<double> as_span(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<double> as_span(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline std::span<const double> as_span(const Matrix& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
inline std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace disel
