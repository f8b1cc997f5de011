#include "disel/numkit.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <string>

#include "disel/errors.hpp"

namespace disel {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer (Stafford variant 13).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr double kSigmoidLo = std::numeric_limits<double>::denorm_min();
// Largest double below 1.
constexpr double kSigmoidHi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;

std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t key)
    : seed_(seed), key_(key), base_(mix64(seed ^ mix64(key + kGolden))) {}

RngStream RngStream::derive(std::uint64_t key) const {
  return RngStream(seed_, mix64(key_ * 0xD1342543DE82EF95ULL + mix64(key ^ 0x632BE59BD9B4E019ULL)));
}

RngStream RngStream::derive(std::string_view purpose) const { return derive(hash_string(purpose)); }

RngStream RngStream::derive(std::string_view purpose, std::uint64_t index) const {
  return derive(purpose).derive(index);
}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(base_ + counter_ * kGolden);
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

double sigmoid(double z) {
  // Both branches are evaluated from exp(-|z|) <= 1, so neither overflows.
  const double e = std::exp(-std::abs(z));
  const double s = z >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
  return std::clamp(s, kSigmoidLo, kSigmoidHi);
}

Vector sigmoid(const Vector& z) { return z.unaryExpr([](double v) { return sigmoid(v); }); }

double kaiming_bound(std::size_t fan_in) {
  if (fan_in == 0) throw InvalidArgument("kaiming_uniform_init: fan_in must be >= 1");
  return std::sqrt(6.0 / static_cast<double>(fan_in));
}

Matrix kaiming_uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, RngStream& rng) {
  const double bound = kaiming_bound(fan_in);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, RngStream& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

Vector gaussian_vector(std::size_t dim, double stddev, RngStream& rng) {
  Vector v(dim);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = stddev * rng.normal();
  return v;
}

Vector mat_vec(const Matrix& m, const Vector& v) {
  if (m.cols() != v.size()) {
    throw InvalidArgument("mat_vec: " + shape_str(m.rows(), m.cols()) + " times vector of length " +
                          std::to_string(v.size()));
  }
  return m * v;
}

Matrix mat_mat(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw InvalidArgument("mat_mat: " + shape_str(a.rows(), a.cols()) + " times " + shape_str(b.rows(), b.cols()));
  }
  return a * b;
}

Matrix solve_spd(const Matrix& a, const Matrix& b) {
  if (a.rows() != a.cols() || a.rows() != b.rows()) {
    throw InvalidArgument("solve_spd: system " + shape_str(a.rows(), a.cols()) + " with rhs " +
                          shape_str(b.rows(), b.cols()));
  }
  if (!all_finite(a) || !all_finite(b)) throw NumericError("solve_spd: non-finite input");
  const double scale = a.cwiseAbs().maxCoeff();
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(scale, 1.0)) {
    throw NumericError("solve_spd: matrix is not symmetric");
  }
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericError("solve_spd: matrix is not positive definite");
  Matrix x = llt.solve(b);
  if (!all_finite(x)) throw NumericError("solve_spd: non-finite solution");
  return x;
}

Vector solve_spd(const Matrix& a, const Vector& b) {
  Matrix rhs = b;  // column
  return solve_spd(a, rhs).col(0);
}

Svd thin_svd(const Matrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return Svd{svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

std::uint64_t content_hash(std::span<const double> values) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (double d : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &d, sizeof(double));
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

std::uint64_t content_hash(const Matrix& m) { return content_hash(as_span(m)); }

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn, std::size_t threads) {
  if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace disel
