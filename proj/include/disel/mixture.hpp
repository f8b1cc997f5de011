#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

#include "disel/numkit.hpp"

namespace disel {

/// Which population an input was drawn from: the fine-tuning one, where the
/// target carries the task correction, or the pre-training one, where the
/// frozen map is already correct.
enum class Population : std::uint8_t { kFt = 0, kPt = 1 };

std::string_view to_string(Population p);

/// Two equal-covariance Gaussian populations and the regression rule
/// y = (W0 + M) x on ft draws, y = W0 x on pt draws.
struct MixtureModel {
  Vector mu_ft;
  Vector mu_pt;
  Matrix sigma;  // shared covariance, d x d
  Matrix m;      // task correction, d_y x d
  Matrix w0;     // frozen map, d_y x d

  [[nodiscard]] std::size_t d() const { return static_cast<std::size_t>(mu_ft.size()); }
  [[nodiscard]] std::size_t d_y() const { return static_cast<std::size_t>(m.rows()); }
};

/// Throws InvalidArgument on inconsistent shapes, NumericError when sigma
/// is not symmetric positive-definite.
void validate(const MixtureModel& mm);

/// Uncentered second moment E[x x^T] = sigma + mu mu^T of one population.
Matrix second_moment(const MixtureModel& mm, Population p);

/// Noiseless regression target for an input from population p.
Vector target(const MixtureModel& mm, Population p, const Vector& x);

/// Draws inputs from either population; holds the Cholesky factor of sigma.
class MixtureSampler {
 public:
  explicit MixtureSampler(const MixtureModel& mm);

  [[nodiscard]] Population draw_population(RngStream& rng) const;
  [[nodiscard]] Vector draw(Population p, RngStream& rng) const;

 private:
  Vector mu_ft_;
  Vector mu_pt_;
  Matrix chol_;  // lower triangular
};

}  // namespace disel
