#include "disel/mixture.hpp"

#include "disel/errors.hpp"

namespace disel {

std::string_view to_string(Population p) { return p == Population::kFt ? "ft" : "pt"; }

void validate(const MixtureModel& mm) {
  const auto d = mm.mu_ft.size();
  if (d == 0) throw InvalidArgument("mixture: dimension must be >= 1");
  if (mm.mu_pt.size() != d || mm.sigma.rows() != d || mm.sigma.cols() != d) {
    throw InvalidArgument("mixture: means and covariance disagree on dimension");
  }
  if (mm.m.cols() != d || mm.w0.cols() != d || mm.w0.rows() != mm.m.rows()) {
    throw InvalidArgument("mixture: task matrix and frozen map must be d_y x d");
  }
  if (!all_finite(mm.mu_ft) || !all_finite(mm.mu_pt) || !all_finite(mm.m) || !all_finite(mm.w0)) {
    throw NumericError("mixture: non-finite parameters");
  }
  // Factorization doubles as the SPD check.
  (void)solve_spd(mm.sigma, Vector(Vector::Zero(d)));
}

Matrix second_moment(const MixtureModel& mm, Population p) {
  const Vector& mu = p == Population::kFt ? mm.mu_ft : mm.mu_pt;
  return mm.sigma + mu * mu.transpose();
}

Vector target(const MixtureModel& mm, Population p, const Vector& x) {
  Vector y = mm.w0 * x;
  if (p == Population::kFt) y.noalias() += mm.m * x;
  return y;
}

MixtureSampler::MixtureSampler(const MixtureModel& mm) : mu_ft_(mm.mu_ft), mu_pt_(mm.mu_pt) {
  validate(mm);
  Eigen::LLT<Matrix> llt(mm.sigma);
  chol_ = llt.matrixL();
}

Population MixtureSampler::draw_population(RngStream& rng) const {
  return rng.uniform() < 0.5 ? Population::kFt : Population::kPt;
}

Vector MixtureSampler::draw(Population p, RngStream& rng) const {
  const auto d = mu_ft_.size();
  Vector z(d);
  for (Eigen::Index i = 0; i < d; ++i) z[i] = rng.normal();
  Vector x = chol_.triangularView<Eigen::Lower>() * z;
  x += p == Population::kFt ? mu_ft_ : mu_pt_;
  return x;
}

}  // namespace disel
