#include "disel/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "disel/errors.hpp"

namespace disel {

namespace {

constexpr std::size_t kMcChunk = 8192;
constexpr double kSingularCutoff = 1e-10;
constexpr double kFactorResidualTol = 1e-8;

void check_correction_shapes(const Matrix& m, const Matrix& s_ft, const Matrix& s_pt, const char* where) {
  if (s_ft.rows() != m.cols() || s_ft.cols() != m.cols() || s_pt.rows() != m.cols() || s_pt.cols() != m.cols()) {
    throw InvalidArgument(std::string(where) + ": second moments must be d x d with d = cols(M)");
  }
}

}  // namespace

Matrix fixed_optimum(const Matrix& m, const Matrix& second_moment_ft, const Matrix& second_moment_pt) {
  check_correction_shapes(m, second_moment_ft, second_moment_pt, "fixed_optimum");
  // Delta^T = (S_ft + S_pt)^-1 S_ft M^T since both moments are symmetric.
  const Matrix sum = second_moment_ft + second_moment_pt;
  const Matrix rhs = second_moment_ft * m.transpose();
  return solve_spd(sum, rhs).transpose();
}

double fixed_loss(const Matrix& delta, const Matrix& m, const Matrix& second_moment_ft,
                  const Matrix& second_moment_pt) {
  check_correction_shapes(m, second_moment_ft, second_moment_pt, "fixed_loss");
  const Matrix e = delta - m;
  return 0.5 * (e * second_moment_ft * e.transpose()).trace() +
         0.5 * (delta * second_moment_pt * delta.transpose()).trace();
}

Matrix fixed_loss_gradient(const Matrix& delta, const Matrix& m, const Matrix& second_moment_ft,
                           const Matrix& second_moment_pt) {
  check_correction_shapes(m, second_moment_ft, second_moment_pt, "fixed_loss_gradient");
  return (delta - m) * second_moment_ft + delta * second_moment_pt;
}

double fixed_floor_loss(const Matrix& m, const Matrix& second_moment) {
  if (second_moment.rows() != m.cols() || second_moment.cols() != m.cols()) {
    throw InvalidArgument("fixed_floor_loss: second moment must be d x d with d = cols(M)");
  }
  return 0.25 * (m * second_moment * m.transpose()).trace();
}

double fixed_floor_loss(const MixtureModel& mm) {
  validate(mm);
  const Matrix s_ft = second_moment(mm, Population::kFt);
  const Matrix s_pt = second_moment(mm, Population::kPt);
  const double scale = std::max(1.0, s_ft.cwiseAbs().maxCoeff());
  if ((s_ft - s_pt).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw InvalidArgument("fixed_floor_loss: populations have different second moments");
  }
  return fixed_floor_loss(mm.m, s_ft);
}

BayesGate bayes_gate_params(const MixtureModel& mm) {
  validate(mm);
  const Vector sinv_ft = solve_spd(mm.sigma, mm.mu_ft);
  const Vector sinv_pt = solve_spd(mm.sigma, mm.mu_pt);
  BayesGate gate;
  gate.wg = sinv_ft - sinv_pt;
  gate.bg = 0.5 * (mm.mu_pt.dot(sinv_pt) - mm.mu_ft.dot(sinv_ft));
  return gate;
}

double posterior_pi_ft(const Vector& x, const BayesGate& gate) {
  if (x.size() != gate.wg.size()) throw InvalidArgument("posterior_pi_ft: input dimension mismatch");
  return sigmoid(gate.wg.dot(x) + gate.bg);
}

Vector bayes_predict(const Vector& x, const MixtureModel& mm, const BayesGate& gate) {
  if (x.size() != mm.m.cols()) throw InvalidArgument("bayes_predict: input dimension mismatch");
  return posterior_pi_ft(x, gate) * (mm.m * x);
}

McEstimate bayes_loss_mc(const MixtureModel& mm, std::size_t n, const RngStream& rng) {
  if (n == 0) throw InvalidArgument("bayes_loss_mc: need at least one sample");
  const MixtureSampler sampler(mm);
  const BayesGate gate = bayes_gate_params(mm);
  const std::size_t chunks = (n + kMcChunk - 1) / kMcChunk;
  std::vector<double> sums(chunks, 0.0);
  std::vector<double> sq_sums(chunks, 0.0);
  parallel_for(chunks, [&](std::size_t c) {
    RngStream local = rng.derive("bayes_loss_chunk", c);
    const std::size_t count = std::min(kMcChunk, n - c * kMcChunk);
    double s = 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      const Vector x = sampler.draw(sampler.draw_population(local), local);
      const double a = gate.wg.dot(x) + gate.bg;
      // pi (1 - pi) = sigmoid(a) sigmoid(-a), stable in both tails.
      const double f = sigmoid(a) * sigmoid(-a) * (mm.m * x).squaredNorm();
      s += f;
      sq += f * f;
    }
    sums[c] = s;
    sq_sums[c] = sq;
  });
  double total = 0.0;
  double total_sq = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += sums[c];
    total_sq += sq_sums[c];
  }
  const double nn = static_cast<double>(n);
  McEstimate out;
  out.estimate = total / nn;
  if (n > 1) {
    const double var = std::max(0.0, (total_sq - nn * out.estimate * out.estimate) / (nn - 1.0));
    out.std_error = std::sqrt(var / nn);
  }
  return out;
}

DiselAdapter realize_bayes_as_disel(const MixtureModel& mm, const BayesGate& gate, std::size_t rank) {
  validate(mm);
  if (rank == 0) throw InvalidArgument("realize_bayes_as_disel: rank must be >= 1");
  if (gate.wg.size() != mm.m.cols()) throw InvalidArgument("realize_bayes_as_disel: gate dimension mismatch");
  const auto d_y = mm.m.rows();
  const auto d = mm.m.cols();
  const auto r = static_cast<Eigen::Index>(rank);
  const Svd svd = thin_svd(mm.m);

  DiselAdapter ad;
  ad.a = Matrix::Zero(d_y, r);
  ad.b = Matrix::Zero(r, d);
  const Eigen::Index keep = std::min<Eigen::Index>(r, svd.s.size());
  for (Eigen::Index i = 0; i < keep; ++i) {
    if (svd.s[i] < kSingularCutoff) break;
    const double root = std::sqrt(svd.s[i]);
    ad.a.col(i) = root * svd.u.col(i);
    ad.b.row(i) = root * svd.v.col(i).transpose();
  }
  const double residual = (mm.m - ad.a * ad.b).norm();
  if (residual > kFactorResidualTol * std::max(1.0, mm.m.norm())) {
    throw InvalidArgument("realize_bayes_as_disel: task matrix has rank above " + std::to_string(rank) +
                          " (factorization residual " + std::to_string(residual) + ")");
  }
  ad.wg = Matrix::Ones(r, 1) * gate.wg.transpose();
  ad.bg = Vector::Constant(r, gate.bg);
  ad.alpha = static_cast<double>(rank);
  return ad;
}

}  // namespace disel
