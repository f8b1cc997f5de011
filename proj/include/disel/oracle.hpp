#pragma once

// Closed-form ground truth for the two-population linear regression problem:
// the best input-agnostic correction and its loss, the Bayes-optimal
// input-dependent correction with its logistic posterior, and an exact
// construction of a gated low-rank adapter that realizes it.

#include <cstddef>

#include "disel/adapters.hpp"
#include "disel/mixture.hpp"

namespace disel {

/// Logistic posterior parameters: pi_ft(x) = sigmoid(wg . x + bg).
struct BayesGate {
  Vector wg;
  double bg = 0.0;
};

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Minimizer over fixed Delta of
///   1/2 E_ft ||(Delta - M) x||^2 + 1/2 E_pt ||Delta x||^2,
/// i.e. M S_ft (S_ft + S_pt)^-1 for uncentered second moments S_ft, S_pt.
/// Throws NumericError when the sum is singular.
Matrix fixed_optimum(const Matrix& m, const Matrix& second_moment_ft, const Matrix& second_moment_pt);

/// Population objective of a fixed correction, in closed form.
double fixed_loss(const Matrix& delta, const Matrix& m, const Matrix& second_moment_ft,
                  const Matrix& second_moment_pt);
/// Its gradient with respect to Delta: (Delta - M) S_ft + Delta S_pt.
Matrix fixed_loss_gradient(const Matrix& delta, const Matrix& m, const Matrix& second_moment_ft,
                           const Matrix& second_moment_pt);

/// 1/4 Tr(M S M^T): the loss floor of any fixed correction when both
/// populations share the second moment S. Also the per-population error of
/// the optimum M / 2 on each population.
double fixed_floor_loss(const Matrix& m, const Matrix& second_moment);

/// Floor for a mixture whose populations share a second moment. Throws
/// InvalidArgument if they do not.
double fixed_floor_loss(const MixtureModel& mm);

BayesGate bayes_gate_params(const MixtureModel& mm);

double posterior_pi_ft(const Vector& x, const BayesGate& gate);

/// pi_ft(x) M x, the correction only (the caller adds W0 x).
Vector bayes_predict(const Vector& x, const MixtureModel& mm, const BayesGate& gate);

/// Monte Carlo estimate of the Bayes loss
///   1/2 integral p_ft p_pt / (p_ft + p_pt) ||M x||^2 dx
/// written as E_q[pi_ft (1 - pi_ft) ||M x||^2] under the mixture density
/// q = (p_ft + p_pt) / 2. Samples are drawn in fixed-size chunks, each
/// from its own keyed sub-stream, so the result does not depend on how
/// chunks are scheduled.
McEstimate bayes_loss_mc(const MixtureModel& mm, std::size_t n, const RngStream& rng);

/// Gated adapter with unit scale (alpha = r), A B = M from a truncated SVD,
/// Wg = 1_r wg^T and bg = bg 1_r, so every gate equals pi_ft(x).
/// Throws InvalidArgument when M cannot be factored at rank r.
DiselAdapter realize_bayes_as_disel(const MixtureModel& mm, const BayesGate& gate, std::size_t rank);

}  // namespace disel
