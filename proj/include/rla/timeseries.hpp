#pragma once

#include <vector>

namespace rla {

// ARMA(1,1): x^t = beta x^{t-1} + i^t - gamma i^{t-1}.
struct ArmaParams {
  double beta = 0.0;
  double gamma = 0.0;
};

// h^t = alpha x^{t-1} + gamma h^{t-1};  x^t = beta1 x^{t-1} + beta2 h^{t-1}.
struct RecurrenceParams {
  double alpha = 0.0;
  double gamma = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
};

// AR(inf) coefficients (beta - gamma) gamma^{l-1}, l = 1..max_lag.
// Throws ValueError when |gamma| >= 1 (non-invertible).
std::vector<double> arma_ar_coefficients(const ArmaParams& p, int max_lag);

// Response x^0..x^horizon of the ARMA recursion to a unit impulse i^0 = 1.
std::vector<double> arma_impulse_response(const ArmaParams& p, int horizon);

// Closed form of the impulse response: 1, then (beta - gamma) beta^{l-1}.
std::vector<double> arma_impulse_closed_form(const ArmaParams& p, int horizon);

// AR(inf) coefficients recovered by simulation: the inverse filter
// i^t = x^t - beta x^{t-1} + gamma i^{t-1} driven by a unit impulse in x
// yields i^l = -coefficient(l).
std::vector<double> arma_ar_simulated(const ArmaParams& p, int max_lag);

// max over t <= horizon of |x^t - sum_l coef(l) x^{t-l} - i^t| for the
// impulse-driven series; zero when the AR(inf) expansion is exact.
double arma_expansion_residual(const ArmaParams& p, int horizon);

// Coefficients of x^T on x^{T-1}, x^{T-2}, ..., x^0 (T entries), obtained by
// running the two-line recurrence on basis vectors with h^0 = 0.
std::vector<double> recurrence_expand(const RecurrenceParams& p, int T);

// The same coefficients in closed form: beta1, then beta2 alpha gamma^{l-1}.
std::vector<double> recurrence_closed_form(const RecurrenceParams& p, int T);

}  // namespace rla
