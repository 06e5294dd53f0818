#include "rla/timeseries.hpp"

#include <cmath>
#include <string>

#include "rla/error.hpp"

namespace rla {
namespace {

void check_invertible(const ArmaParams& p) {
  if (!(std::abs(p.gamma) < 1.0)) {
    throw ValueError("ARMA(1,1) with |gamma| = " + std::to_string(std::abs(p.gamma)) +
                     " >= 1 is not invertible");
  }
}

void check_positive(int n, const char* what) {
  if (n < 1) throw ValueError(std::string(what) + " must be >= 1, got " + std::to_string(n));
}

}  // namespace

std::vector<double> arma_ar_coefficients(const ArmaParams& p, int max_lag) {
  check_invertible(p);
  check_positive(max_lag, "max_lag");
  std::vector<double> out(static_cast<std::size_t>(max_lag));
  double power = 1.0;
  for (auto& c : out) {
    c = (p.beta - p.gamma) * power;
    power *= p.gamma;
  }
  return out;
}

std::vector<double> arma_impulse_response(const ArmaParams& p, int horizon) {
  check_invertible(p);
  check_positive(horizon, "horizon");
  std::vector<double> x(static_cast<std::size_t>(horizon) + 1);
  double i_prev = 0.0;
  double x_prev = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double i_t = t == 0 ? 1.0 : 0.0;
    x[t] = p.beta * x_prev + i_t - p.gamma * i_prev;
    x_prev = x[t];
    i_prev = i_t;
  }
  return x;
}

std::vector<double> arma_impulse_closed_form(const ArmaParams& p, int horizon) {
  check_invertible(p);
  check_positive(horizon, "horizon");
  std::vector<double> out(static_cast<std::size_t>(horizon) + 1);
  out[0] = 1.0;
  double power = 1.0;
  for (std::size_t l = 1; l < out.size(); ++l) {
    out[l] = (p.beta - p.gamma) * power;
    power *= p.beta;
  }
  return out;
}

std::vector<double> arma_ar_simulated(const ArmaParams& p, int max_lag) {
  check_invertible(p);
  check_positive(max_lag, "max_lag");
  std::vector<double> out(static_cast<std::size_t>(max_lag));
  double i_prev = 0.0;
  double x_prev = 0.0;
  for (int t = 0; t <= max_lag; ++t) {
    const double x_t = t == 0 ? 1.0 : 0.0;
    const double i_t = x_t - p.beta * x_prev + p.gamma * i_prev;
    if (t > 0) out[static_cast<std::size_t>(t - 1)] = -i_t;
    x_prev = x_t;
    i_prev = i_t;
  }
  return out;
}

double arma_expansion_residual(const ArmaParams& p, int horizon) {
  const std::vector<double> x = arma_impulse_response(p, horizon);
  const std::vector<double> coef = arma_ar_coefficients(p, horizon);
  double worst = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    double predicted = t == 0 ? 1.0 : 0.0;
    for (std::size_t l = 1; l <= t; ++l) predicted += coef[l - 1] * x[t - l];
    worst = std::max(worst, std::abs(x[t] - predicted));
  }
  return worst;
}

std::vector<double> recurrence_expand(const RecurrenceParams& p, int T) {
  check_positive(T, "T");
  const auto n = static_cast<std::size_t>(T);
  // h[j] is the coefficient of x^j in the current hidden state.
  std::vector<double> h(n, 0.0);
  for (std::size_t s = 1; s < n; ++s) {
    for (auto& v : h) v *= p.gamma;
    h[s - 1] += p.alpha;
  }
  // x^T = beta1 x^{T-1} + beta2 h^{T-1}; report on x^{T-1}, ..., x^0.
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double c = p.beta2 * h[j];
    if (j == n - 1) c += p.beta1;
    out[n - 1 - j] = c;
  }
  return out;
}

std::vector<double> recurrence_closed_form(const RecurrenceParams& p, int T) {
  check_positive(T, "T");
  std::vector<double> out(static_cast<std::size_t>(T));
  out[0] = p.beta1;
  double power = 1.0;
  for (std::size_t l = 1; l < out.size(); ++l) {
    out[l] = p.beta2 * p.alpha * power;
    power *= p.gamma;
  }
  return out;
}

}  // namespace rla
