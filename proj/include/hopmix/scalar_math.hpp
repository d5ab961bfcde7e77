#pragma once

#include <cmath>
#include <numbers>

namespace hopmix {

inline double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

// Exact GELU, x * Phi(x) with Phi the standard normal CDF (erf form, not the
// tanh approximation).
inline double gelu(double x) { return x * normal_cdf(x); }

inline double gelu_prime(double x) { return normal_cdf(x) + x * normal_pdf(x); }

// Antiderivative of gelu with gelu_antideriv(0) == 0, computed by adaptive
// Gauss-Legendre quadrature to 1e-12 absolute tolerance. Used by energy
// evaluation only; the model forward path never needs it.
double gelu_antideriv(double h);

}  // namespace hopmix
