#pragma once

#include "hopmix/scalar_math.hpp"
#include "hopmix/tensor.hpp"

namespace hopmix {

// Gradient of the norm Lagrangian L_v = sqrt(sum_i (v_i - vbar)^2):
//   g(v) = (v - vbar) / sqrt(sum (v - vbar)^2 + eps).
// With eps = 0 this is the exact closed form; the default eps guards the
// constant-vector singularity. Rank-1 input.
Tensor lagrangian_g(const Tensor& v, double eps = 1e-12);

// Value of the norm Lagrangian (eps folded under the root, so v.g == L holds
// exactly at eps = 0).
double norm_lagrangian_value(const Tensor& v, double eps = 0.0);

// Declarative per-layer Lagrangian choice. SumPhiGelu means
// L(x) = sum phi(x_i) with phi' = gelu, so the activation is gelu applied
// elementwise; NormLv is the centered-norm Lagrangian whose gradient is
// lagrangian_g.
struct LagrangianSpec {
  enum class Kind { SumPhiGelu, NormLv };
  Kind kind = Kind::SumPhiGelu;
  double eps = 0.0;  // NormLv regularization

  static LagrangianSpec sum_phi_gelu() { return {Kind::SumPhiGelu, 0.0}; }
  static LagrangianSpec norm_lv(double eps = 0.0) { return {Kind::NormLv, eps}; }

  // Activation g = dL/dx.
  Tensor activation(const Tensor& x) const;
  // Lagrangian value L(x).
  double value(const Tensor& x) const;
};

}  // namespace hopmix
