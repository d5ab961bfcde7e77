#pragma once

#include <optional>
#include <vector>

#include "hopmix/lagrangian.hpp"
#include "hopmix/tensor.hpp"

namespace hopmix {

// Continuous Hopfield system with L layers of sizes N_1..N_L. Interactions
// couple adjacent layers only: up[A] maps layer A to layer A+1 and down[A]
// maps layer A+1 back to layer A. Built symmetrically (down = up^T, required
// for energy monotonicity) or with independent matrices (trained weights).
struct HopfieldSystem {
  std::vector<std::size_t> sizes;
  std::vector<Tensor> up;    // up[A] in R^{N_{A+1} x N_A}, A = 0..L-2
  std::vector<Tensor> down;  // down[A] in R^{N_A x N_{A+1}}
  std::vector<double> tau;   // relaxation time per layer, > 0
  std::vector<LagrangianSpec> lagr;
  double alpha = 0.0;  // decay coefficient on the first (visible) layer only
  bool symmetric = false;

  static HopfieldSystem symmetric_system(std::vector<std::size_t> sizes, std::vector<Tensor> up,
                                         std::vector<double> tau, std::vector<LagrangianSpec> lagr,
                                         double alpha = 0.0);
  static HopfieldSystem general_system(std::vector<std::size_t> sizes, std::vector<Tensor> up,
                                       std::vector<Tensor> down, std::vector<double> tau,
                                       std::vector<LagrangianSpec> lagr, double alpha = 0.0);

  std::size_t layers() const { return sizes.size(); }
  void validate() const;
};

struct State {
  std::vector<Tensor> x;  // one rank-1 tensor per layer
  double t = 0.0;
};

// Canonical two-layer energy
//   E = v.g(v) - L_v + h.f(h) - L_h - f(h)^T xi g(v).
// Requires the symmetric convention (the expression references one coupling).
double energy_2layer(const HopfieldSystem& sys, const Tensor& v, const Tensor& h);

// Right-hand sides dx^A/dt of the coupled relaxation equations:
//   tau_A dx^A/dt = up[A-1] g^{A-1} + down[A] g^{A+1} - x^A,
// with the decay of the first layer scaled by alpha and boundary activations
// zero beyond the stack.
std::vector<Tensor> dynamics_rhs(const HopfieldSystem& sys, const State& state);

struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;     // recorded every `record_every` steps (and the last)
  std::vector<double> energies;  // parallel to states; 2-layer symmetric systems only
  State final;
};

// Forward Euler. Aborts with Diverged on NaN/Inf or norm blow-up.
Trajectory integrate(const HopfieldSystem& sys, const State& initial, double dt, std::size_t steps,
                     std::size_t record_every = 1);

struct Equilibrium {
  Tensor x;
  Tensor h;
  std::size_t iterations = 0;
  double residual = 0.0;
};

// Solves the fast-layer balance of a three-layer system with the visible
// layer frozen:
//   x = up[0] g(v) + down[1] f(h),   h = up[1] e(x)
// by damped fixed-point iteration (damping 1 until oscillation is detected,
// then 0.5). Throws NonConvergence after max_iters.
Equilibrium hidden_equilibrium(const HopfieldSystem& sys, const Tensor& v_frozen, double tolerance,
                               std::size_t max_iters);

// One discrete visible-layer update of a two-layer system with the norm
// Lagrangian on the visible layer, alpha = 0 and gelu hidden activation:
//   v' = v + down[0] gelu(up[0] g(v)).
Tensor mixer_update(const HopfieldSystem& sys, const Tensor& v);

}  // namespace hopmix
