#pragma once

#include <vector>

#include "hopmix/nn.hpp"
#include "hopmix/specnorm.hpp"

namespace hopmix {

// Iterates of one fixed-point run plus per-step diagnostics:
//   norms[a] = |x^{a+1} - x^a| / sqrt(numel)
//   cosines[a] = cos(x^{a+1}, x^a)
struct FpaTrace {
  std::vector<Tensor> iterates;  // x^0..x^n
  std::vector<double> norms;
  std::vector<double> cosines;
};

// Token-mixing module built around a contractive block F and its fixed-point
// inverse. Forward composition on the last axis of the input (rows are
// independent):
//   z   = fc1(LN(v))
//   x^{a+1} = z + F(x^a),  F = fc_sn2 . gelu . fc_sn1 . gelu   (n times)
//   out = v + fc2(gelu(x^n))
// with dropout after each activation and after fc2 when training.
struct IMlpModule {
  LayerNorm ln;      // over d_vis
  Linear fc1;        // d_vis -> d_mid
  SpecLinear fc_sn1; // d_mid -> d_hid
  SpecLinear fc_sn2; // d_hid -> d_mid
  Linear fc2;        // d_mid -> d_vis
  double drop_p = 0.0;
  int n_iter = 2;

  IMlpModule() = default;
  IMlpModule(const std::string& prefix, std::size_t d_vis, std::size_t d_mid, std::size_t d_hid,
             std::uint64_t seed, double coeff, int n_power, SpecMode mode, double drop = 0.0,
             int n = 2, double std_dev = 0.02);

  std::size_t d_vis() const { return fc1.in_dim(); }
  std::size_t d_mid() const { return fc1.out_dim(); }
  std::size_t d_hid() const { return fc_sn1.weight.value.rows(); }

  // The contractive block F.
  Tensor contractive(Fwd& f, const Tensor& x);
  // n-step fixed-point approximation of (1 - F)^{-1} starting from x^0 = z.
  // n = 0 returns z. The whole loop stays on the tape of `f`.
  Tensor fpa(Fwd& f, const Tensor& z, int n, FpaTrace* trace = nullptr);
  // The exact explicit direction z = x - F(x).
  Tensor residual_forward(Fwd& f, const Tensor& x);
  // Full block including the outer residual connection. `n_override` < 0
  // uses the configured iteration count.
  Tensor forward(Fwd& f, const Tensor& v, FpaTrace* trace = nullptr, int n_override = -1);

  // Runs power iteration to convergence on both spectral layers (training
  // warm-up for tests and probes).
  void converge_norms(int passes = 50);
  void set_freeze_norm(bool frozen) {
    fc_sn1.freeze_norm = frozen;
    fc_sn2.freeze_norm = frozen;
  }

  void collect(std::vector<Parameter*>& out) {
    ln.collect(out);
    fc1.collect(out);
    fc_sn1.collect(out);
    fc_sn2.collect(out);
    fc2.collect(out);
  }
};

// Per-sample fixed-point diagnostics on a batch of inputs (value mode).
std::vector<FpaTrace> convergence_probe(IMlpModule& module, std::span<const Tensor> inputs,
                                        int n_iters);

// One level of the general deep construction. Level A holds the maps
//   G_A(y) = act_lo(y) * up^T      (into level A+1)
//   H_A(w) = act_hi(w) * down^T    (back into level A)
// where act_lo is level A's activation and act_hi is level A+1's.
struct NestedLevel {
  enum class Act { GeluAct, Identity };
  Tensor up;    // [N_{A+1} x N_A], already rescaled if contraction is wanted
  Tensor down;  // [N_A x N_{A+1}]
  Act act_lo = Act::GeluAct;
  Act act_hi = Act::GeluAct;
  int n_iter = 2;
};

// Solves the nested residual chain
//   x_A = z_A + F_A(x_A),   F_A = H_A . (1 - F_{A+1})^{-1} . G_A
// where the innermost F collapses to H . G, replacing every inverse by that
// level's fixed-point iteration. `levels[0]` is the outermost solve; returns
// its solution for drive `z`. With one level this is exactly the flat
// fixed-point iteration. Non-contracting levels are reported through
// `warnings` when provided.
Tensor nested_fpa(std::span<const NestedLevel> levels, const Tensor& z,
                  std::vector<std::string>* warnings = nullptr);

}  // namespace hopmix
