#pragma once

#include "hopmix/nn.hpp"
#include "hopmix/tensor.hpp"

namespace hopmix {

struct PowerIterResult {
  double sigma = 0.0;
  Tensor u;  // left vector, unit norm
  Tensor v;  // right vector, unit norm
};

// Estimates the top singular value of W [out x in] by alternating
//   v <- normalize(W^T u), u <- normalize(W v)
// n_power times; sigma = u^T W v. A zero matrix yields sigma = 0 with u
// unchanged. u0 must be unit length.
PowerIterResult power_iteration(const Tensor& w, const Tensor& u0, int n_power);

enum class SpecMode { Spec, None, BatchNormLike };

// Linear layer whose effective weight is W * min(1, coeff / sigma_est), with
// sigma_est maintained by persistent power iteration. Gradients flow through
// the rescaled product treating sigma_est, u, v as constants. Modes:
//   Spec          - the normalization described above
//   None          - plain linear
//   BatchNormLike - plain linear followed by per-feature batch normalization
//                   over the rows of the call (ablation axis)
struct SpecLinear {
  Parameter weight;  // [out x in]
  Parameter bias;    // [out]
  Parameter bn_gamma, bn_beta;  // BatchNormLike only
  Tensor u;          // persistent power-iteration vector, not a Parameter
  double coeff = 0.9;
  int n_power = 8;
  SpecMode mode = SpecMode::Spec;
  // When set, forward reuses the cached scale without touching u or sigma;
  // required for finite-difference checks of the stop-gradient convention.
  bool freeze_norm = false;

  SpecLinear() = default;
  SpecLinear(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed,
             double coeff, int n_power, SpecMode mode, double std_dev = 0.02);

  Tensor forward(Fwd& f, const Tensor& x);

  // Recomputes sigma/scale from the current weight. Mutates u when `update`
  // is true (training behaviour); otherwise evaluates from the stored u.
  void refresh(bool update);

  double sigma_est() const { return sigma_; }
  double current_scale() const { return scale_; }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
    if (mode == SpecMode::BatchNormLike) {
      out.push_back(&bn_gamma);
      out.push_back(&bn_beta);
    }
  }

 private:
  double sigma_ = 0.0;
  double scale_ = 1.0;
};

}  // namespace hopmix
