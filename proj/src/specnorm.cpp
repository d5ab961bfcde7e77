#include "hopmix/specnorm.hpp"

#include <cmath>

namespace hopmix {

namespace {

constexpr double kTiny = 1e-300;

double l2_norm(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x * x;
  return std::sqrt(s);
}

}  // namespace

PowerIterResult power_iteration(const Tensor& w, const Tensor& u0, int n_power) {
  if (w.rank() != 2) throw ShapeError("power_iteration: rank-2 weight required");
  if (n_power < 1) throw Error("power_iteration: n_power must be >= 1");
  const std::size_t out = w.rows(), in = w.cols();
  if (u0.numel() != out) throw ShapeError("power_iteration: u0 length != rows");

  PowerIterResult r;
  r.u = u0.detached();
  r.v = Tensor::zeros({in});
  for (int it = 0; it < n_power; ++it) {
    // v <- normalize(W^T u)
    for (std::size_t j = 0; j < in; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < out; ++i) s += w.at(i, j) * r.u.at(i);
      r.v.at(j) = s;
    }
    const double nv = l2_norm(r.v.data());
    if (nv < kTiny) {
      r.sigma = 0.0;
      r.u = u0.detached();
      return r;
    }
    for (double& x : r.v.data()) x /= nv;
    // u <- normalize(W v)
    Tensor wu({out});
    for (std::size_t i = 0; i < out; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < in; ++j) s += w.at(i, j) * r.v.at(j);
      wu.at(i) = s;
    }
    const double nu = l2_norm(wu.data());
    if (nu < kTiny) {
      r.sigma = 0.0;
      r.u = u0.detached();
      return r;
    }
    for (std::size_t i = 0; i < out; ++i) r.u.at(i) = wu.at(i) / nu;
  }
  // sigma = u^T W v
  double sigma = 0.0;
  for (std::size_t i = 0; i < out; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < in; ++j) s += w.at(i, j) * r.v.at(j);
    sigma += r.u.at(i) * s;
  }
  r.sigma = sigma;
  return r;
}

SpecLinear::SpecLinear(const std::string& prefix, std::size_t in, std::size_t out,
                       std::uint64_t seed, double coeff_, int n_power_, SpecMode mode_,
                       double std_dev)
    : weight(prefix + ".weight", init_tensor(seed, prefix + ".weight", {out, in}, std_dev)),
      bias(prefix + ".bias", init_tensor(seed, prefix + ".bias", {out}, std_dev)),
      coeff(coeff_),
      n_power(n_power_),
      mode(mode_) {
  // Deterministic unit start vector for the power iteration.
  RandomStream rs = RandomStream::for_label(seed, prefix + ".u");
  u = Tensor::zeros({out});
  double norm = 0.0;
  while (norm == 0.0) {
    for (double& x : u.data()) x = rs.gaussian();
    norm = l2_norm(u.data());
  }
  for (double& x : u.data()) x /= norm;
  if (mode == SpecMode::BatchNormLike) {
    bn_gamma = Parameter(prefix + ".bn.gamma", Tensor::full({out}, 1.0));
    bn_beta = Parameter(prefix + ".bn.beta", Tensor::zeros({out}));
  }
}

void SpecLinear::refresh(bool update) {
  if (mode != SpecMode::Spec) {
    sigma_ = 0.0;
    scale_ = 1.0;
    return;
  }
  PowerIterResult r = power_iteration(weight.value, u, n_power);
  if (update && r.sigma > 0.0) u = r.u;
  sigma_ = r.sigma;
  scale_ = (sigma_ > kTiny) ? std::min(1.0, coeff / sigma_) : 1.0;
}

Tensor SpecLinear::forward(Fwd& f, const Tensor& x) {
  switch (mode) {
    case SpecMode::Spec: {
      if (!freeze_norm) refresh(f.training);
      // Materialize the rescaled weight on the tape so gradients flow through
      // scale * W with the scale held constant.
      Tensor wn = scale(weight.on(f), scale_);
      return linear_op(x, wn, bias.on(f));
    }
    case SpecMode::None:
      return linear_op(x, weight.on(f), bias.on(f));
    case SpecMode::BatchNormLike: {
      Tensor y = linear_op(x, weight.on(f), bias.on(f));
      if (y.rank() == 1) return y;  // single row: batch statistics undefined, pass through
      return batchnorm_cols(y, bn_gamma.on(f), bn_beta.on(f));
    }
  }
  throw Error("unreachable");
}

}  // namespace hopmix
