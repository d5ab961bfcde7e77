#include "hopmix/nn.hpp"

#include <algorithm>
#include <cmath>

namespace hopmix {

Tensor init_tensor(std::uint64_t seed, const std::string& name, std::vector<std::size_t> shape,
                   double std_dev) {
  Tensor t(std::move(shape));
  auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with(".bias") || ends_with(".beta")) return t;  // zeros
  if (ends_with(".gamma")) {
    std::fill(t.data().begin(), t.data().end(), 1.0);
    return t;
  }
  RandomStream rs = RandomStream::for_label(seed, name);
  for (double& v : t.data()) v = std_dev * rs.truncated_gaussian();
  return t;
}

Linear::Linear(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed,
               double std_dev)
    : weight(prefix + ".weight", init_tensor(seed, prefix + ".weight", {out, in}, std_dev)),
      bias(prefix + ".bias", init_tensor(seed, prefix + ".bias", {out}, std_dev)) {}

LayerNorm::LayerNorm(const std::string& prefix, std::size_t dim)
    : gamma(prefix + ".gamma", Tensor::full({dim}, 1.0)),
      beta(prefix + ".beta", Tensor::zeros({dim})) {}

Tensor dropout(Fwd& f, const Tensor& x, double p) {
  if (!f.training || p <= 0.0) return x;
  if (!f.rng) throw Error("dropout: training forward without an RNG stream");
  const double keep = 1.0 - p;
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = (f.rng->uniform01() < keep) ? 1.0 / keep : 0.0;
  return mul_mask(x, std::move(mask));
}

void AdamW::step(std::span<Parameter* const> params) {
  if (slots_.empty()) {
    slots_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      slots_[i].m.assign(params[i]->value.numel(), 0.0);
      slots_[i].v.assign(params[i]->value.numel(), 0.0);
    }
  }
  if (slots_.size() != params.size()) throw Error("AdamW: parameter set changed between steps");
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Slot& s = slots_[i];
    if (p.value.numel() != s.m.size()) throw Error("AdamW: parameter shape changed");
    double* theta = p.value.data().data();
    const double* g = p.grad.data().data();
    for (std::size_t k = 0; k < s.m.size(); ++k) {
      theta[k] -= lr_ * weight_decay_ * theta[k];
      s.m[k] = beta1_ * s.m[k] + (1.0 - beta1_) * g[k];
      s.v[k] = beta2_ * s.v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double mhat = s.m[k] / bc1;
      const double vhat = s.v[k] / bc2;
      theta[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

GradCheckResult grad_check(const std::function<Tensor(Fwd&)>& loss_fn,
                           std::span<Parameter* const> params, double step,
                           std::size_t samples_per_param, std::uint64_t seed) {
  // Analytic gradients once.
  Tape tape;
  Fwd fwd{&tape, false, nullptr};
  for (Parameter* p : params) p->zero_grad();
  Tensor loss = loss_fn(fwd);
  tape.backward(loss);
  for (Parameter* p : params) p->accumulate_from(tape);
  tape.clear();

  Fwd value{nullptr, false, nullptr};
  auto eval = [&]() { return loss_fn(value).item(); };

  GradCheckResult result;
  RandomStream rs(seed);
  for (Parameter* p : params) {
    const std::size_t n = p->value.numel();
    std::vector<std::size_t> coords;
    if (samples_per_param == 0 || n <= samples_per_param) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      coords.push_back(0);
      coords.push_back(n - 1);
      while (coords.size() < samples_per_param)
        coords.push_back(static_cast<std::size_t>(rs.bounded(n)));
    }
    for (std::size_t c : coords) {
      double& theta = p->value.data()[c];
      const double saved = theta;
      theta = saved + step;
      const double up = eval();
      theta = saved - step;
      const double down = eval();
      theta = saved;
      const double fd = (up - down) / (2.0 * step);
      const double ad = p->grad.data()[c];
      const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1.0});
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = p->name + "[" + std::to_string(c) + "]";
      }
    }
  }
  return result;
}

}  // namespace hopmix
