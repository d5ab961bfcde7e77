#include "hopmix/imlp.hpp"

#include <cmath>

namespace hopmix {

namespace {

double l2(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x * x;
  return std::sqrt(s);
}

void trace_step(FpaTrace* trace, const Tensor& next) {
  if (!trace) return;
  const Tensor& prev = trace->iterates.back();
  double diff2 = 0.0, dotp = 0.0;
  for (std::size_t i = 0; i < next.numel(); ++i) {
    const double d = next.data()[i] - prev.data()[i];
    diff2 += d * d;
    dotp += next.data()[i] * prev.data()[i];
  }
  trace->norms.push_back(std::sqrt(diff2) / std::sqrt(static_cast<double>(next.numel())));
  const double na = l2(prev.span()), nb = l2(next.span());
  double cosv;
  if (na == 0.0 || nb == 0.0)
    cosv = (na == nb) ? 1.0 : 0.0;
  else
    cosv = dotp / (na * nb);
  trace->cosines.push_back(cosv);
  trace->iterates.push_back(next.detached());
}

}  // namespace

IMlpModule::IMlpModule(const std::string& prefix, std::size_t d_vis, std::size_t d_mid,
                       std::size_t d_hid, std::uint64_t seed, double coeff, int n_power,
                       SpecMode mode, double drop, int n, double std_dev)
    : ln(prefix + ".ln", d_vis),
      fc1(prefix + ".fc1", d_vis, d_mid, seed, std_dev),
      fc_sn1(prefix + ".fc_sn1", d_mid, d_hid, seed, coeff, n_power, mode, std_dev),
      fc_sn2(prefix + ".fc_sn2", d_hid, d_mid, seed, coeff, n_power, mode, std_dev),
      fc2(prefix + ".fc2", d_mid, d_vis, seed, std_dev),
      drop_p(drop),
      n_iter(n) {}

Tensor IMlpModule::contractive(Fwd& f, const Tensor& x) {
  Tensor y = gelu(x);
  y = dropout(f, y, drop_p);
  y = fc_sn1.forward(f, y);
  y = gelu(y);
  y = dropout(f, y, drop_p);
  y = fc_sn2.forward(f, y);
  return y;
}

Tensor IMlpModule::fpa(Fwd& f, const Tensor& z, int n, FpaTrace* trace) {
  if (n < 0) throw Error("fpa: negative iteration count");
  Tensor x = z;
  if (trace) {
    trace->iterates.clear();
    trace->norms.clear();
    trace->cosines.clear();
    trace->iterates.push_back(z.detached());
  }
  for (int a = 0; a < n; ++a) {
    x = add(contractive(f, x), z);
    trace_step(trace, x);
  }
  return x;
}

Tensor IMlpModule::residual_forward(Fwd& f, const Tensor& x) {
  Tensor fx = contractive(f, x);
  return add(x, scale(fx, -1.0));
}

Tensor IMlpModule::forward(Fwd& f, const Tensor& v, FpaTrace* trace, int n_override) {
  const int n = (n_override >= 0) ? n_override : n_iter;
  Tensor z = fc1.forward(f, ln.forward(f, v));
  Tensor x = fpa(f, z, n, trace);
  Tensor out = gelu(x);
  out = dropout(f, out, drop_p);
  out = fc2.forward(f, out);
  out = dropout(f, out, drop_p);
  return add(v, out);
}

void IMlpModule::converge_norms(int passes) {
  for (int i = 0; i < passes; ++i) {
    fc_sn1.refresh(true);
    fc_sn2.refresh(true);
  }
}

std::vector<FpaTrace> convergence_probe(IMlpModule& module, std::span<const Tensor> inputs,
                                        int n_iters) {
  std::vector<FpaTrace> traces;
  traces.reserve(inputs.size());
  Fwd f;  // value mode
  for (const Tensor& v : inputs) {
    FpaTrace trace;
    module.forward(f, v, &trace, n_iters);
    traces.push_back(std::move(trace));
  }
  return traces;
}

namespace {

Tensor apply_act(NestedLevel::Act a, const Tensor& x) {
  return a == NestedLevel::Act::GeluAct ? gelu(x) : x;
}

Tensor solve_chain(std::span<const NestedLevel> levels, const Tensor& z,
                   std::vector<std::string>* warnings);

Tensor eval_block(std::span<const NestedLevel> levels, const Tensor& y,
                  std::vector<std::string>* warnings) {
  const NestedLevel& l = levels.front();
  Tensor u = linear_op(apply_act(l.act_lo, y), l.up, Tensor::zeros({l.up.rows()}));
  Tensor inner = (levels.size() == 1) ? std::move(u) : solve_chain(levels.subspan(1), u, warnings);
  Tensor w = apply_act(l.act_hi, inner);
  return linear_op(w, l.down, Tensor::zeros({l.down.rows()}));
}

Tensor solve_chain(std::span<const NestedLevel> levels, const Tensor& z,
                   std::vector<std::string>* warnings) {
  const NestedLevel& l = levels.front();
  Tensor x = z;
  double prev_diff = -1.0;
  int rising = 0;
  for (int a = 0; a < l.n_iter; ++a) {
    Tensor next = add(eval_block(levels, x, warnings), z);
    if (warnings) {
      double diff = 0.0;
      for (std::size_t i = 0; i < next.numel(); ++i) {
        const double d = next.data()[i] - x.data()[i];
        diff += d * d;
      }
      diff = std::sqrt(diff);
      if (prev_diff >= 0.0 && diff > prev_diff && ++rising >= 2) {
        warnings->push_back("nested_fpa: level " + std::to_string(levels.size()) +
                            " iteration is not contracting (diff " + std::to_string(diff) + ")");
        rising = 0;
      }
      prev_diff = diff;
    }
    x = std::move(next);
  }
  return x;
}

}  // namespace

Tensor nested_fpa(std::span<const NestedLevel> levels, const Tensor& z,
                  std::vector<std::string>* warnings) {
  if (levels.empty()) throw Error("nested_fpa: at least one level required");
  return solve_chain(levels, z, warnings);
}

}  // namespace hopmix
