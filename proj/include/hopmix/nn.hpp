#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hopmix/rng.hpp"
#include "hopmix/tensor.hpp"

namespace hopmix {

// Forward-pass context: which tape (null = pure evaluation), whether layers
// run in training mode (dropout, power-iteration updates), and the stream
// dropout masks are drawn from.
struct Fwd {
  Tape* tape = nullptr;
  bool training = false;
  RandomStream* rng = nullptr;
};

// Named trainable tensor with its gradient accumulator.
struct Parameter {
  Tensor value;
  Tensor grad;
  std::string name;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : value(std::move(v)), grad(Tensor::zeros(value.shape())), name(std::move(n)) {
    value.set_requires_grad(true);
  }

  // Tape-attached view (leaf node, deduplicated per step) or plain value.
  Tensor on(Fwd& f) {
    if (!f.tape) return value.detached();
    if (cached_tape_ != f.tape || cached_gen_ != f.tape->generation()) {
      cached_tape_ = f.tape;
      cached_gen_ = f.tape->generation();
      cached_node_ = f.tape->leaf(value, this);
    }
    Tensor t = value.detached();
    t.attach(f.tape, static_cast<std::int64_t>(cached_node_));
    return t;
  }

  void zero_grad() { std::fill(grad.data().begin(), grad.data().end(), 0.0); }

  // grad += tape gradient at this parameter's leaf, if it was used.
  void accumulate_from(const Tape& tape) {
    if (cached_tape_ != &tape || cached_gen_ != tape.generation()) return;
    if (!tape.has_grad(cached_node_)) return;
    auto g = tape.grad(cached_node_);
    for (std::size_t i = 0; i < g.size(); ++i) grad.data()[i] += g[i];
  }

 private:
  Tape* cached_tape_ = nullptr;
  std::uint64_t cached_gen_ = ~0ull;
  std::size_t cached_node_ = 0;
};

// Draws initial values for a named parameter: truncated normal (2 sigma) for
// weights, zeros for biases, ones for norm gains. The stream depends only on
// (seed, name), so models sharing a layer name initialize identically.
Tensor init_tensor(std::uint64_t seed, const std::string& name, std::vector<std::size_t> shape,
                   double std_dev);

struct Linear {
  Parameter weight;  // [out x in]
  Parameter bias;    // [out]

  Linear() = default;
  Linear(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed,
         double std_dev = 0.02);

  Tensor forward(Fwd& f, const Tensor& x) {
    return linear_op(x, weight.on(f), bias.on(f));
  }
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  std::size_t in_dim() const { return weight.value.cols(); }
  std::size_t out_dim() const { return weight.value.rows(); }
};

struct LayerNorm {
  Parameter gamma;
  Parameter beta;

  LayerNorm() = default;
  LayerNorm(const std::string& prefix, std::size_t dim);

  Tensor forward(Fwd& f, const Tensor& x) {
    return layernorm_affine(x, gamma.on(f), beta.on(f));
  }
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// Inverted dropout; identity when p == 0 or not training.
Tensor dropout(Fwd& f, const Tensor& x, double p);

// Decoupled weight-decay Adam. Moments are kept per parameter in
// registration order; deterministic.
class AdamW {
 public:
  AdamW(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
        double weight_decay = 0.0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(std::span<Parameter* const> params);

  long step_count() const { return step_count_; }
  double lr() const { return lr_; }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long step_count_ = 0;
  std::vector<Slot> slots_;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "name[i]" of the worst coordinate
};

// Compares reverse-mode gradients of `loss_fn` against central finite
// differences, coordinate-sampled per parameter. `loss_fn` must be
// deterministic and re-read parameter values on every call. Relative error
// uses max(|ad|, |fd|, 1) as denominator.
GradCheckResult grad_check(const std::function<Tensor(Fwd&)>& loss_fn,
                           std::span<Parameter* const> params, double step = 1e-5,
                           std::size_t samples_per_param = 0, std::uint64_t seed = 2024);

}  // namespace hopmix
