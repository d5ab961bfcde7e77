#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hopmix/common.hpp"

namespace hopmix {

class Tape;

// Dense row-major f64 tensor of rank 0..3. Plain value unless attached to a
// tape, in which case (tape, node) identify the recorded computation.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  // Rank-2 accessors.
  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_[1]; }

  double item() const;
  double& at(std::size_t i) { return data_[i]; }
  double at(std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::span<const double> span() const { return data_; }

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::int64_t node() const { return node_; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool b) {
    requires_grad_ = b;
    return *this;
  }

  // Same values, no tape attachment.
  Tensor detached() const { return Tensor(shape_, data_); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Internal: binds this value to a recorded tape node.
  Tensor& attach(Tape* t, std::int64_t node) {
    tape_ = t;
    node_ = node;
    return *this;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  Tape* tape_ = nullptr;
  std::int64_t node_ = -1;
};

enum class Op : std::uint8_t {
  Leaf,
  Matmul,
  Linear,  // y = s * x W^T + b, scale s in aux[0]
  Transpose,
  Add,
  Scale,
  Gelu,
  LayerNormRows,
  BatchNormCols,
  MulMask,
  MeanRows,
  SumAll,
  DotConst,
  StackRows,
  CrossEntropy,
};

// Dynamic reverse-mode tape over whole-tensor ops. Single writer; cleared
// between optimization steps. Node inputs always have smaller ids, so one
// reverse sweep propagates gradients.
class Tape {
 public:
  Tape();

  struct Node {
    Op op;
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<std::int64_t> inputs;
    std::vector<double> aux;         // op-specific saved floats
    std::vector<std::int64_t> iaux;  // op-specific saved ints
  };

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }

  // Registers a leaf holding a copy of `value`. `cache_key`, when non-null,
  // deduplicates leaves within the current generation (one node per
  // parameter per step even if used many times).
  std::size_t leaf(const Tensor& value, const void* cache_key = nullptr);

  // Internal: appends a fully-formed node (used by the op implementations).
  std::size_t record(Node n);

  const Node& node(std::size_t i) const { return nodes_[i]; }

  // Reverse sweep from a scalar loss; fills per-node gradients.
  void backward(const Tensor& loss);

  bool has_grad(std::size_t i) const { return i < grads_.size() && !grads_[i].empty(); }
  std::span<const double> grad(std::size_t i) const { return grads_[i]; }

  // Drops all nodes and bumps the generation counter.
  void clear();

 private:
  std::vector<double>& grad_buf(std::size_t i);
  void backward_node(std::size_t i);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const void*, std::size_t> leaf_cache_;
  std::uint64_t generation_;
};

// --- whole-tensor operations -------------------------------------------
// Each computes eagerly and records itself when any input sits on a tape.

Tensor matmul(const Tensor& a, const Tensor& b);
// y = s * x W^T + b with W laid out [out x in]; x may be rank 1 or 2.
Tensor linear_op(const Tensor& x, const Tensor& w, const Tensor& b, double s = 1.0);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor gelu(const Tensor& x);
// Per-row mean-0/var-1 normalization over the last axis (population variance,
// eps 1e-6), then elementwise affine.
Tensor layernorm_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta);
// Per-column normalization over rows using the call's own batch statistics.
Tensor batchnorm_cols(const Tensor& x, const Tensor& gamma, const Tensor& beta);
// Elementwise multiply by a constant mask (dropout).
Tensor mul_mask(const Tensor& x, std::vector<double> mask);
Tensor mean_rows(const Tensor& x);
Tensor sum_all(const Tensor& x);
// Scalar <r, flatten(x)> against a constant vector.
Tensor dot_const(const Tensor& x, std::vector<double> r);
Tensor stack_rows(std::span<const Tensor> rows);
// Mean softmax cross-entropy with label smoothing; max-subtraction stabilized.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                     double smoothing = 0.0);

constexpr double kLayerNormEps = 1e-6;
constexpr double kBatchNormEps = 1e-5;

}  // namespace hopmix
