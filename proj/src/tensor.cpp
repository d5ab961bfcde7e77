#include "hopmix/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hopmix/scalar_math.hpp"

namespace hopmix {

namespace {

#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void maybe_check(const Tensor& t, const char* what) {
  if (g_finite_checks) check_finite(t.span(), what);
}

// Accumulation orders in these kernels are fixed at compile time (sequential
// rows; four interleaved lanes inside dot products), so results are
// bit-identical across runs.

// C[m x n] = A[m x k] * B[k x n]
void mm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c,
           std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += s * A[m x k] * B[k x n]
void mm_nn_accum(const double* __restrict a, const double* __restrict b, double* __restrict c,
                 std::size_t m, std::size_t k, std::size_t n, double s) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = s * arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

double dot4(const double* __restrict x, const double* __restrict y, std::size_t k) {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    a0 += x[p] * y[p];
    a1 += x[p + 1] * y[p + 1];
    a2 += x[p + 2] * y[p + 2];
    a3 += x[p + 3] * y[p + 3];
  }
  double tail = 0.0;
  for (; p < k; ++p) tail += x[p] * y[p];
  return ((a0 + a1) + (a2 + a3)) + tail;
}

// C[m x n] (+)= s * A[m x k] * B[n x k]^T
void mm_nt(const double* __restrict a, const double* __restrict b, double* __restrict c,
           std::size_t m, std::size_t k, std::size_t n, double s, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += s * dot4(arow, b + j * k, k);
  }
}

// C[k x n] += s * A[m x k]^T * B[m x n]
void mm_tn_accum(const double* __restrict a, const double* __restrict b, double* __restrict c,
                 std::size_t m, std::size_t k, std::size_t n, double s) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = s * arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->on_tape()) continue;
    if (tape && tape != t->tape()) throw Error("operands recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

// Records `out` on `tape` if non-null; lifts off-tape inputs to leaves.
Tensor finish(Tape* tape, Op op, Tensor out, std::initializer_list<const Tensor*> inputs,
              std::vector<double> aux = {}, std::vector<std::int64_t> iaux = {}) {
  maybe_check(out, "op output");
  if (!tape) return out;
  Tape::Node n;
  n.op = op;
  n.shape = out.shape();
  n.value = out.data();
  for (const Tensor* t : inputs) {
    const std::int64_t id = (t->on_tape() && t->tape() == tape)
                                ? t->node()
                                : static_cast<std::int64_t>(tape->leaf(*t));
    n.inputs.push_back(id);
  }
  n.aux = std::move(aux);
  n.iaux = std::move(iaux);
  const std::size_t id = tape->record(std::move(n));
  out.attach(tape, static_cast<std::int64_t>(id));
  return out;
}

}  // namespace

bool finite_checks_enabled() { return g_finite_checks; }
void set_finite_checks(bool on) { g_finite_checks = on; }

void check_finite(std::span<const double> xs, const char* what) {
  for (double x : xs) {
    if (!std::isfinite(x)) {
      throw Diverged(std::string("non-finite value in ") + what);
    }
  }
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item() on tensor with " + std::to_string(numel()) + " elements");
  return data_[0];
}

// --- tape ----------------------------------------------------------------

namespace {
// Process-wide counter so (tape address, generation) pairs are never reused:
// a fresh Tape allocated at a recycled address must not satisfy stale
// parameter leaf caches.
std::uint64_t next_tape_generation() {
  static std::uint64_t counter = 0;
  return ++counter;
}
}  // namespace

Tape::Tape() : generation_(next_tape_generation()) {}

std::size_t Tape::record(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

std::size_t Tape::leaf(const Tensor& value, const void* cache_key) {
  if (cache_key) {
    auto it = leaf_cache_.find(cache_key);
    if (it != leaf_cache_.end()) return it->second;
  }
  Node n;
  n.op = Op::Leaf;
  n.shape = value.shape();
  n.value = value.data();
  const std::size_t id = record(std::move(n));
  if (cache_key) leaf_cache_.emplace(cache_key, id);
  return id;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  leaf_cache_.clear();
  generation_ = next_tape_generation();
}

std::vector<double>& Tape::grad_buf(std::size_t i) {
  if (grads_[i].empty()) grads_[i].assign(nodes_[i].value.size(), 0.0);
  return grads_[i];
}

void Tape::backward(const Tensor& loss) {
  if (!loss.on_tape() || loss.tape() != this)
    throw Error("backward: loss is not recorded on this tape");
  if (loss.numel() != 1) throw ShapeError("backward: loss is not a scalar");
  const auto root = static_cast<std::size_t>(loss.node());
  if (root >= nodes_.size()) throw Error("backward: loss node is stale");
  grads_.assign(nodes_.size(), {});
  grad_buf(root)[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (grads_[i].empty()) continue;
    backward_node(i);
  }
}

void Tape::backward_node(std::size_t i) {
  const Node& n = nodes_[i];
  const std::vector<double> gy = grads_[i];  // copy: grad_buf below may reallocate grads_
  auto in = [&](std::size_t k) -> const Node& {
    return nodes_[static_cast<std::size_t>(n.inputs[k])];
  };
  auto gin = [&](std::size_t k) -> std::vector<double>& {
    return grad_buf(static_cast<std::size_t>(n.inputs[k]));
  };

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Matmul: {
      const Node& a = in(0);
      const Node& b = in(1);
      const std::size_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
      mm_nt(gy.data(), b.value.data(), gin(0).data(), m, p, k, 1.0, true);   // dA += dC B^T
      mm_tn_accum(a.value.data(), gy.data(), gin(1).data(), m, k, p, 1.0);  // dB += A^T dC
      break;
    }
    case Op::Linear: {
      const Node& x = in(0);
      const Node& w = in(1);
      const double s = n.aux[0];
      const std::size_t out = w.shape[0], inn = w.shape[1];
      const std::size_t m = x.value.size() / inn;
      mm_nn_accum(gy.data(), w.value.data(), gin(0).data(), m, out, inn, s);   // dx += s dy W
      mm_tn_accum(gy.data(), x.value.data(), gin(1).data(), m, out, inn, s);  // dW += s dy^T x
      std::vector<double>& gb = gin(2);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < out; ++j) gb[j] += gy[r * out + j];
      break;
    }
    case Op::Transpose: {
      const Node& a = in(0);
      const std::size_t m = a.shape[0], c = a.shape[1];
      std::vector<double>& ga = gin(0);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += gy[j * m + r];
      break;
    }
    case Op::Add: {
      std::vector<double>& ga = gin(0);
      for (std::size_t k = 0; k < gy.size(); ++k) ga[k] += gy[k];
      std::vector<double>& gb = gin(1);
      for (std::size_t k = 0; k < gy.size(); ++k) gb[k] += gy[k];
      break;
    }
    case Op::Scale: {
      const double s = n.aux[0];
      std::vector<double>& ga = gin(0);
      for (std::size_t k = 0; k < gy.size(); ++k) ga[k] += s * gy[k];
      break;
    }
    case Op::Gelu: {
      const Node& x = in(0);
      std::vector<double>& ga = gin(0);
      for (std::size_t k = 0; k < gy.size(); ++k) ga[k] += gy[k] * gelu_prime(x.value[k]);
      break;
    }
    case Op::LayerNormRows: {
      // aux holds xhat (m*c) then inv_std (m).
      const Node& gamma = in(1);
      const std::size_t c = gamma.value.size();
      const std::size_t m = gy.size() / c;
      const double* xhat = n.aux.data();
      const double* inv_std = n.aux.data() + m * c;
      std::vector<double>& gx = gin(0);
      std::vector<double>& gg = gin(1);
      std::vector<double>& gb = gin(2);
      std::vector<double> dxhat(c);
      for (std::size_t r = 0; r < m; ++r) {
        const double* xh = xhat + r * c;
        const double* g = gy.data() + r * c;
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          dxhat[j] = g[j] * gamma.value[j];
          gg[j] += g[j] * xh[j];
          gb[j] += g[j];
          mean_dxhat += dxhat[j];
          mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat /= static_cast<double>(c);
        mean_dxhat_xhat /= static_cast<double>(c);
        double* gxr = gx.data() + r * c;
        for (std::size_t j = 0; j < c; ++j)
          gxr[j] += inv_std[r] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
      }
      break;
    }
    case Op::BatchNormCols: {
      // aux holds xhat (m*c) then inv_std (c); statistics per column.
      const Node& gamma = in(1);
      const std::size_t c = gamma.value.size();
      const std::size_t m = gy.size() / c;
      const double* xhat = n.aux.data();
      const double* inv_std = n.aux.data() + m * c;
      std::vector<double>& gx = gin(0);
      std::vector<double>& gg = gin(1);
      std::vector<double>& gb = gin(2);
      for (std::size_t j = 0; j < c; ++j) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
          const double d = gy[r * c + j] * gamma.value[j];
          mean_dxhat += d;
          mean_dxhat_xhat += d * xhat[r * c + j];
          gg[j] += gy[r * c + j] * xhat[r * c + j];
          gb[j] += gy[r * c + j];
        }
        mean_dxhat /= static_cast<double>(m);
        mean_dxhat_xhat /= static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) {
          const double d = gy[r * c + j] * gamma.value[j];
          gx[r * c + j] += inv_std[j] * (d - mean_dxhat - xhat[r * c + j] * mean_dxhat_xhat);
        }
      }
      break;
    }
    case Op::MulMask: {
      std::vector<double>& ga = gin(0);
      for (std::size_t k = 0; k < gy.size(); ++k) ga[k] += gy[k] * n.aux[k];
      break;
    }
    case Op::MeanRows: {
      const Node& x = in(0);
      const std::size_t m = x.shape[0], c = x.shape[1];
      std::vector<double>& ga = gin(0);
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += gy[j] * inv;
      break;
    }
    case Op::SumAll: {
      std::vector<double>& ga = gin(0);
      for (double& g : ga) g += gy[0];
      break;
    }
    case Op::DotConst: {
      std::vector<double>& ga = gin(0);
      for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += gy[0] * n.aux[k];
      break;
    }
    case Op::StackRows: {
      const std::size_t c = n.shape[1];
      for (std::size_t r = 0; r < n.inputs.size(); ++r) {
        std::vector<double>& g = gin(r);
        for (std::size_t j = 0; j < c; ++j) g[j] += gy[r * c + j];
      }
      break;
    }
    case Op::CrossEntropy: {
      // aux: softmax probs (B*K) then smoothing; iaux: labels.
      const std::size_t bk = n.aux.size() - 1;
      const std::size_t bsz = n.iaux.size();
      const std::size_t k = bk / bsz;
      const double smoothing = n.aux[bk];
      const double off = smoothing / static_cast<double>(k);
      const double g0 = gy[0] / static_cast<double>(bsz);
      std::vector<double>& gx = gin(0);
      for (std::size_t b = 0; b < bsz; ++b) {
        const auto y = static_cast<std::size_t>(n.iaux[b]);
        for (std::size_t j = 0; j < k; ++j) {
          double target = off;
          if (j == y) target += 1.0 - smoothing;
          gx[b * k + j] += g0 * (n.aux[b * k + j] - target);
        }
      }
      break;
    }
  }
}

// --- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 operands");
  require(a.cols() == b.rows(), "matmul inner dimensions disagree: " + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()));
  Tensor out({a.rows(), b.cols()});
  mm_nn(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.cols());
  return finish(common_tape({&a, &b}), Op::Matmul, std::move(out), {&a, &b});
}

Tensor linear_op(const Tensor& x, const Tensor& w, const Tensor& b, double s) {
  require(w.rank() == 2, "linear: weight must be rank-2 [out x in]");
  require(x.rank() == 1 || x.rank() == 2, "linear: input must be rank 1 or 2");
  const std::size_t in = w.cols(), out = w.rows();
  const std::size_t xin = (x.rank() == 1) ? x.numel() : x.cols();
  require(xin == in, "linear: input width " + std::to_string(xin) + " != " + std::to_string(in));
  require(b.numel() == out, "linear: bias length mismatch");
  const std::size_t m = (x.rank() == 1) ? 1 : x.rows();
  Tensor outp(x.rank() == 1 ? std::vector<std::size_t>{out} : std::vector<std::size_t>{m, out});
  mm_nt(x.data().data(), w.data().data(), outp.data().data(), m, in, out, s, false);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < out; ++j) outp.data()[r * out + j] += b.data()[j];
  return finish(common_tape({&x, &w, &b}), Op::Linear, std::move(outp), {&x, &w, &b}, {s});
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose expects rank-2");
  Tensor out({a.cols(), a.rows()});
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
  return finish(common_tape({&a}), Op::Transpose, std::move(out), {&a});
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "add: shapes differ");
  Tensor out(a.shape());
  for (std::size_t k = 0; k < a.numel(); ++k) out.data()[k] = a.data()[k] + b.data()[k];
  return finish(common_tape({&a, &b}), Op::Add, std::move(out), {&a, &b});
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t k = 0; k < a.numel(); ++k) out.data()[k] = s * a.data()[k];
  return finish(common_tape({&a}), Op::Scale, std::move(out), {&a}, {s});
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t k = 0; k < x.numel(); ++k) out.data()[k] = gelu(x.data()[k]);
  return finish(common_tape({&x}), Op::Gelu, std::move(out), {&x});
}

Tensor layernorm_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require(x.rank() >= 1, "layernorm: rank >= 1 required");
  const std::size_t c = x.shape().back();
  require(gamma.numel() == c && beta.numel() == c, "layernorm: affine size != last dim");
  const std::size_t m = x.numel() / c;
  Tensor out(x.shape());
  std::vector<double> aux(m * c + m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = x.data().data() + r * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xr[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    aux[m * c + r] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (xr[j] - mean) * inv;
      aux[r * c + j] = xh;
      out.data()[r * c + j] = gamma.data()[j] * xh + beta.data()[j];
    }
  }
  return finish(common_tape({&x, &gamma, &beta}), Op::LayerNormRows, std::move(out),
                {&x, &gamma, &beta}, std::move(aux));
}

Tensor batchnorm_cols(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require(x.rank() == 2, "batchnorm: rank-2 required");
  const std::size_t m = x.rows(), c = x.cols();
  require(gamma.numel() == c && beta.numel() == c, "batchnorm: affine size != columns");
  Tensor out(x.shape());
  std::vector<double> aux(m * c + c);
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < m; ++r) mean += x.at(r, j);
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      const double d = x.at(r, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
    aux[m * c + j] = inv;
    for (std::size_t r = 0; r < m; ++r) {
      const double xh = (x.at(r, j) - mean) * inv;
      aux[r * c + j] = xh;
      out.at(r, j) = gamma.data()[j] * xh + beta.data()[j];
    }
  }
  return finish(common_tape({&x, &gamma, &beta}), Op::BatchNormCols, std::move(out),
                {&x, &gamma, &beta}, std::move(aux));
}

Tensor mul_mask(const Tensor& x, std::vector<double> mask) {
  require(mask.size() == x.numel(), "mul_mask: mask size mismatch");
  Tensor out(x.shape());
  for (std::size_t k = 0; k < x.numel(); ++k) out.data()[k] = x.data()[k] * mask[k];
  return finish(common_tape({&x}), Op::MulMask, std::move(out), {&x}, std::move(mask));
}

Tensor mean_rows(const Tensor& x) {
  require(x.rank() == 2, "mean_rows expects rank-2");
  const std::size_t m = x.rows(), c = x.cols();
  Tensor out({c});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < c; ++j) out.data()[j] += x.at(r, j);
  for (std::size_t j = 0; j < c; ++j) out.data()[j] /= static_cast<double>(m);
  return finish(common_tape({&x}), Op::MeanRows, std::move(out), {&x});
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  return finish(common_tape({&x}), Op::SumAll, std::move(out), {&x});
}

Tensor dot_const(const Tensor& x, std::vector<double> r) {
  require(r.size() == x.numel(), "dot_const: vector size mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < r.size(); ++k) s += r[k] * x.data()[k];
  Tensor out = Tensor::scalar(s);
  return finish(common_tape({&x}), Op::DotConst, std::move(out), {&x}, std::move(r));
}

Tensor stack_rows(std::span<const Tensor> rows) {
  require(!rows.empty(), "stack_rows: empty input");
  const std::size_t c = rows[0].numel();
  Tape* tape = nullptr;
  for (const Tensor& t : rows) {
    require(t.rank() == 1 && t.numel() == c, "stack_rows: rows must be equal-length rank-1");
    if (t.on_tape()) {
      if (tape && tape != t.tape()) throw Error("operands recorded on different tapes");
      tape = t.tape();
    }
  }
  Tensor out({rows.size(), c});
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy(rows[r].data().begin(), rows[r].data().end(), out.data().begin() + r * c);
  maybe_check(out, "stack_rows");
  if (!tape) return out;
  Tape::Node n;
  n.op = Op::StackRows;
  n.shape = out.shape();
  n.value = out.data();
  for (const Tensor& t : rows) {
    const std::int64_t id =
        t.on_tape() ? t.node() : static_cast<std::int64_t>(tape->leaf(t));
    n.inputs.push_back(id);
  }
  const std::size_t id = tape->record(std::move(n));
  out.attach(tape, static_cast<std::int64_t>(id));
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, double smoothing) {
  require(logits.rank() == 2, "cross_entropy: logits must be [batch x classes]");
  const std::size_t bsz = logits.rows(), k = logits.cols();
  require(labels.size() == bsz, "cross_entropy: labels/batch size mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw Error("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                  std::to_string(k) + ")");
  }
  std::vector<double> aux(bsz * k + 1);
  aux[bsz * k] = smoothing;
  const double off = smoothing / static_cast<double>(k);
  double total = 0.0;
  for (std::size_t b = 0; b < bsz; ++b) {
    const double* row = logits.data().data() + b * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double logz = std::log(z) + mx;
    double loss = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      aux[b * k + j] = std::exp(row[j] - logz);
      double target = off;
      if (j == static_cast<std::size_t>(labels[b])) target += 1.0 - smoothing;
      if (target != 0.0) loss -= target * (row[j] - logz);
    }
    total += loss;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(bsz));
  std::vector<std::int64_t> iaux(labels.begin(), labels.end());
  return finish(common_tape({&logits}), Op::CrossEntropy, std::move(out), {&logits},
                std::move(aux), std::move(iaux));
}

}  // namespace hopmix
