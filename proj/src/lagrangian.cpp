#include "hopmix/lagrangian.hpp"

#include <cmath>

namespace hopmix {

namespace {

// 15-point Gauss-Legendre nodes (non-negative half) and weights.
constexpr double kGlX[8] = {
    0.000000000000000, 0.201194093997435, 0.394151347077563, 0.570972172608539,
    0.724417731360170, 0.848206583410427, 0.937273392400706, 0.987992518020485,
};
constexpr double kGlW[8] = {
    0.202578241925561, 0.198431485327112, 0.186161000015562, 0.166269205816994,
    0.139570677926154, 0.107159220467172, 0.070366047488108, 0.030753241996117,
};

double gl15(double a, double b) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double s = kGlW[0] * gelu(c);
  for (int i = 1; i < 8; ++i) s += kGlW[i] * (gelu(c - h * kGlX[i]) + gelu(c + h * kGlX[i]));
  return s * h;
}

double adapt(double a, double b, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double left = gl15(a, m);
  const double right = gl15(m, b);
  // Absolute target, with a relative floor so huge ranges still terminate.
  const double limit = std::max(tol, 1e-15 * std::abs(left + right));
  if (depth > 40 || std::abs(left + right - whole) <= limit) return left + right;
  return adapt(a, m, left, 0.5 * tol, depth + 1) + adapt(m, b, right, 0.5 * tol, depth + 1);
}

}  // namespace

double gelu_antideriv(double h) {
  if (h == 0.0) return 0.0;
  return adapt(0.0, h, gl15(0.0, h), 1e-12, 0);
}

Tensor lagrangian_g(const Tensor& v, double eps) {
  const std::size_t n = v.numel();
  if (n == 0) throw ShapeError("lagrangian_g: empty input");
  double mean = 0.0;
  for (double x : v.data()) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : v.data()) ss += (x - mean) * (x - mean);
  if (eps == 0.0 && ss == 0.0)
    throw DegenerateInput("lagrangian_g: constant input with eps = 0");
  const double denom = std::sqrt(ss + eps);
  Tensor g(v.shape());
  for (std::size_t i = 0; i < n; ++i) g.data()[i] = (v.data()[i] - mean) / denom;
  return g;
}

double norm_lagrangian_value(const Tensor& v, double eps) {
  const std::size_t n = v.numel();
  double mean = 0.0;
  for (double x : v.data()) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : v.data()) ss += (x - mean) * (x - mean);
  return std::sqrt(ss + eps);
}

Tensor LagrangianSpec::activation(const Tensor& x) const {
  switch (kind) {
    case Kind::SumPhiGelu: {
      Tensor out(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = gelu(x.data()[i]);
      return out;
    }
    case Kind::NormLv:
      return lagrangian_g(x, eps);
  }
  throw Error("unreachable");
}

double LagrangianSpec::value(const Tensor& x) const {
  switch (kind) {
    case Kind::SumPhiGelu: {
      double s = 0.0;
      for (double v : x.data()) s += gelu_antideriv(v);
      return s;
    }
    case Kind::NormLv:
      return norm_lagrangian_value(x, eps);
  }
  throw Error("unreachable");
}

}  // namespace hopmix
