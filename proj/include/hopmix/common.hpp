#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hopmix {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// Constant input where a centered norm would divide by zero.
struct DegenerateInput : Error {
  using Error::Error;
};

struct NonConvergence : Error {
  NonConvergence(const std::string& msg, double res) : Error(msg), residual(res) {}
  double residual;
};

// File-format errors, kept distinct so callers can tell them apart.
struct FormatError : Error {
  using Error::Error;
};
struct BadMagic : FormatError {
  using FormatError::FormatError;
};
struct Truncated : FormatError {
  using FormatError::FormatError;
};
struct Malformed : FormatError {
  using FormatError::FormatError;
};

struct ConfigError : Error {
  using Error::Error;
};

// Numerical blow-up detected mid-run (integration or training).
struct Diverged : Error {
  using Error::Error;
};

// Global toggle for per-op NaN/Inf validation. Defaults to on in debug
// builds; test binaries switch it on explicitly.
bool finite_checks_enabled();
void set_finite_checks(bool on);

// RAII scope guard for the toggle.
class FiniteCheckGuard {
 public:
  explicit FiniteCheckGuard(bool on) : prev_(finite_checks_enabled()) { set_finite_checks(on); }
  ~FiniteCheckGuard() { set_finite_checks(prev_); }
  FiniteCheckGuard(const FiniteCheckGuard&) = delete;
  FiniteCheckGuard& operator=(const FiniteCheckGuard&) = delete;

 private:
  bool prev_;
};

// Throws Diverged when any entry is NaN/Inf. Unconditional; callers decide
// whether to gate on finite_checks_enabled().
void check_finite(std::span<const double> xs, const char* what);

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace hopmix
