#pragma once

#include <Eigen/Dense>

#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>

namespace ttsrkf {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when a factor or intermediate stops being numerically meaningful
/// (non-finite values, innovation below the noise floor). The caller decides
/// whether to abort or to keep the last good state.
class NumericalFailure : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a dense materialization would exceed the configured entry cap.
class ResourceLimit : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Entry cap for dense reconstructions; overridable via TTSRKF_DENSE_CAP.
inline Index dense_entry_cap() {
  if (const char* s = std::getenv("TTSRKF_DENSE_CAP")) {
    const long long v = std::atoll(s);
    if (v > 0) return static_cast<Index>(v);
  }
  return Index(1) << 24;
}

/// Deterministic standard-normal stream; one instance per logical use so
/// seeds stay reproducible regardless of call order elsewhere.
class NormalRng {
 public:
  explicit NormalRng(std::uint64_t seed) : eng_(seed) {}
  double operator()() { return dist_(eng_); }
  std::uint64_t uint64() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

namespace detail {

/// Saturating product so feasibility bounds never overflow.
inline Index sat_mul(Index a, Index b) {
  constexpr Index cap = Index(1) << 62;
  if (a == 0 || b == 0) return 0;
  if (a > cap / b) return cap;
  return a * b;
}

}  // namespace detail

}  // namespace ttsrkf
