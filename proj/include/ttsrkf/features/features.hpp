#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <utility>

#include "ttsrkf/core/tensor_train_matrix.hpp"

namespace ttsrkf {

enum class FeatureKind { HilbertSe, Volterra, LaggedIoSe };

/// Lag selection for the lagged input/output embedding. Defaults give a
/// 14-dimensional input: 7 input lags {0..6} and 7 output lags {1..7}.
struct LagConfig {
  std::vector<Index> input_lags{0, 1, 2, 3, 4, 5, 6};
  std::vector<Index> output_lags{1, 2, 3, 4, 5, 6, 7};
  // calibration min/max map to +/- margin * L_dom; the sine basis vanishes at
  // +/- L_dom, so the data must keep clear of the boundary or the prior
  // variance collapses multiplicatively across dimensions
  double margin = 0.5;

  Index dims() const { return static_cast<Index>(input_lags.size() + output_lags.size()); }
  Index max_lag() const {
    Index m = 0;
    for (Index l : input_lags) m = std::max(m, l);
    for (Index l : output_lags) m = std::max(m, l);
    return m;
  }
};

struct FeatureConfig {
  FeatureKind kind = FeatureKind::HilbertSe;
  Index dims = 1;         // D
  Index basis_count = 1;  // I, basis functions per dimension
  std::vector<double> lengthscale{1.0};        // per dimension; single value broadcasts
  double signal_var = 1.0;                     // sigma_f^2
  std::vector<double> domain_half_width{1.0};  // L_dom per dimension; broadcasts
  double regularization = 1.0;                 // lambda, Volterra prior
  LagConfig lags;

  double ell(Index d) const { return lengthscale[lengthscale.size() == 1 ? 0 : d]; }
  double l_dom(Index d) const {
    return domain_half_width[domain_half_width.size() == 1 ? 0 : d];
  }

  void validate() const {
    if (dims < 1 || basis_count < 1) throw ConfigError("feature config: dims and I must be >= 1");
    for (double l : lengthscale)
      if (!(l > 0)) throw ConfigError("feature config: lengthscale must be > 0");
    for (double l : domain_half_width)
      if (!(l > 0)) throw ConfigError("feature config: domain half-width must be > 0");
    if (!(regularization > 0)) throw ConfigError("feature config: lambda must be > 0");
    if (!(signal_var >= 0)) throw ConfigError("feature config: signal variance must be >= 0");
  }
};

/// Square-root prior factors per dimension; the prior mean is zero.
struct PriorSpec {
  std::vector<Matrix> sqrt_factors;  // L_0^(d), P_0 = kron of L_0^(d) L_0^(d)^T
};

/// Sine basis on (-L, L): phi_j(x) = L^{-1/2} sin(pi j (x + L) / (2L)).
inline Rank1FeatureTT hilbert_se_factors(const Vector& x, const FeatureConfig& cfg) {
  cfg.validate();
  if (x.size() != cfg.dims) throw std::invalid_argument("hilbert_se_factors: dimension mismatch");
  Rank1FeatureTT phi;
  phi.factors.reserve(cfg.dims);
  for (Index d = 0; d < cfg.dims; ++d) {
    const double L = cfg.l_dom(d);
    if (std::abs(x(d)) > L) throw std::domain_error("hilbert_se_factors: input outside (-L, L)");
    Vector f(cfg.basis_count);
    for (Index j = 1; j <= cfg.basis_count; ++j)
      f(j - 1) = std::sin(std::numbers::pi * double(j) * (x(d) + L) / (2.0 * L)) / std::sqrt(L);
    phi.factors.push_back(std::move(f));
  }
  return phi;
}

/// Per-dimension SE spectral density with the signal variance split so the
/// product over dimensions recovers sigma_f^2.
inline double se_spectral_density(double omega, double ell, double signal_var, Index dims) {
  const double amp = std::pow(signal_var, 1.0 / double(dims));
  return amp * std::sqrt(2.0 * std::numbers::pi * ell * ell) *
         std::exp(-0.5 * omega * omega * ell * ell);
}

/// Diagonal square-root prior: L_0^(d) = diag(sqrt(S_d(sqrt(lambda_j)))) with
/// lambda_j = (pi j / (2 L))^2; entries decay strictly in j.
inline PriorSpec se_prior(const FeatureConfig& cfg) {
  cfg.validate();
  PriorSpec p;
  p.sqrt_factors.reserve(cfg.dims);
  for (Index d = 0; d < cfg.dims; ++d) {
    const double L = cfg.l_dom(d);
    Vector diag(cfg.basis_count);
    for (Index j = 1; j <= cfg.basis_count; ++j) {
      const double omega = std::numbers::pi * double(j) / (2.0 * L);
      diag(j - 1) = std::sqrt(se_spectral_density(omega, cfg.ell(d), cfg.signal_var, cfg.dims));
    }
    p.sqrt_factors.push_back(Matrix(diag.asDiagonal()));
  }
  return p;
}

/// Per-dimension monomial factor [1, u_t, ..., u_{t-I+2}]; identical across
/// dimensions, so the Kronecker product spans all lagged-input monomials up
/// to total degree D. The window holds the current input first.
inline Rank1FeatureTT volterra_factors(const Vector& u_window, const FeatureConfig& cfg) {
  cfg.validate();
  if (u_window.size() != cfg.basis_count - 1)
    throw std::invalid_argument("volterra_factors: window must hold I-1 inputs");
  Vector f(cfg.basis_count);
  f(0) = 1.0;
  f.tail(cfg.basis_count - 1) = u_window;
  Rank1FeatureTT phi;
  phi.factors.assign(cfg.dims, f);
  return phi;
}

/// Tikhonov prior sqrt(lambda) * I, the scale carried on the first factor.
inline PriorSpec volterra_prior(const FeatureConfig& cfg) {
  cfg.validate();
  PriorSpec p;
  p.sqrt_factors.reserve(cfg.dims);
  for (Index d = 0; d < cfg.dims; ++d) {
    Matrix f = Matrix::Identity(cfg.basis_count, cfg.basis_count);
    if (d == 0) f *= std::sqrt(cfg.regularization);
    p.sqrt_factors.push_back(std::move(f));
  }
  return p;
}

/// Affine rescale fitted so a calibration range maps onto +/- margin * L_dom.
struct AffineMap {
  double scale = 1.0;
  double offset = 0.0;
  double operator()(double x) const { return scale * x + offset; }

  static AffineMap fit(double lo, double hi, double l_dom, double margin) {
    AffineMap m;
    const double span = hi - lo;
    if (span <= 0) {
      m.scale = 0.0;
      m.offset = 0.0;  // degenerate calibration collapses to the domain center
      return m;
    }
    m.scale = 2.0 * margin * l_dom / span;
    m.offset = -margin * l_dom - m.scale * lo;
    return m;
  }
};

inline std::pair<AffineMap, AffineMap> fit_lagged_io_scaling(const std::vector<double>& u,
                                                             const std::vector<double>& y,
                                                             std::size_t prefix, double l_dom,
                                                             double margin) {
  if (u.empty() || y.empty()) throw std::invalid_argument("fit_lagged_io_scaling: empty history");
  prefix = std::min({prefix, u.size(), y.size()});
  double ulo = u[0], uhi = u[0], ylo = y[0], yhi = y[0];
  for (std::size_t t = 0; t < prefix; ++t) {
    ulo = std::min(ulo, u[t]);
    uhi = std::max(uhi, u[t]);
    ylo = std::min(ylo, y[t]);
    yhi = std::max(yhi, y[t]);
  }
  return {AffineMap::fit(ulo, uhi, l_dom, margin), AffineMap::fit(ylo, yhi, l_dom, margin)};
}

/// GP input at time t from lagged inputs/outputs, rescaled coordinate-wise.
/// Returns nothing until the histories cover every configured lag.
inline std::optional<Vector> lagged_io_embedding(const std::vector<double>& u,
                                                 const std::vector<double>& y, Index t,
                                                 const LagConfig& lags, const AffineMap& umap,
                                                 const AffineMap& ymap) {
  if (t < lags.max_lag()) return std::nullopt;
  if (t >= static_cast<Index>(u.size()) || t >= static_cast<Index>(y.size()))
    throw std::invalid_argument("lagged_io_embedding: t beyond history");
  Vector x(lags.dims());
  Index k = 0;
  for (Index l : lags.input_lags) x(k++) = umap(u[static_cast<std::size_t>(t - l)]);
  for (Index l : lags.output_lags) x(k++) = ymap(y[static_cast<std::size_t>(t - l)]);
  return x;
}

}  // namespace ttsrkf
