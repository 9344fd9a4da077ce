#pragma once

#include "ttsrkf/filter/tnsrkf.hpp"

namespace ttsrkf {

/// Dense filter state shared by the covariance and square-root variants: the
/// factor field holds P for dense_kf_step and L (with P = L L^T) for
/// dense_srkf_step.
struct DenseFilterState {
  Vector mean;
  Matrix factor;
  double noise_var = 1.0;
};

/// Dense start from the Kronecker prior; sqrt_form selects whether factor is
/// the square root L_0 or the full covariance L_0 L_0^T.
inline DenseFilterState dense_init(const PriorSpec& prior, double noise_var, bool sqrt_form) {
  if (prior.sqrt_factors.empty()) throw std::invalid_argument("dense_init: empty prior");
  if (!(noise_var > 0)) throw std::invalid_argument("dense_init: noise variance must be > 0");
  DenseFilterState s;
  s.noise_var = noise_var;
  const Matrix l = ttm_to_dense(ttm_from_kron_factors(prior.sqrt_factors));
  s.factor = sqrt_form ? l : Matrix(l * l.transpose());
  s.mean = Vector::Zero(l.rows());
  return s;
}

/// Standard measurement update with the Joseph-form covariance
/// P_t = (I - K phi^T) P (I - K phi^T)^T + sigma_y^2 K K^T, applied verbatim.
inline void dense_kf_step(DenseFilterState& s, const Vector& phi, double y) {
  const Index m = s.mean.size();
  if (phi.size() != m || s.factor.rows() != m || s.factor.cols() != m)
    throw std::invalid_argument("dense_kf_step: size mismatch");
  const Vector pphi = s.factor * phi;
  const double innov = phi.dot(pphi) + s.noise_var;
  if (!(innov > 0)) throw NumericalFailure("dense_kf_step: nonpositive innovation");
  const Vector k = pphi / innov;
  const Vector w = s.mean + k * (y - phi.dot(s.mean));
  const Matrix ikp = Matrix::Identity(m, m) - k * phi.transpose();
  Matrix p = ikp * s.factor * ikp.transpose() + s.noise_var * k * k.transpose();
  detail::check_finite(p.data(), static_cast<std::size_t>(p.size()), "dense_kf_step");
  detail::check_finite(w.data(), static_cast<std::size_t>(w.size()), "dense_kf_step");
  s.mean = w;
  s.factor = std::move(p);
}

/// Square-root update: thin QR of the concatenated factor
/// [(I - K phi^T) L, sigma_y K]^T, keeping L = R^T with nonnegative diagonal.
inline void dense_srkf_step(DenseFilterState& s, const Vector& phi, double y) {
  const Index m = s.mean.size();
  if (phi.size() != m || s.factor.rows() != m || s.factor.cols() != m)
    throw std::invalid_argument("dense_srkf_step: size mismatch");
  const Vector c = s.factor.transpose() * phi;
  const double innov = c.squaredNorm() + s.noise_var;
  if (!(innov > 0)) throw NumericalFailure("dense_srkf_step: nonpositive innovation");
  const Vector k = (s.factor * c) / innov;
  const Vector w = s.mean + k * (y - phi.dot(s.mean));
  Matrix pre(m, m + 1);
  pre.leftCols(m) = s.factor - k * c.transpose();
  pre.col(m) = std::sqrt(s.noise_var) * k;
  Eigen::HouseholderQR<Matrix> qr(pre.transpose());
  Matrix r = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
  for (Index i = 0; i < m; ++i)
    if (r(i, i) < 0) r.row(i) = -r.row(i);
  detail::check_finite(r.data(), static_cast<std::size_t>(r.size()), "dense_srkf_step");
  detail::check_finite(w.data(), static_cast<std::size_t>(w.size()), "dense_srkf_step");
  s.mean = w;
  s.factor = r.transpose();
}

/// Per-step rank caps for the TNKF's rounding; rel_tol additionally drops
/// near-zero tails (0 keeps pure rank capping).
struct TnkfRounding {
  std::vector<Index> cov_max_ranks;
  std::vector<Index> mean_max_ranks;
  double rel_tol = 0.0;
};

/// Prior-art baseline state: covariance carried directly as a TTm (no square
/// root), so rounding can and does break positive semidefiniteness.
struct TnkfState {
  TensorTrain mean;
  TensorTrainMatrix cov;
  double noise_var = 1.0;
  TnkfRounding rounding;
};

inline TnkfState tnkf_init(const PriorSpec& prior, const TnkfRounding& rounding,
                           double noise_var) {
  if (prior.sqrt_factors.empty()) throw std::invalid_argument("tnkf_init: empty prior");
  if (!(noise_var > 0)) throw std::invalid_argument("tnkf_init: noise variance must be > 0");
  const auto D = prior.sqrt_factors.size();
  if (rounding.cov_max_ranks.size() != D + 1 || rounding.mean_max_ranks.size() != D + 1)
    throw std::invalid_argument("tnkf_init: rounding ranks must have length D+1");
  TnkfState s;
  s.noise_var = noise_var;
  s.rounding = rounding;
  std::vector<Matrix> pf;
  pf.reserve(D);
  for (const auto& f : prior.sqrt_factors) pf.push_back(f * f.transpose());
  s.cov = ttm_from_kron_factors(pf);
  for (const auto& f : prior.sqrt_factors) s.mean.cores.emplace_back(1, f.rows(), 1);
  s.mean.canonical_site = 0;
  return s;
}

inline double tnkf_innovation(const TnkfState& s, const Rank1FeatureTT& phi) {
  const TensorTrain phi_tt = phi.to_tt();
  return tt_dot(ttm_apply(s.cov, phi_tt), phi_tt) + s.noise_var;
}

struct TnkfStepInfo {
  double innovation = 0.0;
  std::vector<Index> pre_round_cov_ranks;
};

/// One TNKF measurement update: mean gains K (y - phi^T w); covariance takes
/// the plain downdate P - K S K^T (not Joseph form), then both are rounded to
/// the configured ranks. A nonpositive innovation reports the PSD loss this
/// baseline is known for.
inline void tnkf_step(TnkfState& s, const Rank1FeatureTT& phi, double y,
                      TnkfStepInfo* info = nullptr) {
  const TensorTrain phi_tt = phi.to_tt();
  const TensorTrain pphi = ttm_apply(s.cov, phi_tt);
  const double innov = tt_dot(pphi, phi_tt) + s.noise_var;
  if (info) info->innovation = innov;
  if (!std::isfinite(innov) || !(innov > 0))
    throw NumericalFailure("tnkf_step: innovation not positive; covariance lost PSD");

  TensorTrain gain = pphi;
  tt_scale(gain, 1.0 / innov);
  TensorTrain correction = gain;
  tt_scale(correction, y - tt_dot(s.mean, phi_tt));
  TensorTrain mean_new = tt_add(s.mean, correction);
  tt_round(mean_new, s.rounding.mean_max_ranks, s.rounding.rel_tol);

  TensorTrainMatrix downdate = ttm_outer(gain, pphi);  // K (P phi)^T = K S K^T
  ttm_scale(downdate, -1.0);
  TensorTrainMatrix cov_new = ttm_add(s.cov, downdate);
  if (info) info->pre_round_cov_ranks = cov_new.ranks();
  tt_round(cov_new, s.rounding.cov_max_ranks, s.rounding.rel_tol);

  for (const auto& c : mean_new.cores)
    detail::check_finite(c.v.data(), c.v.size(), "tnkf_step mean");
  for (const auto& c : cov_new.cores)
    detail::check_finite(c.v.data(), c.v.size(), "tnkf_step covariance");
  s.mean = std::move(mean_new);
  s.cov = std::move(cov_new);
}

inline GaussianPrediction tnkf_predict(const TnkfState& s, const Rank1FeatureTT& phi) {
  const TensorTrain phi_tt = phi.to_tt();
  GaussianPrediction p;
  p.mean = tt_dot(s.mean, phi_tt);
  p.variance = tt_dot(ttm_apply(s.cov, phi_tt), phi_tt);
  return p;
}

inline GaussianPrediction dense_predict(const DenseFilterState& s, const Vector& phi,
                                        bool sqrt_form) {
  GaussianPrediction p;
  p.mean = s.mean.dot(phi);
  p.variance = sqrt_form ? (s.factor.transpose() * phi).squaredNorm() : phi.dot(s.factor * phi);
  return p;
}

}  // namespace ttsrkf
