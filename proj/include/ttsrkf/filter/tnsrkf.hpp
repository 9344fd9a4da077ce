#pragma once

#include <functional>
#include <utility>

#include "ttsrkf/core/lapack.hpp"
#include "ttsrkf/core/projection.hpp"
#include "ttsrkf/features/features.hpp"

namespace ttsrkf {

struct SweepConfig {
  enum class Order { LeftToRight, Snake };
  Index max_sweeps = 1;
  double residual_tol = 1e-8;  // stop when the relative residual change drops below this
  Order order = Order::LeftToRight;
};

/// Square-root filter state: mean TT, covariance factor TTm with P = L L^T,
/// and the QR-skip budget p. cov_guess seeds the first covariance sweep with
/// a random well-conditioned frame; afterwards sweeps warm-start from L.
struct FilterState {
  TensorTrain mean;
  TensorTrainMatrix sqrt_factor;
  double noise_var = 1.0;
  Index qr_skip_budget = 1;
  SweepConfig sweep;
  std::uint64_t rng_seed = 0;
  std::optional<TensorTrainMatrix> cov_guess;
  Index step_count = 0;
};

struct GaussianPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

struct StepOutcome {
  bool ok = true;
  std::string message;
};

struct QrReport {
  bool applied = false;
  double discarded_rel = 0.0;  // Frobenius mass of dropped singular values / total
  bool exact = true;
};

struct SweepObserver {
  std::function<void(Index core, const TensorTrain&)> on_mean_update;
  std::function<void(Index core, const TensorTrainMatrix&)> on_cov_update;
};

namespace detail {

inline void check_finite(const double* data, std::size_t count, const char* what) {
  for (std::size_t i = 0; i < count; ++i)
    if (!std::isfinite(data[i])) throw NumericalFailure(std::string(what) + ": non-finite value");
}

// ---- TT chain environments (mean sweep) ----

inline Matrix tt_right_transfer(const Core3& x, const Core3& t, const Matrix& e) {
  Matrix out = Matrix::Zero(x.r0, t.r0);
  for (Index i = 0; i < x.n; ++i) out.noalias() += x.slice(i) * e * t.slice(i).transpose();
  return out;
}

inline Matrix tt_left_transfer(const Core3& x, const Core3& t, const Matrix& e) {
  Matrix out = Matrix::Zero(x.r1, t.r1);
  for (Index i = 0; i < x.n; ++i) out.noalias() += x.slice(i).transpose() * e * t.slice(i);
  return out;
}

/// Projection of one target chain onto the site-d frame of the iterate.
inline void tt_contribution(const Core3& t, const Matrix& el, const Matrix& er, double weight,
                            Core3& acc) {
  for (Index i = 0; i < t.n; ++i) {
    const Matrix m = el * t.slice(i) * er.transpose();
    for (Index b = 0; b < acc.r1; ++b)
      for (Index a = 0; a < acc.r0; ++a) acc.at(a, i, b) += weight * m(a, b);
  }
}

struct TtChain {
  const TensorTrain* t = nullptr;
  double weight = 1.0;
};

/// One-core-at-a-time least squares on the iterate's orthonormal frames.
/// Returns the final relative residual. The iterate leaves with the canonical
/// site at the last updated core.
inline double tt_als_fit(TensorTrain& x, const std::vector<TtChain>& chains,
                         const SweepConfig& cfg,
                         const std::function<void(Index, const TensorTrain&)>* obs) {
  const Index D = x.order();
  double norm_t2 = 0.0;
  for (const auto& a : chains)
    for (const auto& b : chains) norm_t2 += a.weight * b.weight * tt_dot(*a.t, *b.t);
  norm_t2 = std::max(norm_t2, 0.0);

  const auto nc = chains.size();
  std::vector<std::vector<Matrix>> lenv(nc), renv(nc);
  auto compute_right_envs = [&] {
    for (std::size_t c = 0; c < nc; ++c) {
      renv[c].assign(static_cast<std::size_t>(D) + 1, Matrix());
      renv[c][D] = Matrix::Ones(1, 1);
      for (Index d = D - 1; d >= 1; --d)
        renv[c][d] = tt_right_transfer(x.cores[d], chains[c].t->cores[d], renv[c][d + 1]);
      lenv[c].assign(static_cast<std::size_t>(D) + 1, Matrix());
      lenv[c][0] = Matrix::Ones(1, 1);
    }
  };

  auto update_core = [&](Index d) {
    Core3 fresh(x.cores[d].r0, x.cores[d].n, x.cores[d].r1);
    for (std::size_t c = 0; c < nc; ++c)
      tt_contribution(chains[c].t->cores[d], lenv[c][d], renv[c][d + 1], chains[c].weight, fresh);
    x.cores[d] = std::move(fresh);
    x.canonical_site = d;
    if (obs && *obs) (*obs)(d, x);
  };

  double prev_res = std::numeric_limits<double>::infinity();
  double res = prev_res;
  for (Index sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    const bool backward = cfg.order == SweepConfig::Order::Snake && (sweep % 2 == 1);
    if (!backward) {
      if (*x.canonical_site != 0) move_canonical_site(x, 0);
      compute_right_envs();
      for (Index d = 0; d < D; ++d) {
        update_core(d);
        if (d + 1 < D) {
          canonical_shift(x, ShiftDirection::Right);
          for (std::size_t c = 0; c < nc; ++c)
            lenv[c][d + 1] = tt_left_transfer(x.cores[d], chains[c].t->cores[d], lenv[c][d]);
        }
      }
    } else {
      for (Index d = D - 1; d >= 0; --d) {
        update_core(d);
        if (d > 0) {
          canonical_shift(x, ShiftDirection::Left);
          for (std::size_t c = 0; c < nc; ++c)
            renv[c][d] = tt_right_transfer(x.cores[d], chains[c].t->cores[d], renv[c][d + 1]);
        }
      }
    }
    const double fit = x.cores[*x.canonical_site].frobenius();
    res = norm_t2 > 0 ? std::sqrt(std::max(0.0, norm_t2 - fit * fit) / norm_t2) : 0.0;
    if (std::abs(prev_res - res) < cfg.residual_tol) break;
    prev_res = res;
  }
  return res;
}

// ---- covariance sweep environments ----
//
// The target factor is [(I - K phi^T) L_prev, sigma_y K e_1^T] with the second
// block on the appended column half of the augmented core. Its three summands
// are tracked through separate environment chains against the iterate:
//   E1: iterate x L_prev                         (carry term)
//   E2: iterate x Ktil x c  (Ktil = L_prev c)    (gain correction, scaled 1/S)
//   E3: iterate x Ktil with e_1 column selectors (appended noise column)
// Iterate columns beyond L_prev's block pair with zero target columns, so all
// contractions run over L_prev's column range only.

struct CovTargets {
  const TensorTrainMatrix* l_prev = nullptr;
  const TensorTrain* ktil = nullptr;  // L_prev (L_prev^T phi); K = ktil / S
  const TensorTrain* c = nullptr;     // L_prev^T phi
  double inv_s = 0.0;
  double sigma_y = 0.0;
  Index aug_site = 0;
};

inline Matrix cov_e1_right(const Core4& x, const Core4& l, const Matrix& e) {
  Matrix out = Matrix::Zero(x.r0, l.r0);
  for (Index j = 0; j < l.m; ++j)
    for (Index i = 0; i < l.n; ++i) out.noalias() += x.slice(i, j) * e * l.slice(i, j).transpose();
  return out;
}

inline Matrix cov_e1_left(const Core4& x, const Core4& l, const Matrix& e) {
  Matrix out = Matrix::Zero(x.r1, l.r1);
  for (Index j = 0; j < l.m; ++j)
    for (Index i = 0; i < l.n; ++i) out.noalias() += x.slice(i, j).transpose() * e * l.slice(i, j);
  return out;
}

inline Matrix cov_e2_right(const Core4& x, const Core3& k, const Core3& c, const Matrix& e) {
  Matrix out = Matrix::Zero(x.r0, k.r0 * c.r0);
  for (Index j = 0; j < c.n; ++j)
    for (Index i = 0; i < k.n; ++i) {
      const Matrix m = x.slice(i, j) * e;  // x.r0 x (k.r1 * c.r1), k index fastest
      for (Index c1 = 0; c1 < c.r1; ++c1) {
        const Matrix tmp = m.middleCols(c1 * k.r1, k.r1) * k.slice(i).transpose();
        for (Index c0 = 0; c0 < c.r0; ++c0)
          out.middleCols(c0 * k.r0, k.r0).noalias() += c.at(c0, j, c1) * tmp;
      }
    }
  return out;
}

inline Matrix cov_e2_left(const Core4& x, const Core3& k, const Core3& c, const Matrix& e) {
  Matrix out = Matrix::Zero(x.r1, k.r1 * c.r1);
  for (Index j = 0; j < c.n; ++j)
    for (Index i = 0; i < k.n; ++i) {
      const Matrix m = x.slice(i, j).transpose() * e;  // x.r1 x (k.r0 * c.r0)
      for (Index c0 = 0; c0 < c.r0; ++c0) {
        const Matrix tmp = m.middleCols(c0 * k.r0, k.r0) * k.slice(i);
        for (Index c1 = 0; c1 < c.r1; ++c1)
          out.middleCols(c1 * k.r1, k.r1).noalias() += c.at(c0, j, c1) * tmp;
      }
    }
  return out;
}

inline Matrix cov_e3_right(const Core4& x, const Core3& k, const Matrix& e, Index j_sel) {
  Matrix out = Matrix::Zero(x.r0, k.r0);
  for (Index i = 0; i < k.n; ++i) out.noalias() += x.slice(i, j_sel) * e * k.slice(i).transpose();
  return out;
}

inline Matrix cov_e3_left(const Core4& x, const Core3& k, const Matrix& e, Index j_sel) {
  Matrix out = Matrix::Zero(x.r1, k.r1);
  for (Index i = 0; i < k.n; ++i) out.noalias() += x.slice(i, j_sel).transpose() * e * k.slice(i);
  return out;
}

class CovSweepContext {
 public:
  CovSweepContext(TensorTrainMatrix& x, const CovTargets& tg) : x_(x), tg_(tg) {
    const auto n = static_cast<std::size_t>(x_.order()) + 1;
    e1l_.assign(n, Matrix());
    e1r_.assign(n, Matrix());
    e2l_.assign(n, Matrix());
    e2r_.assign(n, Matrix());
    e3l_.assign(n, Matrix());
    e3r_.assign(n, Matrix());
  }

  bool has_gain() const { return tg_.ktil != nullptr && tg_.c != nullptr; }
  // column the appended noise block selects at dimension d
  Index noise_col(Index d) const { return d == tg_.aug_site ? tg_.l_prev->cores[d].m : 0; }

  void compute_right_envs() {
    const Index D = x_.order();
    e1r_[D] = Matrix::Ones(1, 1);
    if (has_gain()) e2r_[D] = e3r_[D] = Matrix::Ones(1, 1);
    for (Index d = D - 1; d >= 1; --d) push_right(d);
    e1l_[0] = Matrix::Ones(1, 1);
    if (has_gain()) e2l_[0] = e3l_[0] = Matrix::Ones(1, 1);
  }

  void push_left(Index d) {
    e1l_[d + 1] = cov_e1_left(x_.cores[d], tg_.l_prev->cores[d], e1l_[d]);
    if (has_gain()) {
      e2l_[d + 1] = cov_e2_left(x_.cores[d], tg_.ktil->cores[d], tg_.c->cores[d], e2l_[d]);
      e3l_[d + 1] = cov_e3_left(x_.cores[d], tg_.ktil->cores[d], e3l_[d], noise_col(d));
    }
  }

  void push_right(Index d) {
    e1r_[d] = cov_e1_right(x_.cores[d], tg_.l_prev->cores[d], e1r_[d + 1]);
    if (has_gain()) {
      e2r_[d] = cov_e2_right(x_.cores[d], tg_.ktil->cores[d], tg_.c->cores[d], e2r_[d + 1]);
      e3r_[d] = cov_e3_right(x_.cores[d], tg_.ktil->cores[d], e3r_[d + 1], noise_col(d));
    }
  }

  /// Selected terms of the site-d normal-equation core, in the iterate's
  /// augmented shape. term1 - term2 live on the carried column block; term3
  /// adds the appended noise column.
  Core4 assemble_core(Index d, bool t1, bool t2, bool t3) const {
    const auto& xc = x_.cores[d];
    const auto& lc = tg_.l_prev->cores[d];
    Core4 out(xc.r0, xc.n, xc.m, xc.r1);

    if (t1) {
      for (Index j = 0; j < lc.m; ++j)
        for (Index i = 0; i < lc.n; ++i) {
          const Matrix m = e1l_[d] * lc.slice(i, j) * e1r_[d + 1].transpose();
          for (Index b = 0; b < out.r1; ++b)
            for (Index a = 0; a < out.r0; ++a) out.at(a, i, j, b) += m(a, b);
        }
    }

    if (t2) {
      const auto& kc = tg_.ktil->cores[d];
      const auto& cc = tg_.c->cores[d];
      for (Index i = 0; i < kc.n; ++i) {
        Matrix p = Matrix::Zero(out.r0, kc.r1 * cc.r0);
        for (Index c0 = 0; c0 < cc.r0; ++c0)
          p.middleCols(c0 * kc.r1, kc.r1).noalias() =
              e2l_[d].middleCols(c0 * kc.r0, kc.r0) * kc.slice(i);
        for (Index j = 0; j < cc.n; ++j) {
          Matrix q = Matrix::Zero(out.r0, kc.r1 * cc.r1);
          for (Index c1 = 0; c1 < cc.r1; ++c1)
            for (Index c0 = 0; c0 < cc.r0; ++c0)
              q.middleCols(c1 * kc.r1, kc.r1).noalias() +=
                  cc.at(c0, j, c1) * p.middleCols(c0 * kc.r1, kc.r1);
          const Matrix m = q * e2r_[d + 1].transpose();
          for (Index b = 0; b < out.r1; ++b)
            for (Index a = 0; a < out.r0; ++a) out.at(a, i, j, b) -= tg_.inv_s * m(a, b);
        }
      }
    }

    if (t3) {
      const auto& kc = tg_.ktil->cores[d];
      const Index col = noise_col(d);
      const double w = tg_.sigma_y * tg_.inv_s;
      for (Index i = 0; i < kc.n; ++i) {
        const Matrix m = e3l_[d] * kc.slice(i) * e3r_[d + 1].transpose();
        for (Index b = 0; b < out.r1; ++b)
          for (Index a = 0; a < out.r0; ++a) out.at(a, i, col, b) += w * m(a, b);
      }
    }
    return out;
  }

 private:
  TensorTrainMatrix& x_;
  CovTargets tg_;
  std::vector<Matrix> e1l_, e1r_, e2l_, e2r_, e3l_, e3r_;
};

/// ALS over the merged-index frames of the augmented iterate; same sweep
/// protocol as the mean fit.
inline double cov_als_fit(TensorTrainMatrix& x, const CovTargets& tg, const SweepConfig& cfg,
                          const std::function<void(Index, const TensorTrainMatrix&)>* obs) {
  const Index D = x.order();
  const double norm_l = ttm_frobenius(*tg.l_prev);
  const double norm_k2 = tt_dot(*tg.ktil, *tg.ktil);
  const double norm_c2 = tt_dot(*tg.c, *tg.c);
  // ||[A, sigma_y K e_1^T]||^2 with A = L - Ktil c^T / S; the blocks sit on
  // disjoint columns and <L, Ktil c^T> = ||Ktil||^2 by Ktil's definition.
  const double norm_t2 =
      std::max(0.0, norm_l * norm_l - 2.0 * tg.inv_s * norm_k2 +
                        tg.inv_s * tg.inv_s * norm_k2 * norm_c2 +
                        tg.sigma_y * tg.sigma_y * tg.inv_s * tg.inv_s * norm_k2);

  CovSweepContext ctx(x, tg);
  double prev_res = std::numeric_limits<double>::infinity();
  double res = prev_res;
  for (Index sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    const bool backward = cfg.order == SweepConfig::Order::Snake && (sweep % 2 == 1);
    if (!backward) {
      if (*x.canonical_site != 0) move_canonical_site(x, 0);
      ctx.compute_right_envs();
      for (Index d = 0; d < D; ++d) {
        x.cores[d] = ctx.assemble_core(d, true, true, true);
        x.canonical_site = d;
        if (obs && *obs) (*obs)(d, x);
        if (d + 1 < D) {
          canonical_shift(x, ShiftDirection::Right);
          ctx.push_left(d);
        }
      }
    } else {
      for (Index d = D - 1; d >= 0; --d) {
        x.cores[d] = ctx.assemble_core(d, true, true, true);
        x.canonical_site = d;
        if (obs && *obs) (*obs)(d, x);
        if (d > 0) {
          canonical_shift(x, ShiftDirection::Left);
          ctx.push_right(d);
        }
      }
    }
    const double fit = x.cores[*x.canonical_site].frobenius();
    res = norm_t2 > 0 ? std::sqrt(std::max(0.0, norm_t2 - fit * fit) / norm_t2) : 0.0;
    if (std::abs(prev_res - res) < cfg.residual_tol) break;
    prev_res = res;
  }
  return res;
}

/// Warm-start iterate for the covariance sweep: previous factor with the
/// augmented column block doubled, canonical site at 0. The stored random
/// guess takes over on the first step, where L is rank-1.
inline TensorTrainMatrix cov_warm_start(const FilterState& s) {
  TensorTrainMatrix x = s.cov_guess ? *s.cov_guess : s.sqrt_factor;
  if (!s.cov_guess) ttm_double_aug_columns(x);
  move_canonical_site(x, 0);
  return x;
}

/// Single-site term evaluation on the warm-start frame (for tests).
inline Core4 cov_term_assemble(const FilterState& s, Index d, const TensorTrain* ktil,
                               const TensorTrain* c, double innov, bool t1, bool t2, bool t3) {
  if (!s.sqrt_factor.canonical_site || *s.sqrt_factor.canonical_site != d)
    throw std::logic_error("cov_term: sqrt_factor must be site-d canonical");
  CovTargets tg;
  tg.l_prev = &s.sqrt_factor;
  tg.ktil = ktil;
  tg.c = c;
  tg.inv_s = innov > 0 ? 1.0 / innov : 0.0;
  tg.sigma_y = std::sqrt(s.noise_var);
  tg.aug_site = s.sqrt_factor.aug_site;
  TensorTrainMatrix x = cov_warm_start(s);
  CovSweepContext ctx(x, tg);
  ctx.compute_right_envs();
  for (Index k = 0; k < d; ++k) {
    canonical_shift(x, ShiftDirection::Right);
    ctx.push_left(k);
  }
  return ctx.assemble_core(d, t1, t2, t3);
}

}  // namespace detail

/// Smallest p >= 1 whose kept column count 2^(p-1) * J can never truncate the
/// augmented core's reshaped matrix (kept >= R0 * I * R1).
inline Index recommended_qr_budget(Index r_left, Index row_size, Index r_right, Index base_cols) {
  const Index bound = r_left * row_size * r_right;
  Index p = 1;
  while ((Index(1) << (p - 1)) * base_cols < bound && p < 60) ++p;
  return p;
}

struct FilterRanks {
  std::vector<Index> mean;  // bond vector, length D+1
  std::vector<Index> cov;

  static std::vector<Index> uniform(Index dims, Index rank) {
    std::vector<Index> r(static_cast<std::size_t>(dims) + 1, rank);
    r.front() = r.back() = 1;
    return r;
  }
};

/// Zero-mean start: a site-0 canonical TT whose site core is zero (dense
/// reconstruction exactly zero) inside a random orthonormal frame; prior
/// factor from the Kronecker pieces; random first covariance iterate.
/// qr_budget <= 0 selects the recommended exact budget.
inline FilterState init_filter(const PriorSpec& prior, const FilterRanks& ranks, Index qr_budget,
                               double noise_var, std::uint64_t seed, SweepConfig sweep = {},
                               std::optional<Index> aug_site = {}) {
  if (prior.sqrt_factors.empty()) throw std::invalid_argument("init_filter: empty prior");
  const auto D = static_cast<Index>(prior.sqrt_factors.size());
  if (!(noise_var > 0)) throw std::invalid_argument("init_filter: noise variance must be > 0");

  std::vector<Index> row_modes, col_modes;
  for (const auto& f : prior.sqrt_factors) {
    row_modes.push_back(f.rows());
    col_modes.push_back(f.cols());
  }

  FilterState s;
  s.noise_var = noise_var;
  s.sweep = sweep;
  s.rng_seed = seed;

  s.mean = tt_random(row_modes, ranks.mean, seed);
  orthogonalize_site(s.mean, 0);
  std::fill(s.mean.cores[0].v.begin(), s.mean.cores[0].v.end(), 0.0);

  s.sqrt_factor = ttm_from_kron_factors(prior.sqrt_factors);
  const Index aug = aug_site.value_or((D - 1) / 2);
  if (aug < 0 || aug >= D) throw std::invalid_argument("init_filter: augmented site out of range");
  s.sqrt_factor.aug_site = aug;

  // first-iterate guess: the prior factor is rank-1, so the first sweep needs
  // an independent random frame at the working ranks
  std::vector<Index> merged_modes;
  for (Index d = 0; d < D; ++d)
    merged_modes.push_back(row_modes[d] * (d == aug ? 2 * col_modes[d] : col_modes[d]));
  const auto rl = detail::feasible_ranks(merged_modes, ranks.cov);
  NormalRng rng(seed + 1);
  TensorTrainMatrix guess;
  guess.aug_site = aug;
  guess.aug_multiplier = 2;
  for (Index d = 0; d < D; ++d) {
    Core4 c(rl[d], row_modes[d], d == aug ? 2 * col_modes[d] : col_modes[d], rl[d + 1]);
    const double scale = 1.0 / std::sqrt(double(rl[d + 1] * c.n * c.m));
    for (auto& x : c.v) x = scale * rng();
    guess.cores.push_back(std::move(c));
  }
  orthogonalize_site(guess, aug);
  s.cov_guess = std::move(guess);

  s.qr_skip_budget =
      qr_budget > 0 ? qr_budget
                    : recommended_qr_budget(s.cov_guess->cores[aug].r0, row_modes[aug],
                                            s.cov_guess->cores[aug].r1, col_modes[aug]);
  return s;
}

/// S_t = ||L^T phi||^2 + sigma_y^2, computed entirely in TT format; the
/// squared-norm form keeps S_t >= sigma_y^2 up to roundoff.
inline double innovation(const FilterState& s, const Rank1FeatureTT& phi) {
  const TensorTrain c = ttm_transpose_apply(s.sqrt_factor, phi);
  const double n = tt_norm(c);
  const double innov = n * n + s.noise_var;
  if (!std::isfinite(innov) || innov < s.noise_var * (1.0 - 1e-12))
    throw NumericalFailure("innovation fell below the noise floor");
  return innov;
}

/// K_t = L (L^T phi) / S_t as a TT.
inline TensorTrain kalman_gain(const FilterState& s, const Rank1FeatureTT& phi, double innov) {
  if (!(innov > 0)) throw NumericalFailure("kalman_gain: nonpositive innovation");
  const TensorTrain c = ttm_transpose_apply(s.sqrt_factor, phi);
  TensorTrain k = ttm_apply(s.sqrt_factor, c);
  tt_scale(k, 1.0 / innov);
  return k;
}

/// ALS fit of w_prev + K (y - phi^T w_prev) on the warm-started mean frame.
inline TensorTrain mean_sweep(const FilterState& s, const Rank1FeatureTT& phi, double y,
                              const SweepObserver* obs = nullptr) {
  const TensorTrain phi_tt = phi.to_tt();
  const double resid = y - tt_dot(s.mean, phi_tt);
  const double innov = innovation(s, phi);
  const TensorTrain gain = kalman_gain(s, phi, innov);
  TensorTrain x = s.mean;
  move_canonical_site(x, 0);
  std::vector<detail::TtChain> chains{{&s.mean, 1.0}, {&gain, resid}};
  std::function<void(Index, const TensorTrain&)> cb;
  if (obs && obs->on_mean_update) cb = obs->on_mean_update;
  detail::tt_als_fit(x, chains, s.sweep, cb ? &cb : nullptr);
  detail::check_finite(x.cores[*x.canonical_site].v.data(), x.cores[*x.canonical_site].v.size(),
                       "mean_sweep");
  return x;
}

/// ALS fit of the concatenated square-root target; returns the new factor
/// before the QR step, with the augmented column block doubled.
inline TensorTrainMatrix cov_sweep(const FilterState& s, const Rank1FeatureTT& phi,
                                   [[maybe_unused]] double y, double innov,
                                   const SweepObserver* obs = nullptr) {
  const TensorTrain c = ttm_transpose_apply(s.sqrt_factor, phi);
  const TensorTrain ktil = ttm_apply(s.sqrt_factor, c);
  detail::CovTargets tg;
  tg.l_prev = &s.sqrt_factor;
  tg.ktil = &ktil;
  tg.c = &c;
  tg.inv_s = 1.0 / innov;
  tg.sigma_y = std::sqrt(s.noise_var);
  tg.aug_site = s.sqrt_factor.aug_site;
  TensorTrainMatrix x = detail::cov_warm_start(s);
  std::function<void(Index, const TensorTrainMatrix&)> cb;
  if (obs && obs->on_cov_update) cb = obs->on_cov_update;
  detail::cov_als_fit(x, tg, s.sweep, cb ? &cb : nullptr);
  detail::check_finite(x.cores[*x.canonical_site].v.data(), x.cores[*x.canonical_site].v.size(),
                       "cov_sweep");
  return x;
}

/// Projection of the carried factor e_0 (x) L_prev onto the warm-start frame
/// at site d (one normal-equation term, for diagnostics and tests).
inline Core4 cov_term1(const FilterState& s, Index d) {
  return detail::cov_term_assemble(s, d, nullptr, nullptr, 0.0, true, false, false);
}

/// Projection of the gain correction e_0 (x) Ktil c^T / S at site d.
inline Core4 cov_term2(const FilterState& s, Index d, const Rank1FeatureTT& phi, double innov) {
  const TensorTrain c = ttm_transpose_apply(s.sqrt_factor, phi);
  const TensorTrain ktil = ttm_apply(s.sqrt_factor, c);
  Core4 out = detail::cov_term_assemble(s, d, &ktil, &c, innov, false, true, false);
  // the assembler subtracts term 2; report the term itself
  for (auto& v : out.v) v = -v;
  return out;
}

/// Projection of the appended noise column e_1 (x) sigma_y K at site d.
inline Core4 cov_term3(const FilterState& s, Index d, const Rank1FeatureTT& phi, double innov) {
  const TensorTrain c = ttm_transpose_apply(s.sqrt_factor, phi);
  const TensorTrain ktil = ttm_apply(s.sqrt_factor, c);
  return detail::cov_term_assemble(s, d, &ktil, &c, innov, false, false, true);
}

/// SVD-based QR step: no-op while the skip budget lasts; otherwise halves the
/// augmented column block keeping the dominant columns of U*S (the orthogonal
/// V factor cancels in L L^T). U and S come from the eigendecomposition of
/// the reshaped core's Gram matrix, which is much cheaper than a wide SVD and
/// reproduces the same kept factor up to column signs. When the kept count
/// covers every Gram eigenpair nothing can be discarded and a pivoted
/// Cholesky factor of the Gram is substituted: same L L^T, an order of
/// magnitude cheaper than the eigendecomposition. Exact whenever the kept
/// count covers the reshaped core's rank; the report says how much mass was
/// dropped.
inline QrReport qr_step(FilterState& s) {
  TensorTrainMatrix& L = s.sqrt_factor;
  QrReport rep;
  Index q = 0;
  for (Index m = L.aug_multiplier; m > 1; m /= 2) ++q;
  if (q < s.qr_skip_budget) return rep;

  move_canonical_site(L, L.aug_site);
  auto& c = L.cores[L.aug_site];
  const Index rows = c.r0 * c.n * c.r1, cols = c.m;
  Matrix a(rows, cols);
  for (Index b = 0; b < c.r1; ++b)
    for (Index j = 0; j < cols; ++j) {
      const double* src = c.v.data() + c.r0 * (c.n * (j + cols * b));
      std::copy(src, src + c.r0 * c.n, a.col(j).data() + b * c.r0 * c.n);
    }
  Matrix gram = Matrix::Zero(rows, rows);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(a);
  const Index keep = cols / 2;
  Matrix b_new;
  double discarded_rel = 0.0;
  if (rows <= keep) {
    Matrix chol = gram;
    detail::cholesky_psd_lower(chol);
    b_new = Matrix::Zero(rows, keep);
    b_new.leftCols(rows) = chol;
  } else {
    Vector lambda;
    detail::eigh_descending(gram, lambda);
    const Index avail = std::min(rows, cols);
    const Index k = std::min(keep, avail);
    Matrix u = gram.leftCols(k);
    detail::svd_sign_fix(u, nullptr);
    b_new = Matrix::Zero(rows, keep);
    for (Index j = 0; j < k; ++j)
      b_new.col(j) = u.col(j) * std::sqrt(std::max(lambda(j), 0.0));
    double total2 = 0.0, dropped2 = 0.0;
    for (Index i = 0; i < avail && i < lambda.size(); ++i) {
      total2 += std::max(lambda(i), 0.0);
      if (i >= k) dropped2 += std::max(lambda(i), 0.0);
    }
    discarded_rel = total2 > 0 ? std::sqrt(dropped2 / total2) : 0.0;
  }
  Core4 nc(c.r0, c.n, keep, c.r1);
  for (Index b = 0; b < nc.r1; ++b)
    for (Index j = 0; j < keep; ++j) {
      double* dst = nc.v.data() + nc.r0 * (nc.n * (j + keep * b));
      std::copy(b_new.col(j).data() + b * nc.r0 * nc.n,
                b_new.col(j).data() + (b + 1) * nc.r0 * nc.n, dst);
    }
  c = std::move(nc);
  L.aug_multiplier /= 2;
  rep.applied = true;
  rep.discarded_rel = discarded_rel;
  // dropped eigenvalues at the Gram eigensolver's noise floor (eps * lambda_max
  // each) are indistinguishable from zero; their sqrt-mass sits near 1e-8
  rep.exact = rep.discarded_rel <= 1e-7;
  return rep;
}

/// m_* = phi^T w, sigma^2_* = ||L^T phi||^2; the variance is a squared norm
/// and therefore never negative.
inline GaussianPrediction predict(const FilterState& s, const Rank1FeatureTT& phi) {
  GaussianPrediction p;
  p.mean = tt_dot(s.mean, phi.to_tt());
  const TensorTrain c = ttm_transpose_apply(s.sqrt_factor, phi);
  const double n = tt_norm(c);
  p.variance = n * n;
  return p;
}

/// Moves the augmented column block to a neighboring site by a thin SVD of
/// the current augmented core, absorbing the complementary factor into the
/// neighbor. The represented matrix is unchanged; the touched bond rank may
/// change.
inline void move_aug_index(TensorTrainMatrix& L, ShiftDirection dir) {
  const Index D = L.order();
  const Index d = L.aug_site;
  const Index f_count = L.aug_multiplier;
  if (dir == ShiftDirection::Right) {
    if (d + 1 >= D) throw std::invalid_argument("move_aug_index: no site to the right");
    move_canonical_site(L, d);
    auto& c = L.cores[d];
    const Index base = c.m / f_count;
    Matrix a(c.r0 * c.n * base, f_count * c.r1);
    for (Index b = 0; b < c.r1; ++b)
      for (Index f = 0; f < f_count; ++f)
        for (Index j = 0; j < base; ++j) {
          const double* src = c.v.data() + c.r0 * (c.n * ((j + base * f) + c.m * b));
          std::copy(src, src + c.r0 * c.n, a.col(f + f_count * b).data() + j * c.r0 * c.n);
        }
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Matrix u = svd.matrixU();
    Matrix v = svd.matrixV();
    detail::svd_sign_fix(u, &v);
    const Index k = u.cols();
    Core4 nc(c.r0, c.n, base, k);
    for (Index b = 0; b < k; ++b)
      for (Index j = 0; j < base; ++j) {
        double* dst = nc.v.data() + nc.r0 * (nc.n * (j + base * b));
        std::copy(u.col(b).data() + j * c.r0 * c.n, u.col(b).data() + (j + 1) * c.r0 * c.n, dst);
      }
    const Matrix sv = svd.singularValues().asDiagonal() * v.transpose();  // k x (f_count * r1)
    auto& nx = L.cores[d + 1];
    Core4 nn(k, nx.n, nx.m * f_count, nx.r1);
    for (Index b = 0; b < nx.r1; ++b)
      for (Index f = 0; f < f_count; ++f)
        for (Index j = 0; j < nx.m; ++j)
          for (Index i = 0; i < nx.n; ++i)
            for (Index kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              for (Index bb = 0; bb < nx.r0; ++bb)
                acc += sv(kk, f + f_count * bb) * nx.at(bb, i, j, b);
              nn.at(kk, i, j + nx.m * f, b) = acc;
            }
    c = std::move(nc);
    nx = std::move(nn);
    L.aug_site = d + 1;
    L.canonical_site = d + 1;
  } else {
    if (d == 0) throw std::invalid_argument("move_aug_index: no site to the left");
    move_canonical_site(L, d);
    auto& c = L.cores[d];
    const Index base = c.m / f_count;
    Matrix a(c.r0 * f_count, c.n * base * c.r1);
    for (Index b = 0; b < c.r1; ++b)
      for (Index f = 0; f < f_count; ++f)
        for (Index j = 0; j < base; ++j)
          for (Index i = 0; i < c.n; ++i)
            for (Index aa = 0; aa < c.r0; ++aa)
              a(aa + c.r0 * f, i + c.n * (j + base * b)) = c.at(aa, i, j + base * f, b);
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Matrix u = svd.matrixU();
    Matrix v = svd.matrixV();
    detail::svd_sign_fix(u, &v);
    const Index k = u.cols();
    const Matrix us = u * svd.singularValues().asDiagonal();  // (r0 * f_count) x k
    Core4 nc(k, c.n, base, c.r1);
    for (Index b = 0; b < c.r1; ++b)
      for (Index j = 0; j < base; ++j)
        for (Index i = 0; i < c.n; ++i)
          for (Index kk = 0; kk < k; ++kk) nc.at(kk, i, j, b) = v(i + c.n * (j + base * b), kk);
    auto& px = L.cores[d - 1];
    Core4 pn(px.r0, px.n, px.m * f_count, k);
    for (Index kk = 0; kk < k; ++kk)
      for (Index f = 0; f < f_count; ++f)
        for (Index j = 0; j < px.m; ++j)
          for (Index i = 0; i < px.n; ++i)
            for (Index aa = 0; aa < px.r0; ++aa) {
              double acc = 0.0;
              for (Index bb = 0; bb < px.r1; ++bb)
                acc += px.at(aa, i, j, bb) * us(bb + c.r0 * f, kk);
              pn.at(aa, i, j + px.m * f, kk) = acc;
            }
    c = std::move(nc);
    px = std::move(pn);
    L.aug_site = d - 1;
    L.canonical_site = d - 1;
  }
}

/// State-level variant: relocates the stored first-step guess too, so the
/// next covariance sweep finds its frame at the new site.
inline void move_aug_index(FilterState& s, ShiftDirection dir) {
  move_aug_index(s.sqrt_factor, dir);
  if (s.cov_guess) move_aug_index(*s.cov_guess, dir);
}

/// One measurement update: mean sweep, covariance sweep, QR step. On a
/// numerical failure the state is left untouched and the outcome reports it.
inline StepOutcome step(FilterState& s, const Rank1FeatureTT& phi, double y,
                        const SweepObserver* obs = nullptr) {
  StepOutcome out;
  try {
    const double innov = innovation(s, phi);
    TensorTrain mean_new = mean_sweep(s, phi, y, obs);
    TensorTrainMatrix cov_new = cov_sweep(s, phi, y, innov, obs);
    FilterState trial = s;
    trial.mean = std::move(mean_new);
    trial.sqrt_factor = std::move(cov_new);
    trial.cov_guess.reset();
    qr_step(trial);
    // a NaN measurement contaminates only the mean, so both factors get the
    // finiteness check before commit
    for (const auto& c : trial.mean.cores) detail::check_finite(c.v.data(), c.v.size(), "step mean");
    for (const auto& c : trial.sqrt_factor.cores)
      detail::check_finite(c.v.data(), c.v.size(), "step covariance");
    trial.step_count = s.step_count + 1;
    s = std::move(trial);
  } catch (const NumericalFailure& e) {
    out.ok = false;
    out.message = e.what();
  }
  return out;
}

}  // namespace ttsrkf
