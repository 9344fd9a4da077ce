#pragma once

#include "ttsrkf/core/tensor_train.hpp"

namespace ttsrkf {

/// Four-way TTm-core of shape (r0, n, m, r1) with row mode n and column mode
/// m. Element (a, i, j, b) lives at a + r0*(i + n*(j + m*b)), which is the
/// same memory layout as a Core3 with merged mode index (i + n*j). All
/// orthogonalization therefore reuses the Core3 kernels on merged views.
struct Core4 {
  Index r0 = 1, n = 1, m = 1, r1 = 1;
  std::vector<double> v;

  Core4() = default;
  Core4(Index r0_, Index n_, Index m_, Index r1_)
      : r0(r0_), n(n_), m(m_), r1(r1_),
        v(static_cast<std::size_t>(r0_ * n_ * m_ * r1_), 0.0) {}

  Index size() const { return r0 * n * m * r1; }
  double& at(Index a, Index i, Index j, Index b) {
    return v[static_cast<std::size_t>(a + r0 * (i + n * (j + m * b)))];
  }
  double at(Index a, Index i, Index j, Index b) const {
    return v[static_cast<std::size_t>(a + r0 * (i + n * (j + m * b)))];
  }

  /// r0 x r1 slice at (row i, column j); strided view, no copy.
  Eigen::Map<const Matrix, 0, Eigen::OuterStride<>> slice(Index i, Index j) const {
    return {v.data() + r0 * (i + n * j), r0, r1, Eigen::OuterStride<>(r0 * n * m)};
  }

  double frobenius() const {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  }
};

/// TT matrix over D dimensions. One core (aug_site) may temporarily carry
/// aug_multiplier times its base column size while the square-root update
/// doubles and the QR step truncates. canonical_site orthogonality is defined
/// on cores with row and column indices merged.
struct TensorTrainMatrix {
  std::vector<Core4> cores;
  Index aug_site = 0;
  Index aug_multiplier = 1;
  std::optional<Index> canonical_site;

  Index order() const { return static_cast<Index>(cores.size()); }

  std::vector<Index> row_sizes() const {
    std::vector<Index> r;
    for (const auto& c : cores) r.push_back(c.n);
    return r;
  }

  /// Actual per-core column sizes (the augmented core reports the multiplied size).
  std::vector<Index> col_sizes() const {
    std::vector<Index> r;
    for (const auto& c : cores) r.push_back(c.m);
    return r;
  }

  Index base_col_size(Index d) const {
    return d == aug_site ? cores[d].m / aug_multiplier : cores[d].m;
  }

  std::vector<Index> ranks() const {
    std::vector<Index> r;
    for (const auto& c : cores) r.push_back(c.r0);
    r.push_back(cores.empty() ? 1 : cores.back().r1);
    return r;
  }

  Index dense_rows() const {
    Index s = 1;
    for (const auto& c : cores) s = detail::sat_mul(s, c.n);
    return s;
  }
  Index dense_cols() const {
    Index s = 1;
    for (const auto& c : cores) s = detail::sat_mul(s, c.m);
    return s;
  }

  void validate() const {
    if (cores.empty()) throw std::invalid_argument("TensorTrainMatrix: no cores");
    if (cores.front().r0 != 1 || cores.back().r1 != 1)
      throw std::invalid_argument("TensorTrainMatrix: boundary ranks must be 1");
    for (std::size_t d = 0; d + 1 < cores.size(); ++d)
      if (cores[d].r1 != cores[d + 1].r0)
        throw std::invalid_argument("TensorTrainMatrix: adjacent ranks disagree");
    if (aug_site < 0 || aug_site >= order())
      throw std::invalid_argument("TensorTrainMatrix: aug_site out of range");
    if (aug_multiplier < 1 || cores[aug_site].m % aug_multiplier != 0)
      throw std::invalid_argument("TensorTrainMatrix: multiplier does not divide column size");
    if (canonical_site && (*canonical_site < 0 || *canonical_site >= order()))
      throw std::invalid_argument("TensorTrainMatrix: canonical_site out of range");
  }
};

/// Feature vector as D per-dimension factors; equivalent to a rank-1 TT.
struct Rank1FeatureTT {
  std::vector<Vector> factors;

  Index order() const { return static_cast<Index>(factors.size()); }

  TensorTrain to_tt() const {
    TensorTrain tt;
    tt.cores.reserve(factors.size());
    for (const auto& f : factors) {
      Core3 c(1, f.size(), 1);
      for (Index i = 0; i < f.size(); ++i) c.at(0, i, 0) = f(i);
      tt.cores.push_back(std::move(c));
    }
    return tt;
  }
};

namespace detail {

/// Zero-copy conversion between TTm cores and merged-mode TT cores (the
/// memory layouts coincide; only the bookkeeping moves).
inline std::vector<Core3> take_merged(TensorTrainMatrix& L) {
  std::vector<Core3> merged;
  merged.reserve(L.cores.size());
  for (auto& c : L.cores) {
    Core3 t;
    t.r0 = c.r0;
    t.n = c.n * c.m;
    t.r1 = c.r1;
    t.v = std::move(c.v);
    merged.push_back(std::move(t));
  }
  return merged;
}

inline void restore_merged(TensorTrainMatrix& L, std::vector<Core3>&& merged) {
  for (std::size_t d = 0; d < L.cores.size(); ++d) {
    auto& c = L.cores[d];
    c.r0 = merged[d].r0;
    c.r1 = merged[d].r1;
    c.v = std::move(merged[d].v);
  }
}

inline void kron_acc(Matrix& out, const Matrix& a, const Matrix& b) {
  // out((ib + Rb*ia), (jb + Cb*ja)) += a(ia,ja)*b(ib,jb); b-index fastest
  for (Index ja = 0; ja < a.cols(); ++ja)
    for (Index ia = 0; ia < a.rows(); ++ia)
      out.block(ia * b.rows(), ja * b.cols(), b.rows(), b.cols()) += a(ia, ja) * b;
}

}  // namespace detail

inline void orthogonalize_site(TensorTrainMatrix& L, Index site) {
  L.validate();
  if (site < 0 || site >= L.order()) throw std::invalid_argument("orthogonalize_site: site out of range");
  auto merged = detail::take_merged(L);
  detail::canonicalize_cores(merged, site);
  detail::restore_merged(L, std::move(merged));
  L.canonical_site = site;
}

inline void canonical_shift(TensorTrainMatrix& L, ShiftDirection dir) {
  if (!L.canonical_site) throw std::invalid_argument("canonical_shift: no canonical site");
  const Index d = *L.canonical_site;
  if (dir == ShiftDirection::Right && d + 1 >= L.order())
    throw std::invalid_argument("canonical_shift: past right boundary");
  if (dir == ShiftDirection::Left && d == 0)
    throw std::invalid_argument("canonical_shift: past left boundary");
  auto merged = detail::take_merged(L);
  detail::shift_cores(merged, d, dir == ShiftDirection::Right);
  detail::restore_merged(L, std::move(merged));
  L.canonical_site = d + (dir == ShiftDirection::Right ? 1 : -1);
}

inline void move_canonical_site(TensorTrainMatrix& L, Index site) {
  if (!L.canonical_site) {
    orthogonalize_site(L, site);
    return;
  }
  while (*L.canonical_site < site) canonical_shift(L, ShiftDirection::Right);
  while (*L.canonical_site > site) canonical_shift(L, ShiftDirection::Left);
}

/// Dense reconstruction with dimension 1 outermost on both indices.
inline Matrix ttm_to_dense(const TensorTrainMatrix& L, Index cap = dense_entry_cap()) {
  L.validate();
  const Index rows = L.dense_rows(), cols = L.dense_cols();
  if (detail::sat_mul(rows, cols) > cap) throw ResourceLimit("ttm_to_dense: size exceeds cap");
  // Merged-mode dense vector, then scatter the per-dimension digit (i + n*j)
  // into separate row/column indices.
  TensorTrain merged;
  merged.cores.reserve(L.cores.size());
  for (const auto& c : L.cores) {
    Core3 t;
    t.r0 = c.r0;
    t.n = c.n * c.m;
    t.r1 = c.r1;
    t.v = c.v;
    merged.cores.push_back(std::move(t));
  }
  const Vector vec = tt_to_dense(merged, cap);
  const Index D = L.order();
  Matrix out = Matrix::Zero(rows, cols);
  std::vector<Index> rstride(D, 1), cstride(D, 1);
  for (Index d = D - 2; d >= 0; --d) {
    rstride[d] = rstride[d + 1] * L.cores[d + 1].n;
    cstride[d] = cstride[d + 1] * L.cores[d + 1].m;
  }
  for (Index g = 0; g < vec.size(); ++g) {
    Index rem = g, row = 0, col = 0;
    for (Index d = D - 1; d >= 0; --d) {
      const Index digit = rem % (L.cores[d].n * L.cores[d].m);
      rem /= L.cores[d].n * L.cores[d].m;
      row += (digit % L.cores[d].n) * rstride[d];
      col += (digit / L.cores[d].n) * cstride[d];
    }
    out(row, col) = vec(g);
  }
  return out;
}

/// Rank-1 TTm whose dense form is kron(factors[0], ..., factors[D-1]).
inline TensorTrainMatrix ttm_from_kron_factors(const std::vector<Matrix>& factors) {
  if (factors.empty()) throw std::invalid_argument("ttm_from_kron_factors: no factors");
  TensorTrainMatrix L;
  L.cores.reserve(factors.size());
  for (const auto& f : factors) {
    Core4 c(1, f.rows(), f.cols(), 1);
    // column-major factor data matches the (i + n*j) layout directly
    std::copy(f.data(), f.data() + f.size(), c.v.begin());
    L.cores.push_back(std::move(c));
  }
  L.aug_site = 0;
  L.aug_multiplier = 1;
  return L;
}

inline TensorTrainMatrix ttm_identity(const std::vector<Index>& mode_sizes) {
  std::vector<Matrix> f;
  f.reserve(mode_sizes.size());
  for (Index n : mode_sizes) f.push_back(Matrix::Identity(n, n));
  return ttm_from_kron_factors(f);
}

/// Random TTm with i.i.d. N(0, scale^2) entries on merged modes; requested
/// ranks clipped to merged-mode feasibility. aug layout copied from `like`.
inline TensorTrainMatrix ttm_random_like(const TensorTrainMatrix& like,
                                         const std::vector<Index>& requested_ranks,
                                         std::uint64_t rng_seed, double scale = 1.0) {
  std::vector<Index> merged_modes;
  for (const auto& c : like.cores) merged_modes.push_back(c.n * c.m);
  const auto r = detail::feasible_ranks(merged_modes, requested_ranks);
  NormalRng rng(rng_seed);
  TensorTrainMatrix out;
  out.aug_site = like.aug_site;
  out.aug_multiplier = like.aug_multiplier;
  out.cores.reserve(like.cores.size());
  for (std::size_t d = 0; d < like.cores.size(); ++d) {
    Core4 c(r[d], like.cores[d].n, like.cores[d].m, r[d + 1]);
    for (auto& x : c.v) x = scale * rng();
    out.cores.push_back(std::move(c));
  }
  return out;
}

/// L * v over the column modes; output ranks are the products of the input
/// ranks, then clipped to feasibility by canonicalization (value unchanged).
inline TensorTrain ttm_apply(const TensorTrainMatrix& L, const TensorTrain& v) {
  if (L.order() != v.order()) throw std::invalid_argument("ttm_apply: order mismatch");
  const Index D = L.order();
  TensorTrain out;
  out.cores.reserve(D);
  for (Index d = 0; d < D; ++d) {
    const auto& lc = L.cores[d];
    const auto& vc = v.cores[d];
    if (lc.m != vc.n) throw std::invalid_argument("ttm_apply: column size mismatch");
    Core3 c(lc.r0 * vc.r0, lc.n, lc.r1 * vc.r1);
    Matrix acc(c.r0, c.r1);
    for (Index i = 0; i < lc.n; ++i) {
      acc.setZero();
      for (Index j = 0; j < lc.m; ++j) detail::kron_acc(acc, vc.slice(j), lc.slice(i, j));
      for (Index b = 0; b < c.r1; ++b)
        for (Index a = 0; a < c.r0; ++a) c.at(a, i, b) = acc(a, b);
    }
    out.cores.push_back(std::move(c));
  }
  orthogonalize_site(out, 0);
  return out;
}

/// L^T * phi over the row modes; a rank-1 operand leaves the ranks at R_L
/// (clipped to feasibility by canonicalization, value unchanged).
inline TensorTrain ttm_transpose_apply(const TensorTrainMatrix& L, const Rank1FeatureTT& phi) {
  if (L.order() != phi.order()) throw std::invalid_argument("ttm_transpose_apply: order mismatch");
  const Index D = L.order();
  TensorTrain out;
  out.cores.reserve(D);
  for (Index d = 0; d < D; ++d) {
    const auto& lc = L.cores[d];
    const auto& f = phi.factors[d];
    if (lc.n != f.size()) throw std::invalid_argument("ttm_transpose_apply: row size mismatch");
    Core3 c(lc.r0, lc.m, lc.r1);
    Matrix acc(lc.r0, lc.r1);
    for (Index j = 0; j < lc.m; ++j) {
      acc.setZero();
      for (Index i = 0; i < lc.n; ++i) acc.noalias() += f(i) * lc.slice(i, j);
      for (Index b = 0; b < lc.r1; ++b)
        for (Index a = 0; a < lc.r0; ++a) c.at(a, j, b) = acc(a, b);
    }
    out.cores.push_back(std::move(c));
  }
  orthogonalize_site(out, 0);
  return out;
}

/// Outer product u * v^T as a TTm (rows from u, columns from v); ranks multiply.
inline TensorTrainMatrix ttm_outer(const TensorTrain& u, const TensorTrain& v) {
  if (u.order() != v.order()) throw std::invalid_argument("ttm_outer: order mismatch");
  const Index D = u.order();
  TensorTrainMatrix out;
  out.cores.reserve(D);
  for (Index d = 0; d < D; ++d) {
    const auto& uc = u.cores[d];
    const auto& vc = v.cores[d];
    Core4 c(uc.r0 * vc.r0, uc.n, vc.n, uc.r1 * vc.r1);
    for (Index j = 0; j < vc.n; ++j)
      for (Index i = 0; i < uc.n; ++i) {
        Matrix acc = Matrix::Zero(c.r0, c.r1);
        detail::kron_acc(acc, vc.slice(j), uc.slice(i));
        for (Index b = 0; b < c.r1; ++b)
          for (Index a = 0; a < c.r0; ++a) c.at(a, i, j, b) = acc(a, b);
      }
    out.cores.push_back(std::move(c));
  }
  out.aug_site = 0;
  out.aug_multiplier = 1;
  return out;
}

/// Sum of two TTms by block concatenation on merged modes; requires matching
/// row/column sizes per core (including any augmentation).
inline TensorTrainMatrix ttm_add(const TensorTrainMatrix& a, const TensorTrainMatrix& b) {
  if (a.order() != b.order()) throw std::invalid_argument("ttm_add: order mismatch");
  const Index D = a.order();
  TensorTrainMatrix out;
  out.aug_site = a.aug_site;
  out.aug_multiplier = a.aug_multiplier;
  out.cores.reserve(D);
  for (Index d = 0; d < D; ++d) {
    const auto& ca = a.cores[d];
    const auto& cb = b.cores[d];
    if (ca.n != cb.n || ca.m != cb.m) throw std::invalid_argument("ttm_add: size mismatch");
    const Index r0 = (d == 0) ? 1 : ca.r0 + cb.r0;
    const Index r1 = (d == D - 1) ? 1 : ca.r1 + cb.r1;
    Core4 c(r0, ca.n, ca.m, r1);
    const Index ox = (d == 0) ? 0 : ca.r0;
    const Index oy = (d == D - 1) ? 0 : ca.r1;
    for (Index j = 0; j < ca.m; ++j)
      for (Index i = 0; i < ca.n; ++i) {
        for (Index x = 0; x < ca.r0; ++x)
          for (Index y = 0; y < ca.r1; ++y) c.at(x, i, j, y) = ca.at(x, i, j, y);
        for (Index x = 0; x < cb.r0; ++x)
          for (Index y = 0; y < cb.r1; ++y) c.at(ox + x, i, j, oy + y) += cb.at(x, i, j, y);
      }
    out.cores.push_back(std::move(c));
  }
  return out;
}

/// Scales the represented matrix in place.
inline void ttm_scale(TensorTrainMatrix& L, double s) {
  auto& c = L.cores[L.canonical_site.value_or(0)];
  for (auto& x : c.v) x *= s;
}

inline double ttm_frobenius(const TensorTrainMatrix& L) {
  if (L.canonical_site) return L.cores[*L.canonical_site].frobenius();
  TensorTrainMatrix tmp = L;
  orthogonalize_site(tmp, 0);
  return tmp.cores[0].frobenius();
}

/// Rank truncation on merged modes; same guarantees as the TT overload.
inline void tt_round(TensorTrainMatrix& L, const std::vector<Index>& max_ranks, double rel_tol) {
  L.validate();
  TensorTrain merged;
  {
    auto taken = detail::take_merged(L);
    merged.cores = std::move(taken);
  }
  tt_round(merged, max_ranks, rel_tol);
  detail::restore_merged(L, std::move(merged.cores));
  L.canonical_site = 0;
}

inline void tt_round(TensorTrainMatrix& L, Index uniform_max_rank, double rel_tol) {
  std::vector<Index> r(L.order() + 1, uniform_max_rank);
  r.front() = r.back() = 1;
  tt_round(L, r, rel_tol);
}

/// Doubles the augmented core's column block with zero columns on the right;
/// canonical orthogonality and the represented nonzero columns are unchanged.
inline void ttm_double_aug_columns(TensorTrainMatrix& L) {
  auto& c = L.cores[L.aug_site];
  Core4 nc(c.r0, c.n, 2 * c.m, c.r1);
  for (Index b = 0; b < c.r1; ++b)
    for (Index j = 0; j < c.m; ++j)
      for (Index i = 0; i < c.n; ++i)
        for (Index a = 0; a < c.r0; ++a) nc.at(a, i, j, b) = c.at(a, i, j, b);
  c = std::move(nc);
  L.aug_multiplier *= 2;
}

}  // namespace ttsrkf
