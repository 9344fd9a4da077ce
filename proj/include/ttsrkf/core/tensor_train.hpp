#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "ttsrkf/core/common.hpp"

namespace ttsrkf {

/// Three-way TT-core of shape (r0, n, r1).
/// Element (a, i, b) lives at offset a + r0*(i + n*b), so both unfoldings are
/// zero-copy column-major views:
///   left  unfolding: (r0*n) x r1, row index (a, i) with a fastest
///   right unfolding: r0 x (n*r1), column index (i, b) with i fastest
struct Core3 {
  Index r0 = 1, n = 1, r1 = 1;
  std::vector<double> v;

  Core3() = default;
  Core3(Index r0_, Index n_, Index r1_)
      : r0(r0_), n(n_), r1(r1_), v(static_cast<std::size_t>(r0_ * n_ * r1_), 0.0) {}

  Index size() const { return r0 * n * r1; }
  double& at(Index a, Index i, Index b) { return v[static_cast<std::size_t>(a + r0 * (i + n * b))]; }
  double at(Index a, Index i, Index b) const { return v[static_cast<std::size_t>(a + r0 * (i + n * b))]; }

  Eigen::Map<Matrix> left() { return {v.data(), r0 * n, r1}; }
  Eigen::Map<const Matrix> left() const { return {v.data(), r0 * n, r1}; }
  Eigen::Map<Matrix> right() { return {v.data(), r0, n * r1}; }
  Eigen::Map<const Matrix> right() const { return {v.data(), r0, n * r1}; }

  /// r0 x r1 slice at mode index i (strided view, no copy).
  Eigen::Map<const Matrix, 0, Eigen::OuterStride<>> slice(Index i) const {
    return {v.data() + r0 * i, r0, r1, Eigen::OuterStride<>(r0 * n)};
  }

  double frobenius() const {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  }

  /// Rebuild from a left unfolding (column-major matches the core layout).
  static Core3 from_left(const Matrix& m, Index r0, Index n) {
    Core3 c;
    c.r0 = r0;
    c.n = n;
    c.r1 = m.cols();
    c.v.assign(m.data(), m.data() + m.size());
    return c;
  }

  /// Rebuild from a right unfolding.
  static Core3 from_right(const Matrix& m, Index n, Index r1) {
    Core3 c;
    c.r0 = m.rows();
    c.n = n;
    c.r1 = r1;
    c.v.assign(m.data(), m.data() + m.size());
    return c;
  }
};

/// Tensor train over D modes; bond ranks R_0 = R_D = 1.
/// canonical_site = d means cores left of d have orthonormal left unfoldings
/// and cores right of d have orthonormal right unfoldings (0-based sites).
struct TensorTrain {
  std::vector<Core3> cores;
  std::optional<Index> canonical_site;

  Index order() const { return static_cast<Index>(cores.size()); }

  std::vector<Index> mode_sizes() const {
    std::vector<Index> m;
    m.reserve(cores.size());
    for (const auto& c : cores) m.push_back(c.n);
    return m;
  }

  /// Bond ranks, length D+1.
  std::vector<Index> ranks() const {
    std::vector<Index> r;
    r.reserve(cores.size() + 1);
    for (const auto& c : cores) r.push_back(c.r0);
    r.push_back(cores.empty() ? 1 : cores.back().r1);
    return r;
  }

  Index dense_size() const {
    Index s = 1;
    for (const auto& c : cores) s = detail::sat_mul(s, c.n);
    return s;
  }

  void validate() const {
    if (cores.empty()) throw std::invalid_argument("TensorTrain: no cores");
    if (cores.front().r0 != 1 || cores.back().r1 != 1)
      throw std::invalid_argument("TensorTrain: boundary ranks must be 1");
    for (std::size_t d = 0; d + 1 < cores.size(); ++d)
      if (cores[d].r1 != cores[d + 1].r0)
        throw std::invalid_argument("TensorTrain: adjacent ranks disagree");
    if (canonical_site && (*canonical_site < 0 || *canonical_site >= order()))
      throw std::invalid_argument("TensorTrain: canonical_site out of range");
  }
};

namespace detail {

/// Feasible bond ranks for the given mode sizes: the bond after position d is
/// capped by both one-sided dense dimensions.
inline std::vector<Index> feasible_ranks(const std::vector<Index>& modes,
                                         const std::vector<Index>& requested) {
  const auto D = static_cast<Index>(modes.size());
  std::vector<Index> left(D + 1, 1), right(D + 1, 1);
  for (Index d = 0; d < D; ++d) left[d + 1] = sat_mul(left[d], modes[d]);
  for (Index d = D - 1; d >= 0; --d) right[d] = sat_mul(right[d + 1], modes[d]);
  std::vector<Index> r(D + 1, 1);
  for (Index d = 1; d < D; ++d)
    r[d] = std::max<Index>(1, std::min({requested[d], left[d], right[d]}));
  return r;
}

/// Thin Householder QR of the left unfolding; the core keeps Q (orthonormal
/// columns) and the returned k x r1 factor is absorbed into the right
/// neighbor. R-diagonal signs fixed nonnegative for reproducibility.
inline Matrix left_qr(Core3& c) {
  const Index rows = c.r0 * c.n, cols = c.r1, k = std::min(rows, cols);
  Eigen::HouseholderQR<Matrix> qr(c.left());
  Matrix Q = qr.householderQ() * Matrix::Identity(rows, k);
  Matrix R = Matrix(qr.matrixQR().topRows(k).triangularView<Eigen::Upper>());
  for (Index j = 0; j < k; ++j)
    if (R(j, j) < 0) {
      R.row(j) = -R.row(j);
      Q.col(j) = -Q.col(j);
    }
  const Index r0 = c.r0, n = c.n;
  c = Core3::from_left(Q, r0, n);
  return R;
}

/// Mirror of left_qr: the core keeps orthonormal right-unfolding rows and the
/// returned r0 x k factor is absorbed into the left neighbor.
inline Matrix right_lq(Core3& c) {
  const Index rows = c.r0, cols = c.n * c.r1, k = std::min(rows, cols);
  Matrix At = c.right().transpose();
  Eigen::HouseholderQR<Matrix> qr(At);
  Matrix Q = qr.householderQ() * Matrix::Identity(cols, k);
  Matrix R = Matrix(qr.matrixQR().topRows(k).triangularView<Eigen::Upper>());
  for (Index j = 0; j < k; ++j)
    if (R(j, j) < 0) {
      R.row(j) = -R.row(j);
      Q.col(j) = -Q.col(j);
    }
  const Index n = c.n, r1 = c.r1;
  c = Core3::from_right(Matrix(Q.transpose()), n, r1);
  return R.transpose();
}

inline void absorb_from_left(Core3& c, const Matrix& f) {
  const Index n = c.n, r1 = c.r1;
  Matrix m = f * c.right();
  c = Core3::from_right(m, n, r1);
}

inline void absorb_from_right(Core3& c, const Matrix& f) {
  const Index r0 = c.r0, n = c.n;
  Matrix m = c.left() * f;
  c = Core3::from_left(m, r0, n);
}

/// Deterministic SVD orientation: per column of U, the entry of largest
/// magnitude is made positive (ties to the lowest row index).
inline void svd_sign_fix(Matrix& U, Matrix* V) {
  for (Index j = 0; j < U.cols(); ++j) {
    Index imax = 0;
    U.col(j).cwiseAbs().maxCoeff(&imax);
    if (U(imax, j) < 0) {
      U.col(j) = -U.col(j);
      if (V) V->col(j) = -V->col(j);
    }
  }
}

/// Generic canonicalization over a span of cores: full left QR pass followed
/// by a right LQ pass down to site+1. Both passes clip any bond that exceeds
/// its one-sided feasibility bound, without changing the represented tensor.
inline void canonicalize_cores(std::vector<Core3>& cores, Index site) {
  const auto D = static_cast<Index>(cores.size());
  for (Index d = 0; d + 1 < D; ++d) absorb_from_left(cores[d + 1], left_qr(cores[d]));
  for (Index d = D - 1; d > site; --d) absorb_from_right(cores[d - 1], right_lq(cores[d]));
}

inline void shift_cores(std::vector<Core3>& cores, Index site, bool to_right) {
  if (to_right)
    absorb_from_left(cores[site + 1], left_qr(cores[site]));
  else
    absorb_from_right(cores[site - 1], right_lq(cores[site]));
}

}  // namespace detail

enum class ShiftDirection { Left, Right };

/// Random TT with i.i.d. standard-normal entries; requested ranks are clipped
/// to feasibility. No canonicalization is applied.
inline TensorTrain tt_random(const std::vector<Index>& mode_sizes,
                             const std::vector<Index>& requested_ranks,
                             std::uint64_t rng_seed) {
  if (mode_sizes.empty()) throw std::invalid_argument("tt_random: empty mode list");
  const auto D = static_cast<Index>(mode_sizes.size());
  if (static_cast<Index>(requested_ranks.size()) != D + 1)
    throw std::invalid_argument("tt_random: ranks must have length D+1");
  const auto r = detail::feasible_ranks(mode_sizes, requested_ranks);
  NormalRng rng(rng_seed);
  TensorTrain tt;
  tt.cores.reserve(D);
  for (Index d = 0; d < D; ++d) {
    Core3 c(r[d], mode_sizes[d], r[d + 1]);
    for (auto& x : c.v) x = rng();
    tt.cores.push_back(std::move(c));
  }
  return tt;
}

inline TensorTrain tt_random(const std::vector<Index>& mode_sizes, Index uniform_rank,
                             std::uint64_t rng_seed) {
  std::vector<Index> r(mode_sizes.size() + 1, uniform_rank);
  r.front() = r.back() = 1;
  return tt_random(mode_sizes, r, rng_seed);
}

/// Dense reconstruction; index order puts dimension 1 outermost, i.e. the
/// result equals kron(factor_1, ..., factor_D) for rank-1 input.
inline Vector tt_to_dense(const TensorTrain& tt, Index cap = dense_entry_cap()) {
  tt.validate();
  const Index total = tt.dense_size();
  if (total > cap) throw ResourceLimit("tt_to_dense: size exceeds cap");
  // acc: (prod of processed modes) x R_{d+1}, row index with later dims faster
  Matrix acc = Matrix::Ones(1, 1);
  for (const auto& c : tt.cores) {
    const Index P = acc.rows();
    Matrix nxt(P * c.n, c.r1);
    for (Index i = 0; i < c.n; ++i) {
      const Matrix m = acc * c.slice(i);
      for (Index p = 0; p < P; ++p) nxt.row(p * c.n + i) = m.row(p);
    }
    acc = std::move(nxt);
  }
  return Vector(acc.col(0));
}

/// Inverse of tt_to_dense by sequential thin SVD; keeps exact numerical rank
/// (relative 1e-14 floor) unless rel_tol requests more truncation.
inline TensorTrain tt_from_dense(const Vector& dense, const std::vector<Index>& mode_sizes,
                                 double rel_tol = 0.0) {
  const auto D = static_cast<Index>(mode_sizes.size());
  Index total = 1;
  for (Index m : mode_sizes) total *= m;
  if (total != dense.size()) throw std::invalid_argument("tt_from_dense: size mismatch");
  const double norm = dense.norm();
  const double delta = (D > 1) ? rel_tol * norm / std::sqrt(double(D - 1)) : 0.0;
  TensorTrain tt;
  Matrix rem = dense.transpose();  // 1 x total, column index with dim 1 outermost
  Index r = 1;
  for (Index d = 0; d + 1 < D; ++d) {
    const Index n = mode_sizes[d];
    const Index rest = rem.cols() / n;
    Matrix A(r * n, rest);
    for (Index i = 0; i < n; ++i) A.middleRows(i * r, r) = rem.middleCols(i * rest, rest);
    Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double floor_ = std::max(delta, (s.size() ? s(0) : 0.0) * 1e-14);
    Index k = 0;
    double tail = 0.0;
    for (Index i = s.size() - 1; i >= 0; --i) {
      tail += s(i) * s(i);
      if (std::sqrt(tail) > floor_) {
        k = i + 1;
        break;
      }
    }
    k = std::max<Index>(k, 1);
    Matrix U = svd.matrixU().leftCols(k);
    Matrix V = svd.matrixV().leftCols(k);
    detail::svd_sign_fix(U, &V);
    tt.cores.push_back(Core3::from_left(U, r, n));
    rem = s.head(k).asDiagonal() * V.transpose();
    r = k;
  }
  tt.cores.push_back(Core3::from_right(rem, mode_sizes[D - 1], 1));
  tt.canonical_site = D - 1;
  return tt;
}

/// Puts the train into site-d-mixed canonical form via a full left QR pass and
/// a right LQ pass; clips infeasible bonds, preserves the dense value.
inline void orthogonalize_site(TensorTrain& tt, Index site) {
  tt.validate();
  if (site < 0 || site >= tt.order()) throw std::invalid_argument("orthogonalize_site: site out of range");
  detail::canonicalize_cores(tt.cores, site);
  tt.canonical_site = site;
}

/// Moves the canonical site by one with a single QR of the current site core.
inline void canonical_shift(TensorTrain& tt, ShiftDirection dir) {
  if (!tt.canonical_site) throw std::invalid_argument("canonical_shift: no canonical site");
  const Index d = *tt.canonical_site;
  if (dir == ShiftDirection::Right) {
    if (d + 1 >= tt.order()) throw std::invalid_argument("canonical_shift: past right boundary");
    detail::shift_cores(tt.cores, d, true);
    tt.canonical_site = d + 1;
  } else {
    if (d == 0) throw std::invalid_argument("canonical_shift: past left boundary");
    detail::shift_cores(tt.cores, d, false);
    tt.canonical_site = d - 1;
  }
}

/// Site move that prefers cheap QR shifts when a canonical site already
/// exists, falling back to full canonicalization.
inline void move_canonical_site(TensorTrain& tt, Index site) {
  if (!tt.canonical_site) {
    orthogonalize_site(tt, site);
    return;
  }
  while (*tt.canonical_site < site) canonical_shift(tt, ShiftDirection::Right);
  while (*tt.canonical_site > site) canonical_shift(tt, ShiftDirection::Left);
}

inline double tt_dot(const TensorTrain& a, const TensorTrain& b) {
  if (a.order() != b.order()) throw std::invalid_argument("tt_dot: order mismatch");
  Matrix e = Matrix::Ones(1, 1);
  for (Index d = 0; d < a.order(); ++d) {
    const auto& ca = a.cores[d];
    const auto& cb = b.cores[d];
    if (ca.n != cb.n) throw std::invalid_argument("tt_dot: mode mismatch");
    Matrix nxt = Matrix::Zero(ca.r1, cb.r1);
    for (Index i = 0; i < ca.n; ++i) nxt.noalias() += ca.slice(i).transpose() * e * cb.slice(i);
    e = std::move(nxt);
  }
  return e(0, 0);
}

inline double tt_norm(const TensorTrain& tt) {
  if (tt.canonical_site) return tt.cores[*tt.canonical_site].frobenius();
  return std::sqrt(std::max(0.0, tt_dot(tt, tt)));
}

/// Scales the represented tensor in place (applied at the site core if set).
inline void tt_scale(TensorTrain& tt, double s) {
  auto& c = tt.cores[tt.canonical_site.value_or(0)];
  for (auto& x : c.v) x *= s;
}

/// Sum of two trains by block concatenation; ranks add on interior bonds.
inline TensorTrain tt_add(const TensorTrain& a, const TensorTrain& b) {
  if (a.order() != b.order()) throw std::invalid_argument("tt_add: order mismatch");
  const Index D = a.order();
  TensorTrain out;
  out.cores.reserve(D);
  for (Index d = 0; d < D; ++d) {
    const auto& ca = a.cores[d];
    const auto& cb = b.cores[d];
    if (ca.n != cb.n) throw std::invalid_argument("tt_add: mode mismatch");
    const Index r0 = (d == 0) ? 1 : ca.r0 + cb.r0;
    const Index r1 = (d == D - 1) ? 1 : ca.r1 + cb.r1;
    Core3 c(r0, ca.n, r1);
    for (Index i = 0; i < ca.n; ++i) {
      for (Index x = 0; x < ca.r0; ++x)
        for (Index y = 0; y < ca.r1; ++y) c.at(x, i, y) = ca.at(x, i, y);
      const Index ox = (d == 0) ? 0 : ca.r0;
      const Index oy = (d == D - 1) ? 0 : ca.r1;
      for (Index x = 0; x < cb.r0; ++x)
        for (Index y = 0; y < cb.r1; ++y) c.at(ox + x, i, oy + y) += cb.at(x, i, y);
    }
    out.cores.push_back(std::move(c));
  }
  return out;
}

/// SVD-based rank truncation. Left-canonicalizes, then sweeps right-to-left
/// keeping at most max_ranks[bond] singular values and dropping a tail whose
/// energy stays below rel_tol * ||X||_F / sqrt(D-1) per bond.
inline void tt_round(TensorTrain& tt, const std::vector<Index>& max_ranks, double rel_tol) {
  tt.validate();
  const Index D = tt.order();
  if (static_cast<Index>(max_ranks.size()) != D + 1)
    throw std::invalid_argument("tt_round: max_ranks must have length D+1");
  if (D == 1) {
    tt.canonical_site = 0;
    return;
  }
  detail::canonicalize_cores(tt.cores, D - 1);
  const double norm = tt.cores[D - 1].frobenius();
  const double delta = rel_tol * norm / std::sqrt(double(D - 1));
  for (Index d = D - 1; d > 0; --d) {
    auto& c = tt.cores[d];
    Eigen::BDCSVD<Matrix> svd(c.right(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    Index k = std::min<Index>(max_ranks[d], s.size());
    double tail = 0.0;
    for (Index i = s.size() - 1; i >= k; --i) tail += s(i) * s(i);
    while (k > 1) {
      const double cand = tail + s(k - 1) * s(k - 1);
      if (std::sqrt(cand) > delta) break;
      tail = cand;
      --k;
    }
    Matrix U = svd.matrixU().leftCols(k);
    Matrix V = svd.matrixV().leftCols(k);
    detail::svd_sign_fix(U, &V);
    const Index n = c.n, r1 = c.r1;
    c = Core3::from_right(Matrix(V.transpose()), n, r1);
    detail::absorb_from_right(tt.cores[d - 1], U * s.head(k).asDiagonal());
  }
  tt.canonical_site = 0;
}

inline void tt_round(TensorTrain& tt, Index uniform_max_rank, double rel_tol) {
  std::vector<Index> r(tt.order() + 1, uniform_max_rank);
  r.front() = r.back() = 1;
  tt_round(tt, r, rel_tol);
}

}  // namespace ttsrkf
