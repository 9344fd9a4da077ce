#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "ttsrkf/core/common.hpp"

#if defined(TTSRKF_USE_LAPACK)
extern "C" void dsyevd_(const char* jobz, const char* uplo, const int* n, double* a,
                        const int* lda, double* w, double* work, const int* lwork, int* iwork,
                        const int* liwork, int* info);
extern "C" void dpstrf_(const char* uplo, const int* n, double* a, const int* lda, int* piv,
                        int* rank, const double* tol, double* work, int* info);
#endif

namespace ttsrkf::detail {

/// Full eigendecomposition of a symmetric matrix; on return `g` holds the
/// eigenvectors as columns and `lambda` the eigenvalues, both sorted
/// descending. Uses LAPACK's divide-and-conquer solver when available.
inline void eigh_descending(Matrix& g, Vector& lambda) {
  const auto n = static_cast<int>(g.rows());
  lambda.resize(n);
  if (n == 0) return;
#if defined(TTSRKF_USE_LAPACK)
  int lwork = -1, liwork = -1, info = 0;
  double wq = 0;
  int iq = 0;
  dsyevd_("V", "L", &n, g.data(), &n, lambda.data(), &wq, &lwork, &iq, &liwork, &info);
  lwork = static_cast<int>(wq);
  liwork = iq;
  std::vector<double> work(static_cast<std::size_t>(lwork));
  std::vector<int> iwork(static_cast<std::size_t>(liwork));
  dsyevd_("V", "L", &n, g.data(), &n, lambda.data(), work.data(), &lwork, iwork.data(), &liwork,
          &info);
  if (info != 0) throw NumericalFailure("eigh_descending: dsyevd failed");
  // dsyevd returns ascending order
  for (Index j = 0; j < n / 2; ++j) {
    g.col(j).swap(g.col(n - 1 - j));
    std::swap(lambda(j), lambda(n - 1 - j));
  }
#else
  Eigen::SelfAdjointEigenSolver<Matrix> es(g);
  if (es.info() != Eigen::Success) throw NumericalFailure("eigh_descending: solver failed");
  Matrix v = es.eigenvectors();
  Vector w = es.eigenvalues();
  for (Index j = 0; j < n; ++j) {
    g.col(j) = v.col(n - 1 - j);
    lambda(j) = w(n - 1 - j);
  }
#endif
}

/// Square root of a symmetric positive semidefinite matrix given by its lower
/// triangle: overwrites `g` with a factor B such that B B^T reproduces the
/// input up to the pivot tolerance (columns past the numerical rank are zero,
/// row order matches the input). Uses LAPACK's pivoted Cholesky when
/// available, so semidefinite inputs need no fallback.
inline void cholesky_psd_lower(Matrix& g) {
  const auto n = static_cast<int>(g.rows());
  if (n == 0) return;
#if defined(TTSRKF_USE_LAPACK)
  Matrix l = g;
  std::vector<int> piv(static_cast<std::size_t>(n));
  int rank = 0, info = 0;
  const double tol = -1.0;  // default threshold: n * eps * max diagonal entry
  std::vector<double> work(static_cast<std::size_t>(2 * n));
  dpstrf_("L", &n, l.data(), &n, piv.data(), &rank, &tol, work.data(), &info);
  if (info < 0) throw NumericalFailure("cholesky_psd_lower: dpstrf failed");
  g.setZero();
  for (int k = 0; k < n; ++k)
    for (int j = 0; j <= k && j < rank; ++j) g(piv[static_cast<std::size_t>(k)] - 1, j) = l(k, j);
#else
  Eigen::LDLT<Matrix> ldlt(g.selfadjointView<Eigen::Lower>());
  Matrix l = ldlt.matrixL();
  l = ldlt.transpositionsP().transpose() * l;
  const Vector d = ldlt.vectorD();
  g.setZero();
  for (Index j = 0; j < d.size(); ++j)
    if (d(j) > 0.0) g.col(j) = l.col(j) * std::sqrt(d(j));
#endif
}

}  // namespace ttsrkf::detail
