#pragma once

#include "ttsrkf/core/tensor_train.hpp"
#include "ttsrkf/core/tensor_train_matrix.hpp"

namespace ttsrkf {

/// Dense materialization of the site-d frame: the matrix G with
/// vec(tensor) = G * vec(core_d), columns indexed (a, i, b) with a fastest.
/// In site-d canonical form G has orthonormal columns. Small scales only.
inline Matrix dense_frame(const TensorTrain& tt, Index site, Index cap = dense_entry_cap()) {
  if (site < 0 || site >= tt.order()) throw std::invalid_argument("dense_frame: site out of range");
  const auto& c = tt.cores[site];
  const Index width = c.r0 * c.n * c.r1;
  const Index rows = tt.dense_size();
  if (detail::sat_mul(rows, width) > cap) throw ResourceLimit("dense_frame: size exceeds cap");
  TensorTrain probe = tt;
  Matrix g(rows, width);
  for (Index col = 0; col < width; ++col) {
    std::fill(probe.cores[site].v.begin(), probe.cores[site].v.end(), 0.0);
    probe.cores[site].v[static_cast<std::size_t>(col)] = 1.0;
    g.col(col) = tt_to_dense(probe, cap);
  }
  return g;
}

/// TTm variant on merged row/column indices: vec over the merged mode order
/// equals H * vec(core_d) with columns (a, (i + n*j), b), a fastest.
inline Matrix dense_frame(const TensorTrainMatrix& L, Index site, Index cap = dense_entry_cap()) {
  if (site < 0 || site >= L.order()) throw std::invalid_argument("dense_frame: site out of range");
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
  merged.canonical_site = L.canonical_site;
  return dense_frame(merged, site, cap);
}

/// View over "all cores except the dth" of a canonical train; materialized
/// densely only for small-scale verification.
struct ProjectionFrame {
  const TensorTrain* tt = nullptr;
  const TensorTrainMatrix* ttm = nullptr;
  Index site = 0;

  explicit ProjectionFrame(const TensorTrain& t, Index d) : tt(&t), site(d) {}
  explicit ProjectionFrame(const TensorTrainMatrix& m, Index d) : ttm(&m), site(d) {}

  Matrix to_dense(Index cap = dense_entry_cap()) const {
    return tt ? dense_frame(*tt, site, cap) : dense_frame(*ttm, site, cap);
  }
};

}  // namespace ttsrkf
