#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ttsrkf/core/common.hpp"
#include "ttsrkf/core/tensor_train.hpp"
#include "ttsrkf/core/tensor_train_matrix.hpp"
#include "ttsrkf/features/features.hpp"

namespace ttsrkf {

/// Streaming regression problem: per-sample feature inputs plus targets, with
/// the noise-free targets kept alongside where the generator knows them.
struct Dataset {
  std::vector<Vector> train_x;
  std::vector<double> train_y;
  std::vector<double> train_f;  // noise-free targets; equals train_y for real data
  std::vector<Vector> test_x;
  std::vector<double> test_y;
  std::vector<double> test_f;
  Vector true_weights;  // dense generating weights when available, else empty
};

/// Feature map dispatch; the lagged input/output variant consumes inputs that
/// were already embedded, so it shares the Hilbert-basis map.
inline Rank1FeatureTT make_features(const Vector& x, const FeatureConfig& cfg) {
  return cfg.kind == FeatureKind::Volterra ? volterra_factors(x, cfg) : hilbert_se_factors(x, cfg);
}

inline PriorSpec make_prior(const FeatureConfig& cfg) {
  return cfg.kind == FeatureKind::Volterra ? volterra_prior(cfg) : se_prior(cfg);
}

/// Kronecker product of the rank-1 factors, first dimension outermost; matches
/// the dense layouts produced by tt_to_dense and ttm_to_dense.
inline Vector dense_feature(const Rank1FeatureTT& phi) {
  Vector v = Vector::Ones(1);
  for (const auto& f : phi.factors) {
    Vector next(v.size() * f.size());
    for (Index i = 0; i < v.size(); ++i) next.segment(i * f.size(), f.size()) = v(i) * f;
    v = std::move(next);
  }
  return v;
}

/// Samples ground-truth weights from the dense basis prior, then draws uniform
/// inputs in the cuboid [-half_width, half_width]^D and targets with additive
/// Gaussian noise. Weights, train draws, and test draws use independent
/// engines (seed .. seed+4) so resizing one split never shifts the other.
inline Dataset gen_synthetic_gp(const FeatureConfig& cfg, Index n_train, Index n_test,
                                double half_width, double noise_var, std::uint64_t seed) {
  cfg.validate();
  if (n_train < 0 || n_test < 0) throw std::invalid_argument("gen_synthetic_gp: negative count");
  if (!(half_width > 0)) throw std::invalid_argument("gen_synthetic_gp: half_width must be > 0");
  if (!(noise_var >= 0)) throw std::invalid_argument("gen_synthetic_gp: negative noise variance");

  const Matrix l = ttm_to_dense(ttm_from_kron_factors(make_prior(cfg).sqrt_factors));
  Dataset ds;
  {
    NormalRng rng(seed);
    Vector z(l.cols());
    for (Index i = 0; i < z.size(); ++i) z(i) = rng();
    ds.true_weights = l * z;
  }

  const auto fill = [&](std::vector<Vector>& xs, std::vector<double>& ys, std::vector<double>& fs,
                        Index n, std::uint64_t input_seed, std::uint64_t noise_seed) {
    std::mt19937_64 eng(input_seed);
    std::uniform_real_distribution<double> ux(-half_width, half_width);
    NormalRng noise(noise_seed);
    const double sd = std::sqrt(noise_var);
    for (Index i = 0; i < n; ++i) {
      Vector x(cfg.dims);
      for (Index d = 0; d < cfg.dims; ++d) x(d) = ux(eng);
      const double f = dense_feature(make_features(x, cfg)).dot(ds.true_weights);
      xs.push_back(std::move(x));
      fs.push_back(f);
      ys.push_back(f + sd * noise());
    }
  };
  fill(ds.train_x, ds.train_y, ds.train_f, n_train, seed + 1, seed + 2);
  fill(ds.test_x, ds.test_y, ds.test_f, n_test, seed + 3, seed + 4);
  return ds;
}

/// Samples a ground-truth weight TT (unit Frobenius norm), drives the model
/// with i.i.d. uniform input in [-1, 1], and scales additive Gaussian noise so
/// the clean-signal-to-noise power ratio over the whole emitted stream meets
/// snr_db; snr_db = +inf keeps the outputs noiseless. Each sample's input is
/// the length I-1 window with the newest input first.
inline Dataset gen_volterra(const FeatureConfig& cfg, Index n_train, Index n_test, Index true_rank,
                            double snr_db, std::uint64_t seed) {
  cfg.validate();
  if (n_train < 0 || n_test < 0) throw std::invalid_argument("gen_volterra: negative count");
  if (true_rank < 1) throw std::invalid_argument("gen_volterra: true_rank must be >= 1");
  if (std::isnan(snr_db)) throw std::invalid_argument("gen_volterra: snr_db must not be NaN");

  TensorTrain w = tt_random(std::vector<Index>(cfg.dims, cfg.basis_count), true_rank, seed);
  const double nrm = tt_norm(w);
  if (nrm > 0) tt_scale(w, 1.0 / nrm);

  Dataset ds;
  if (w.dense_size() <= dense_entry_cap()) ds.true_weights = tt_to_dense(w);

  const Index window = cfg.basis_count - 1;
  const Index total = n_train + n_test;
  std::mt19937_64 eng(seed + 1);
  std::uniform_real_distribution<double> uu(-1.0, 1.0);
  std::vector<double> u(static_cast<std::size_t>(total + window));
  for (auto& v : u) v = uu(eng);

  std::vector<double> clean(static_cast<std::size_t>(total));
  for (Index i = 0; i < total; ++i) {
    Vector x(window);
    for (Index k = 0; k < window; ++k) x(k) = u[static_cast<std::size_t>(window + i - 1 - k)];
    clean[static_cast<std::size_t>(i)] = tt_dot(make_features(x, cfg).to_tt(), w);
    auto& xs = i < n_train ? ds.train_x : ds.test_x;
    xs.push_back(std::move(x));
  }

  double signal_power = 0.0;
  for (double c : clean) signal_power += c * c;
  signal_power /= std::max<Index>(total, 1);
  const double noise_var =
      std::isinf(snr_db) ? 0.0 : signal_power / std::pow(10.0, snr_db / 10.0);
  const double sd = std::sqrt(noise_var);

  NormalRng noise(seed + 2);
  for (Index i = 0; i < total; ++i) {
    const double f = clean[static_cast<std::size_t>(i)];
    const double y = sd > 0 ? f + sd * noise() : f;
    if (i < n_train) {
      ds.train_f.push_back(f);
      ds.train_y.push_back(y);
    } else {
      ds.test_f.push_back(f);
      ds.test_y.push_back(y);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// cascaded-tanks benchmark format

/// Raw column quadruple of the benchmark CSV export: estimation and validation
/// input/output series of equal length.
struct TanksColumns {
  std::vector<double> u_est, y_est, u_val, y_val;
};

/// Shortest-round-trip decimal formatting; %.17g reparses to the same double.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline TanksColumns load_tanks_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_tanks_csv: cannot open '" + path + "'");
  std::string line;
  const auto strip = [](std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n' || s.back() == ' ')) s.pop_back();
  };
  if (!std::getline(in, line)) throw IoError("load_tanks_csv: '" + path + "' is empty");
  strip(line);
  if (line != "uEst,yEst,uVal,yVal")
    throw IoError("load_tanks_csv: '" + path + "' row 1: expected header uEst,yEst,uVal,yVal, got '" +
                  line + "'");

  TanksColumns cols;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    strip(line);
    if (line.empty()) continue;
    double vals[4];
    const char* p = line.c_str();
    for (int c = 0; c < 4; ++c) {
      char* end = nullptr;
      vals[c] = std::strtod(p, &end);
      if (end == p)
        throw IoError("load_tanks_csv: '" + path + "' row " + std::to_string(row) + " column " +
                      std::to_string(c + 1) + ": expected a number, got '" + std::string(p) + "'");
      p = end;
      if (c < 3) {
        if (*p != ',')
          throw IoError("load_tanks_csv: '" + path + "' row " + std::to_string(row) + " column " +
                        std::to_string(c + 1) + ": expected ',' after value");
        ++p;
      }
    }
    if (*p != '\0')
      throw IoError("load_tanks_csv: '" + path + "' row " + std::to_string(row) +
                    ": trailing characters '" + std::string(p) + "'");
    cols.u_est.push_back(vals[0]);
    cols.y_est.push_back(vals[1]);
    cols.u_val.push_back(vals[2]);
    cols.y_val.push_back(vals[3]);
  }
  if (cols.u_est.empty()) throw IoError("load_tanks_csv: '" + path + "' has no data rows");
  return cols;
}

inline void save_tanks_csv(const TanksColumns& cols, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_tanks_csv: cannot write '" + path + "'");
  out << "uEst,yEst,uVal,yVal\n";
  for (std::size_t i = 0; i < cols.u_est.size(); ++i)
    out << fmt_g17(cols.u_est[i]) << ',' << fmt_g17(cols.y_est[i]) << ',' << fmt_g17(cols.u_val[i])
        << ',' << fmt_g17(cols.y_val[i]) << '\n';
  if (!out) throw IoError("save_tanks_csv: write to '" + path + "' failed");
}

/// Lag-embeds the estimation series as the train stream and the validation
/// series as the test stream. Coordinate scaling is calibrated on the
/// estimation series only and reused for validation; rows before the largest
/// lag are skipped. Validation excursions beyond the calibration range
/// saturate at the envelope so every coordinate stays inside the basis
/// domain; non-finite values pass through for the stream-failure path. The
/// regression target is the output passed through the same calibrated map
/// (metrics are in scaled units), unclamped since it never enters the basis.
inline Dataset embed_cascaded_tanks(const TanksColumns& cols, const LagConfig& lags,
                                    double l_dom) {
  const auto [umap, ymap] =
      fit_lagged_io_scaling(cols.u_est, cols.y_est, cols.u_est.size(), l_dom, lags.margin);
  const double bound = lags.margin * l_dom;
  Dataset ds;
  const auto emit = [&](const std::vector<double>& u, const std::vector<double>& y,
                        std::vector<Vector>& xs, std::vector<double>& ys,
                        std::vector<double>& fs) {
    for (Index t = 0; t < static_cast<Index>(u.size()); ++t) {
      if (auto x = lagged_io_embedding(u, y, t, lags, umap, ymap)) {
        for (Index d = 0; d < x->size(); ++d) (*x)(d) = std::clamp((*x)(d), -bound, bound);
        xs.push_back(std::move(*x));
        ys.push_back(ymap(y[static_cast<std::size_t>(t)]));
        fs.push_back(ymap(y[static_cast<std::size_t>(t)]));
      }
    }
  };
  emit(cols.u_est, cols.y_est, ds.train_x, ds.train_y, ds.train_f);
  emit(cols.u_val, cols.y_val, ds.test_x, ds.test_y, ds.test_f);
  return ds;
}

inline Dataset load_cascaded_tanks(const std::string& path, const LagConfig& lags, double l_dom) {
  return embed_cascaded_tanks(load_tanks_csv(path), lags, l_dom);
}

/// Discrete two-tank cascade simulation in the benchmark's column layout:
/// piecewise-constant random input feeds the upper tank, the lower tank's
/// level is measured with small noise. Estimation and validation runs use
/// independent input sequences.
inline TanksColumns simulate_cascaded_tanks(Index n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("simulate_cascaded_tanks: need at least one row");
  TanksColumns cols;
  const auto run = [&](std::vector<double>& u_out, std::vector<double>& y_out,
                       std::uint64_t run_seed) {
    std::mt19937_64 eng(run_seed);
    std::uniform_real_distribution<double> ulevel(0.5, 4.5);
    std::uniform_int_distribution<int> uhold(20, 60);
    NormalRng noise(run_seed + 1);
    double x1 = 2.0, x2 = 2.0, level = ulevel(eng);
    int hold = uhold(eng);
    for (Index t = 0; t < n; ++t) {
      if (hold-- == 0) {
        level = ulevel(eng);
        hold = uhold(eng);
      }
      x1 += 0.07 * level - 0.05 * std::sqrt(std::max(x1, 0.0));
      x2 += 0.05 * std::sqrt(std::max(x1, 0.0)) - 0.04 * std::sqrt(std::max(x2, 0.0));
      x1 = std::min(std::max(x1, 0.0), 10.0);
      x2 = std::min(std::max(x2, 0.0), 10.0);
      u_out.push_back(level);
      y_out.push_back(x2 + 0.01 * noise());
    }
  };
  run(cols.u_est, cols.y_est, seed);
  run(cols.u_val, cols.y_val, seed + 1000);
  return cols;
}

}  // namespace ttsrkf
