// End-to-end acceptance gates. Each test prints one [CRITERION k] PASS/FAIL
// line through the listener at the bottom; tolerances are pinned inline.
#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dense_layout.hpp"
#include "oracles.hpp"
#include "ttsrkf/filter/baselines.hpp"
#include "ttsrkf/filter/tnsrkf.hpp"
#include "ttsrkf/harness/dataset.hpp"
#include "ttsrkf/harness/experiment.hpp"

#ifndef ACCEPTANCE_BIN_DIR
#define ACCEPTANCE_BIN_DIR "."
#endif

namespace {

using Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Wall time plus process CPU time. Runtime bounds are asserted on CPU time,
/// which for these single-threaded suites equals unloaded wall time but is
/// immune to host descheduling; the child-process suite (criterion 5) bounds
/// wall time instead since std::clock excludes children.
struct Timer {
  std::chrono::steady_clock::time_point wall = std::chrono::steady_clock::now();
  std::clock_t cpu = std::clock();
  double wall_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall).count();
  }
  double cpu_s() const {
    return static_cast<double>(std::clock() - cpu) / CLOCKS_PER_SEC;
  }
};

ttsrkf::FeatureConfig se_config(Index dims, Index basis) {
  ttsrkf::FeatureConfig cfg;
  cfg.dims = dims;
  cfg.basis_count = basis;
  cfg.lengthscale = {0.7};
  cfg.signal_var = 1.3;
  cfg.domain_half_width = {2.0};
  return cfg;
}

struct Stream {
  std::vector<Vector> x;
  std::vector<double> y;
};

// x ~ U(-box, box)^dims then y = sin(sum x) + N(0, 0.3), one engine, in draw
// order, so recorded witness seeds replay bit for bit.
Stream sine_stream(Index dims, std::uint64_t seed, int n, double box) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> ux(-box, box);
  std::normal_distribution<double> ny(0.0, 0.3);
  Stream st;
  for (int t = 0; t < n; ++t) {
    Vector x(dims);
    for (Index d = 0; d < dims; ++d) x(d) = ux(eng);
    st.x.push_back(x);
    st.y.push_back(std::sin(x.sum()) + ny(eng));
  }
  return st;
}

// ttm_to_dense instead of the scalar-loop oracle: the two agree per the
// oracle suites (criterion 5) and the fast path keeps trajectory-long dense
// comparisons inside the runtime bounds.
double min_cov_eig(const ttsrkf::FilterState& s) {
  const Matrix l = ttsrkf::ttm_to_dense(s.sqrt_factor);
  return oracles::min_eigenvalue(l * l.transpose());
}

ttsrkf::FilterRanks uniform_ranks(Index dims, Index mean, Index cov) {
  return {ttsrkf::FilterRanks::uniform(dims, mean),
          ttsrkf::FilterRanks::uniform(dims, cov)};
}

// Shared full-rank GP setting: D=3, I=4 (64 weights), N = N_* = 100.
struct GpCase {
  ttsrkf::FeatureConfig cfg = se_config(3, 4);
  ttsrkf::Dataset ds;
  ttsrkf::PriorSpec prior;
  std::vector<ttsrkf::Rank1FeatureTT> test_phi;
  std::vector<Vector> test_phi_dense;

  GpCase() {
    ds = ttsrkf::gen_synthetic_gp(cfg, 100, 100, 1.0, 0.1, 2024);
    prior = ttsrkf::se_prior(cfg);
    for (const auto& x : ds.test_x) {
      test_phi.push_back(ttsrkf::hilbert_se_factors(x, cfg));
      test_phi_dense.push_back(ttsrkf::dense_feature(test_phi.back()));
    }
  }

  ttsrkf::MetricsRow tt_metrics(const ttsrkf::FilterState& s) const {
    std::vector<ttsrkf::GaussianPrediction> p;
    for (const auto& phi : test_phi) p.push_back(ttsrkf::predict(s, phi));
    return ttsrkf::compute_metrics(p, ds.test_y);
  }

  ttsrkf::MetricsRow kf_metrics(const ttsrkf::DenseFilterState& s) const {
    std::vector<ttsrkf::GaussianPrediction> p;
    for (const auto& phi : test_phi_dense) p.push_back(ttsrkf::dense_predict(s, phi, false));
    return ttsrkf::compute_metrics(p, ds.test_y);
  }
};

// Criterion 1: at full ranks with the exact QR budget the TT filter and the
// dense Kalman filter are the same algorithm: means to 1e-8 relative inf-norm,
// covariances to 1e-6 relative Frobenius, metric trajectories to six
// significant digits.
TEST(Acceptance, C1_FullRankMatchesDenseKf) {
  const Timer t0;
  GpCase gp;
  auto s = ttsrkf::init_filter(gp.prior, uniform_ranks(3, 4, 16), 0, 0.1, 2024);
  auto kf = ttsrkf::dense_init(gp.prior, 0.1, false);

  double worst_mean = 0.0, worst_cov = 0.0, worst_metric = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto phi = ttsrkf::hilbert_se_factors(gp.ds.train_x[t], gp.cfg);
    const double y = gp.ds.train_y[t];
    const auto out = ttsrkf::step(s, phi, y);
    ASSERT_TRUE(out.ok) << "step " << t << ": " << out.message;
    ttsrkf::dense_kf_step(kf, ttsrkf::dense_feature(phi), y);

    const Vector m = oracles::tt_dense(s.mean);
    worst_mean = std::max(worst_mean, (m - kf.mean).lpNorm<Eigen::Infinity>() /
                                          std::max(kf.mean.lpNorm<Eigen::Infinity>(), 1e-12));
    const Matrix l = ttsrkf::ttm_to_dense(s.sqrt_factor);
    const Matrix p = l * l.transpose();
    worst_cov = std::max(worst_cov, (p - kf.factor).norm() / kf.factor.norm());

    if ((t + 1) % 10 == 0) {
      const auto a = gp.tt_metrics(s);
      const auto b = gp.kf_metrics(kf);
      worst_metric = std::max(worst_metric, std::abs(a.rmse - b.rmse) / std::abs(b.rmse));
      worst_metric = std::max(worst_metric, std::abs(a.nll - b.nll) / std::abs(b.nll));
    }
  }
  EXPECT_LT(worst_mean, 1e-8);
  EXPECT_LT(worst_cov, 1e-6);
  EXPECT_LT(worst_metric, 1e-6);
  EXPECT_LT(t0.cpu_s(), 60.0);
  std::printf("    criterion 1: mean %.2e  cov %.2e  metrics %.2e  (cpu %.1fs, wall %.1fs)\n", worst_mean,
              worst_cov, worst_metric, t0.cpu_s(), t0.wall_s());
}

// Criterion 2: truncating the QR step every time (budget 1) makes the
// covariance visibly leave the dense trajectory while the factored form keeps
// it PSD and the run finishes.
TEST(Acceptance, C2_TruncatedQrDriftsButStaysPsd) {
  const Timer t0;
  GpCase gp;
  auto s = ttsrkf::init_filter(gp.prior, uniform_ranks(3, 4, 16), 1, 0.1, 2024);
  auto kf = ttsrkf::dense_init(gp.prior, 0.1, false);

  double max_gap = 0.0, min_eig = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto phi = ttsrkf::hilbert_se_factors(gp.ds.train_x[t], gp.cfg);
    const double y = gp.ds.train_y[t];
    const auto out = ttsrkf::step(s, phi, y);
    ASSERT_TRUE(out.ok) << "step " << t << ": " << out.message;
    ttsrkf::dense_kf_step(kf, ttsrkf::dense_feature(phi), y);

    const Matrix l = ttsrkf::ttm_to_dense(s.sqrt_factor);
    const Matrix p = l * l.transpose();
    max_gap = std::max(max_gap, (p - kf.factor).norm() / kf.factor.norm());
    min_eig = std::min(min_eig, oracles::min_eigenvalue(p));
  }
  EXPECT_GT(max_gap, 1e-3);
  EXPECT_GE(min_eig, -1e-10);
  EXPECT_LT(t0.cpu_s(), 60.0);
  std::printf("    criterion 2: max dense gap %.2e  min eig %.2e  (cpu %.1fs, wall %.1fs)\n", max_gap, min_eig,
              t0.cpu_s(), t0.wall_s());
}

// Criterion 3: PSD holds for every step of >= 20 seeded streams across shapes
// and factor ranks (the factored parametrization can only fail through
// roundoff, bounded here at -1e-10).
TEST(Acceptance, C3_PsdAcrossSeededStreams) {
  const Timer t0;
  const std::vector<std::pair<Index, Index>> shapes{{3, 4}, {4, 3}, {2, 4}};
  const std::vector<Index> cov_ranks{1, 2, 4};
  int streams = 0;
  double min_eig = 0.0;
  for (const auto& [dims, basis] : shapes)
    for (Index rl : cov_ranks)
      for (std::uint64_t seed : {101, 102, 103}) {
        const auto cfg = se_config(dims, basis);
        const auto prior = ttsrkf::se_prior(cfg);
        auto s = ttsrkf::init_filter(prior, uniform_ranks(dims, 2, rl), 0, 0.1, seed);
        const auto st = sine_stream(dims, seed, 25, 1.0);
        for (int t = 0; t < 25; ++t) {
          const auto phi = ttsrkf::hilbert_se_factors(st.x[t], cfg);
          const auto out = ttsrkf::step(s, phi, st.y[t]);
          ASSERT_TRUE(out.ok) << "dims " << dims << " rl " << rl << " seed " << seed << " step "
                              << t << ": " << out.message;
          min_eig = std::min(min_eig, min_cov_eig(s));
        }
        ++streams;
      }
  EXPECT_GE(streams, 20);
  EXPECT_GE(min_eig, -1e-10);
  EXPECT_LT(t0.cpu_s(), 300.0);
  std::printf("    criterion 3: %d streams  min eig %.2e  (cpu %.1fs, wall %.1fs)\n", streams, min_eig,
              t0.cpu_s(), t0.wall_s());
}

// Criterion 4: recorded instability replay. Seed 1 at rounding rank 4 drives
// the rounding-based filter's covariance to a -3e-2 eigenvalue by step 5; the
// square-root filter stays PSD on the identical stream.
TEST(Acceptance, C4_RoundingFilterWitnessSqrtFilterStable) {
  const Timer t0;
  const auto cfg = se_config(3, 4);
  const auto prior = ttsrkf::se_prior(cfg);
  const auto st = sine_stream(3, 1, 10, 1.5);

  ttsrkf::TnkfRounding rounding;
  rounding.cov_max_ranks = ttsrkf::FilterRanks::uniform(3, 4);
  rounding.mean_max_ranks = ttsrkf::FilterRanks::uniform(3, 4);
  auto tnkf = ttsrkf::tnkf_init(prior, rounding, 0.1);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const auto phi = ttsrkf::hilbert_se_factors(st.x[t], cfg);
    try {
      ttsrkf::tnkf_step(tnkf, phi, st.y[t]);
    } catch (const ttsrkf::NumericalFailure&) {
      break;  // blowing up is the same instability, witnessed earlier
    }
    worst = std::min(worst, oracles::min_eigenvalue(ttsrkf::ttm_to_dense(tnkf.cov)));
  }
  EXPECT_LT(worst, -1e-6);

  auto s = ttsrkf::init_filter(prior, uniform_ranks(3, 4, 4), 0, 0.1, 1);
  double min_eig = 0.0;
  for (int t = 0; t < 10; ++t) {
    const auto phi = ttsrkf::hilbert_se_factors(st.x[t], cfg);
    const auto out = ttsrkf::step(s, phi, st.y[t]);
    ASSERT_TRUE(out.ok) << "step " << t << ": " << out.message;
    min_eig = std::min(min_eig, min_cov_eig(s));
  }
  EXPECT_GE(min_eig, -1e-10);
  EXPECT_LT(t0.cpu_s(), 300.0);
  std::printf("    criterion 4: rounding min eig %.2e  sqrt min eig %.2e  (cpu %.1fs, wall %.1fs)\n", worst,
              min_eig, t0.cpu_s(), t0.wall_s());
}

// Criterion 5: the dense-oracle unit suites (every TN operation checked
// against brute-force dense math) pass when run as their own binaries.
TEST(Acceptance, C5_DenseOracleSuitesPass) {
  const Timer t0;
  const std::vector<std::string> suites{"test_tensor_train", "test_tensor_train_matrix",
                                        "test_features", "test_tnsrkf"};
  for (const auto& name : suites) {
    const std::string cmd =
        std::string("\"") + ACCEPTANCE_BIN_DIR + "/" + name + "\" > /dev/null 2>&1";
    EXPECT_EQ(std::system(cmd.c_str()), 0) << name;
  }
  EXPECT_LT(t0.wall_s(), 120.0);
  std::printf("    criterion 5: %zu suites  (cpu %.1fs, wall %.1fs)\n", suites.size(), t0.cpu_s(), t0.wall_s());
}

// Criterion 6: over 10 live steps, both ALS objectives, evaluated densely
// against the closed-form targets rebuilt from the pre-step state, never
// increase across core updates. Budget 1 keeps the factor at its base width
// at every step boundary so the dense target stays well defined.
TEST(Acceptance, C6_AlsObjectivesNonIncreasing) {
  const Timer t0;
  const auto cfg = se_config(3, 4);
  const auto prior = ttsrkf::se_prior(cfg);
  ttsrkf::SweepConfig sw;
  sw.max_sweeps = 2;
  sw.residual_tol = 0.0;
  sw.order = ttsrkf::SweepConfig::Order::Snake;
  auto s = ttsrkf::init_filter(prior, uniform_ranks(3, 4, 4), 1, 0.1, 99, sw);
  const auto st = sine_stream(3, 77, 10, 1.0);
  const std::vector<Index> col_sizes{4, 4, 4};
  const Index aug = s.sqrt_factor.aug_site;

  for (int t = 0; t < 10; ++t) {
    ASSERT_EQ(s.sqrt_factor.aug_multiplier, 1) << "step " << t;
    const auto phi = ttsrkf::hilbert_se_factors(st.x[t], cfg);
    const Vector pd = ttsrkf::dense_feature(phi);
    const double y = st.y[t];

    const Vector wd = oracles::tt_dense(s.mean);
    const Matrix ld = oracles::ttm_dense(s.sqrt_factor);
    const double innov = ttsrkf::innovation(s, phi);
    const Vector kd = oracles::tt_dense(ttsrkf::kalman_gain(s, phi, innov));
    const Vector mean_target = wd + (y - wd.dot(pd)) * kd;
    const Vector c_dense = ld.transpose() * pd;
    const Vector ktil = ld * c_dense;
    Matrix cov_target =
        layout::embed_base_columns(ld - ktil * c_dense.transpose() / innov, col_sizes, aug);
    cov_target.col(layout::noise_column_index(col_sizes, aug)) =
        std::sqrt(s.noise_var) * ktil / innov;

    std::vector<double> mean_obj, cov_obj;
    ttsrkf::SweepObserver obs;
    obs.on_mean_update = [&](Index, const ttsrkf::TensorTrain& x) {
      mean_obj.push_back((oracles::tt_dense(x) - mean_target).norm());
    };
    obs.on_cov_update = [&](Index, const ttsrkf::TensorTrainMatrix& x) {
      cov_obj.push_back((oracles::ttm_dense(x) - cov_target).norm());
    };
    const auto out = ttsrkf::step(s, phi, y, &obs);
    ASSERT_TRUE(out.ok) << "step " << t << ": " << out.message;
    ASSERT_GE(mean_obj.size(), 4u);
    ASSERT_GE(cov_obj.size(), 4u);
    for (std::size_t i = 1; i < mean_obj.size(); ++i)
      EXPECT_LE(mean_obj[i], mean_obj[i - 1] + 1e-10 * (1.0 + mean_obj[0]))
          << "step " << t << " mean update " << i;
    for (std::size_t i = 1; i < cov_obj.size(); ++i)
      EXPECT_LE(cov_obj[i], cov_obj[i - 1] + 1e-10 * (1.0 + cov_obj[0]))
          << "step " << t << " cov update " << i;
  }
  std::printf("    criterion 6: 10 steps, both objectives monotone  (cpu %.1fs, wall %.1fs)\n",
              t0.cpu_s(), t0.wall_s());
}

// Criterion 7: the initial state reproduces the prior densely for D = 1..5:
// the mean is exactly zero and L0 L0^T equals the Kronecker product of the
// per-dimension prior covariances to 1e-12.
TEST(Acceptance, C7_PriorReproducesDensely) {
  const Timer t0;
  for (Index dims = 1; dims <= 5; ++dims) {
    const auto cfg = se_config(dims, 3);
    const auto prior = ttsrkf::se_prior(cfg);
    const auto s = ttsrkf::init_filter(prior, uniform_ranks(dims, 2, 2), 1, 0.1, 7);

    EXPECT_EQ(oracles::tt_dense(s.mean).lpNorm<Eigen::Infinity>(), 0.0) << "dims " << dims;

    std::vector<Matrix> blocks;
    for (const auto& f : prior.sqrt_factors) blocks.push_back(f * f.transpose());
    const Matrix want = oracles::kron_all(blocks);
    const Matrix l0 = oracles::ttm_dense(s.sqrt_factor);
    EXPECT_LT(oracles::rel_err(l0 * l0.transpose(), want), 1e-12) << "dims " << dims;
  }
  std::printf("    criterion 7: dims 1..5  (cpu %.1fs, wall %.1fs)\n", t0.cpu_s(), t0.wall_s());
}

// Criterion 8: scale demonstrations. (a) D=7 Volterra (16384 weights) over a
// rank grid finishes with finite metrics and the rank-4 covariance settings
// end below their t=10 error; (b) a D=14 run (4^14 weights, never densified)
// with rank vector 1,4,10,...,10,4,1 completes at least 200 steps well inside
// 30 minutes.
TEST(Acceptance, C8_ScaleRuns) {
  const Timer t0;

  ttsrkf::ExperimentConfig base;
  base.feature.kind = ttsrkf::FeatureKind::Volterra;
  base.feature.dims = 7;
  base.feature.basis_count = 4;
  base.feature.regularization = 1.0;
  base.noise_var = 1e-4;
  base.data_kind = ttsrkf::DatasetKind::Volterra;
  base.n_train = 150;
  base.n_test = 50;
  base.snr_db = 60.0;
  base.true_rank = 2;
  base.eval_every = 10;
  base.seed = 7;
  base.timing = false;
  for (Index rw : {2, 4})
    for (Index rl : {2, 4}) {
      auto c = base;
      c.mean_ranks = {rw};
      c.cov_ranks = {rl};
      ttsrkf::validate_experiment(c);
      const auto res = ttsrkf::run_experiment(c);
      EXPECT_FALSE(res.diverged_at.has_value()) << "rw " << rw << " rl " << rl;
      double at10 = 0.0;
      for (const auto& row : res.metrics) {
        EXPECT_TRUE(std::isfinite(row.rmse) && std::isfinite(row.nll))
            << "rw " << rw << " rl " << rl << " t " << row.t;
        if (row.t == 10) at10 = row.rmse;
      }
      if (rl == 4) {
        EXPECT_LT(res.metrics.back().rmse, at10) << "rw " << rw << " rl " << rl;
        std::printf("    criterion 8a: rw %td rl %td  rmse %.4f -> %.4f\n", rw, rl, at10,
                    res.metrics.back().rmse);
      }
    }

  const std::filesystem::path dir = "acceptance_tmp";
  std::filesystem::create_directories(dir);
  const std::string csv = (dir / "tanks.csv").string();
  ttsrkf::save_tanks_csv(ttsrkf::simulate_cascaded_tanks(300, 1), csv);

  ttsrkf::ExperimentConfig tall;
  tall.feature.kind = ttsrkf::FeatureKind::LaggedIoSe;
  tall.feature.dims = 14;
  tall.feature.basis_count = 4;
  tall.feature.lengthscale = {1.0};
  tall.feature.signal_var = 1.0;
  tall.feature.domain_half_width = {2.0};
  tall.mean_ranks = tall.cov_ranks = {1, 4, 10, 10, 10, 10, 10, 10, 10, 10, 10, 10, 10, 4, 1};
  tall.qr_budget = 2;
  tall.noise_var = 0.05;
  tall.data_kind = ttsrkf::DatasetKind::Tanks;
  tall.data_path = csv;
  tall.n_train = 210;
  tall.n_test = 100;
  tall.eval_every = 50;
  tall.seed = 3;
  tall.timing = false;
  ttsrkf::validate_experiment(tall);
  const auto res = ttsrkf::run_experiment(tall);
  EXPECT_GE(res.steps_run, 200);
  EXPECT_FALSE(res.diverged_at.has_value());
  for (const auto& row : res.metrics)
    EXPECT_TRUE(std::isfinite(row.rmse) && std::isfinite(row.nll)) << "t " << row.t;
  EXPECT_LT(t0.cpu_s(), 1800.0);
  std::printf("    criterion 8b: %td steps at 4^14 weights  (cpu %.1fs, wall %.1fs)\n", res.steps_run,
              t0.cpu_s(), t0.wall_s());
}

// Criterion 9: metric closed forms to 1e-12: zero residual with unit variance
// gives RMSE 0 and NLL N/2 * log 2pi; a single point follows the scalar
// Gaussian log-density.
TEST(Acceptance, C9_MetricClosedForms) {
  const double two_pi = 2.0 * M_PI;
  std::vector<ttsrkf::GaussianPrediction> perfect;
  std::vector<double> targets;
  for (int i = 0; i < 5; ++i) {
    perfect.push_back({0.25 * i, 1.0});
    targets.push_back(0.25 * i);
  }
  const auto a = ttsrkf::compute_metrics(perfect, targets);
  EXPECT_NEAR(a.rmse, 0.0, 1e-12);
  EXPECT_NEAR(a.nll, 0.5 * 5.0 * std::log(two_pi), 1e-12);

  const auto b = ttsrkf::compute_metrics({{1.5, 2.0}}, {1.0});
  EXPECT_NEAR(b.rmse, 0.5, 1e-12);
  EXPECT_NEAR(b.nll, 0.5 * (std::log(two_pi * 2.0) + 0.25 / 2.0), 1e-12);
  std::printf("    criterion 9: closed forms match\n");
}

const char* criterion_title(int id) {
  switch (id) {
    case 1: return "full-rank filter matches the dense Kalman filter step for step";
    case 2: return "aggressive QR truncation drifts from the dense filter yet stays PSD";
    case 3: return "covariance stays PSD across seeded low-rank streams";
    case 4: return "recorded rounding-filter instability while the sqrt filter stays PSD";
    case 5: return "dense-oracle unit suites pass as standalone binaries";
    case 6: return "ALS objectives are non-increasing across core updates";
    case 7: return "zero prior mean and Kronecker prior covariance reproduce densely";
    case 8: return "high-dimensional runs complete with learning trends intact";
    case 9: return "metric computations match their closed forms";
    default: return "unknown";
  }
}

class CriterionPrinter : public ::testing::EmptyTestEventListener {
  void OnTestEnd(const ::testing::TestInfo& info) override {
    if (info.name()[0] != 'C') return;
    const int id = std::atoi(info.name() + 1);
    std::printf("[CRITERION %d] %s  %s\n", id, info.result()->Passed() ? "PASS" : "FAIL",
                criterion_title(id));
    std::fflush(stdout);
  }
};

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::UnitTest::GetInstance()->listeners().Append(new CriterionPrinter);
  return RUN_ALL_TESTS();
}
