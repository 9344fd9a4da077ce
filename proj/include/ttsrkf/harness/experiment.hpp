#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ttsrkf/filter/baselines.hpp"
#include "ttsrkf/filter/tnsrkf.hpp"
#include "ttsrkf/harness/dataset.hpp"

namespace ttsrkf {

enum class FilterChoice { Tnsrkf, Tnkf, DenseKf, DenseSrkf };
enum class DatasetKind { Gp, Volterra, Tanks };

/// One experiment manifest; mirrors the flat key = value config file format.
/// Rank entries hold either a single uniform value or a full bond vector of
/// length D+1 with unit boundaries.
struct ExperimentConfig {
  FeatureConfig feature;
  FilterChoice filter = FilterChoice::Tnsrkf;
  std::vector<Index> mean_ranks{4};
  std::vector<Index> cov_ranks{4};
  Index qr_budget = 0;  // <= 0 selects the exact recommended budget
  double noise_var = 0.1;
  SweepConfig sweep;

  DatasetKind data_kind = DatasetKind::Gp;
  Index n_train = 100;
  Index n_test = 100;
  double half_width = 1.0;     // gp input cuboid
  double data_noise_var = -1;  // gp generation noise; < 0 reuses noise_var
  double snr_db = 60.0;        // volterra
  Index true_rank = 2;         // volterra ground-truth TT-rank
  std::string data_path;       // tanks CSV

  Index eval_every = 10;
  std::uint64_t seed = 0;
  bool timing = true;          // off writes wall_ms = 0 for byte-stable reruns
  bool trace_min_eig = false;  // dense covariance eigenvalue per metrics row

  std::string out_metrics = "metrics.csv";
  std::string out_predictions = "predictions.csv";
  std::string out_plot;  // empty: no plot
};

struct MetricsRow {
  Index t = 0;
  double rmse = 0.0;
  double nll = 0.0;
  double wall_ms = 0.0;
  std::optional<double> min_eig;
};

struct ExperimentResult {
  std::vector<MetricsRow> metrics;
  std::vector<GaussianPrediction> final_predictions;
  std::vector<double> test_targets;
  std::optional<Index> diverged_at;
  Index steps_run = 0;
};

// ---------------------------------------------------------------------------
// config parsing

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return x;
}

inline Index parse_index(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return static_cast<Index>(x);
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected on/off, got '" + v + "'");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& v, Parse parse) {
  std::vector<T> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    const auto comma = v.find(',', pos);
    const auto piece = trim(v.substr(pos, comma == std::string::npos ? comma : comma - pos));
    if (piece.empty()) throw ConfigError("config key '" + key + "': empty list entry");
    out.push_back(parse(key, piece));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace detail

/// Applies one key = value setting; unknown keys and malformed values raise
/// ConfigError. The same dispatcher backs config files and CLI overrides.
inline void set_config_key(ExperimentConfig& cfg, const std::string& key,
                           const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_index;
  using detail::parse_list;
  using detail::parse_u64;

  if (key == "filter") {
    if (value == "tnsrkf") cfg.filter = FilterChoice::Tnsrkf;
    else if (value == "tnkf") cfg.filter = FilterChoice::Tnkf;
    else if (value == "dense_kf") cfg.filter = FilterChoice::DenseKf;
    else if (value == "dense_srkf") cfg.filter = FilterChoice::DenseSrkf;
    else throw ConfigError("config key 'filter': unknown filter '" + value + "'");
  } else if (key == "feature.kind") {
    if (value == "hilbert_se") cfg.feature.kind = FeatureKind::HilbertSe;
    else if (value == "volterra") cfg.feature.kind = FeatureKind::Volterra;
    else if (value == "lagged_io_se") cfg.feature.kind = FeatureKind::LaggedIoSe;
    else throw ConfigError("config key 'feature.kind': unknown kind '" + value + "'");
  } else if (key == "feature.dims") {
    cfg.feature.dims = parse_index(key, value);
  } else if (key == "feature.basis") {
    cfg.feature.basis_count = parse_index(key, value);
  } else if (key == "feature.lengthscale") {
    cfg.feature.lengthscale = parse_list<double>(key, value, parse_double);
  } else if (key == "feature.signal_var") {
    cfg.feature.signal_var = parse_double(key, value);
  } else if (key == "feature.domain") {
    cfg.feature.domain_half_width = parse_list<double>(key, value, parse_double);
  } else if (key == "feature.regularization") {
    cfg.feature.regularization = parse_double(key, value);
  } else if (key == "lags.inputs") {
    cfg.feature.lags.input_lags = parse_list<Index>(key, value, parse_index);
  } else if (key == "lags.outputs") {
    cfg.feature.lags.output_lags = parse_list<Index>(key, value, parse_index);
  } else if (key == "lags.margin") {
    cfg.feature.lags.margin = parse_double(key, value);
  } else if (key == "rank.mean") {
    cfg.mean_ranks = parse_list<Index>(key, value, parse_index);
  } else if (key == "rank.cov") {
    cfg.cov_ranks = parse_list<Index>(key, value, parse_index);
  } else if (key == "qr_budget") {
    cfg.qr_budget = parse_index(key, value);
  } else if (key == "noise_var") {
    cfg.noise_var = parse_double(key, value);
  } else if (key == "sweeps.max") {
    cfg.sweep.max_sweeps = parse_index(key, value);
  } else if (key == "sweeps.order") {
    if (value == "left_to_right") cfg.sweep.order = SweepConfig::Order::LeftToRight;
    else if (value == "snake") cfg.sweep.order = SweepConfig::Order::Snake;
    else throw ConfigError("config key 'sweeps.order': unknown order '" + value + "'");
  } else if (key == "sweeps.tol") {
    cfg.sweep.residual_tol = parse_double(key, value);
  } else if (key == "data.kind") {
    if (value == "gp") cfg.data_kind = DatasetKind::Gp;
    else if (value == "volterra") cfg.data_kind = DatasetKind::Volterra;
    else if (value == "tanks") cfg.data_kind = DatasetKind::Tanks;
    else throw ConfigError("config key 'data.kind': unknown kind '" + value + "'");
  } else if (key == "data.train") {
    cfg.n_train = parse_index(key, value);
  } else if (key == "data.test") {
    cfg.n_test = parse_index(key, value);
  } else if (key == "data.half_width") {
    cfg.half_width = parse_double(key, value);
  } else if (key == "data.noise_var") {
    cfg.data_noise_var = parse_double(key, value);
  } else if (key == "data.snr_db") {
    cfg.snr_db = parse_double(key, value);
  } else if (key == "data.rank") {
    cfg.true_rank = parse_index(key, value);
  } else if (key == "data.path") {
    cfg.data_path = value;
  } else if (key == "eval_every") {
    cfg.eval_every = parse_index(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "timing") {
    cfg.timing = parse_bool(key, value);
  } else if (key == "trace.min_eig") {
    cfg.trace_min_eig = parse_bool(key, value);
  } else if (key == "out.metrics") {
    cfg.out_metrics = value;
  } else if (key == "out.predictions") {
    cfg.out_predictions = value;
  } else if (key == "out.plot") {
    cfg.out_plot = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

/// Applies a "key=value" override string (the --set form).
inline void apply_config_override(ExperimentConfig& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + kv + "': expected key=value");
  set_config_key(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
}

/// Flat key = value lines; '#' starts a comment line, blank lines are skipped.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig cfg = {}) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(n) + ": expected key = value, got '" + t +
                        "'");
    set_config_key(cfg, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_config: cannot open '" + path + "'");
  try {
    return parse_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Expands a rank entry to a bond vector: single value broadcasts uniformly,
/// otherwise the vector must have length D+1 with unit boundaries.
inline std::vector<Index> expand_ranks(const std::vector<Index>& spec, Index dims,
                                       const std::string& what) {
  if (spec.empty()) throw ConfigError(what + ": empty rank list");
  if (spec.size() == 1) {
    if (spec[0] < 1) throw ConfigError(what + ": rank must be >= 1");
    return FilterRanks::uniform(dims, spec[0]);
  }
  if (static_cast<Index>(spec.size()) != dims + 1)
    throw ConfigError(what + ": bond vector needs D+1 entries");
  if (spec.front() != 1 || spec.back() != 1)
    throw ConfigError(what + ": boundary ranks must be 1");
  for (Index r : spec)
    if (r < 1) throw ConfigError(what + ": rank must be >= 1");
  return spec;
}

// ---------------------------------------------------------------------------
// metrics

/// RMSE over the test residuals and the Gaussian negative log-likelihood
/// 0.5 * sum[ log(2 pi s2) + r^2 / s2 ]. A zero predictive variance yields an
/// infinite NLL instead of a crash.
inline MetricsRow compute_metrics(const std::vector<GaussianPrediction>& pred,
                                  const std::vector<double>& targets) {
  if (pred.size() != targets.size())
    throw std::invalid_argument("compute_metrics: length mismatch");
  if (pred.empty()) throw std::invalid_argument("compute_metrics: empty test set");
  constexpr double two_pi = 6.283185307179586476925286766559;
  MetricsRow row;
  double se = 0.0, nll = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i].mean - targets[i];
    const double s2 = pred[i].variance;
    se += r * r;
    if (s2 > 0)
      nll += std::log(two_pi * s2) + r * r / s2;
    else
      nll += r * r > 0 ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
  }
  row.rmse = std::sqrt(se / static_cast<double>(pred.size()));
  row.nll = 0.5 * nll;
  return row;
}

// ---------------------------------------------------------------------------
// streaming runner

inline void validate_experiment(const ExperimentConfig& cfg) {
  try {
    cfg.feature.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (!(cfg.noise_var > 0)) throw ConfigError("noise_var must be > 0");
  if (cfg.n_train < 0 || cfg.n_test < 0) throw ConfigError("data.train/data.test must be >= 0");
  expand_ranks(cfg.mean_ranks, cfg.feature.dims, "rank.mean");
  expand_ranks(cfg.cov_ranks, cfg.feature.dims, "rank.cov");

  switch (cfg.data_kind) {
    case DatasetKind::Gp:
      if (cfg.feature.kind == FeatureKind::Volterra)
        throw ConfigError("data.kind gp needs a Hilbert-basis feature.kind");
      break;
    case DatasetKind::Volterra:
      if (cfg.feature.kind != FeatureKind::Volterra)
        throw ConfigError("data.kind volterra needs feature.kind volterra");
      break;
    case DatasetKind::Tanks:
      if (cfg.feature.kind == FeatureKind::Volterra)
        throw ConfigError("data.kind tanks needs a Hilbert-basis feature.kind");
      if (cfg.data_path.empty()) throw ConfigError("data.kind tanks needs data.path");
      if (cfg.feature.dims != cfg.feature.lags.dims())
        throw ConfigError("feature.dims must match the lag embedding dimension");
      break;
  }

  const bool dense_needed = cfg.filter == FilterChoice::DenseKf ||
                            cfg.filter == FilterChoice::DenseSrkf || cfg.trace_min_eig;
  if (dense_needed) {
    Index m = 1;
    for (Index d = 0; d < cfg.feature.dims; ++d) m = detail::sat_mul(m, cfg.feature.basis_count);
    if (detail::sat_mul(m, m) > dense_entry_cap())
      throw ConfigError("dense covariance of size " + std::to_string(m) +
                        "^2 exceeds the dense entry cap (set TTSRKF_DENSE_CAP to raise it)");
  }
}

inline Dataset build_dataset(const ExperimentConfig& cfg) {
  switch (cfg.data_kind) {
    case DatasetKind::Gp: {
      const double gen_noise = cfg.data_noise_var >= 0 ? cfg.data_noise_var : cfg.noise_var;
      return gen_synthetic_gp(cfg.feature, cfg.n_train, cfg.n_test, cfg.half_width, gen_noise,
                              cfg.seed);
    }
    case DatasetKind::Volterra:
      return gen_volterra(cfg.feature, cfg.n_train, cfg.n_test, cfg.true_rank, cfg.snr_db,
                          cfg.seed);
    case DatasetKind::Tanks: {
      Dataset ds = load_cascaded_tanks(cfg.data_path, cfg.feature.lags, cfg.feature.l_dom(0));
      const auto clip = [](std::vector<Vector>& xs, std::vector<double>& ys,
                           std::vector<double>& fs, Index n) {
        if (n > 0 && n < static_cast<Index>(xs.size())) {
          xs.resize(static_cast<std::size_t>(n));
          ys.resize(static_cast<std::size_t>(n));
          fs.resize(static_cast<std::size_t>(n));
        }
      };
      clip(ds.train_x, ds.train_y, ds.train_f, cfg.n_train);
      clip(ds.test_x, ds.test_y, ds.test_f, cfg.n_test);
      return ds;
    }
  }
  throw ConfigError("unknown data.kind");
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  validate_experiment(cfg);
  const Dataset ds = build_dataset(cfg);
  const PriorSpec prior = make_prior(cfg.feature);
  const FilterRanks ranks{expand_ranks(cfg.mean_ranks, cfg.feature.dims, "rank.mean"),
                          expand_ranks(cfg.cov_ranks, cfg.feature.dims, "rank.cov")};

  std::optional<FilterState> tn;
  std::optional<TnkfState> tk;
  std::optional<DenseFilterState> dn;
  const bool sqrt_form = cfg.filter == FilterChoice::DenseSrkf;
  switch (cfg.filter) {
    case FilterChoice::Tnsrkf:
      tn = init_filter(prior, ranks, cfg.qr_budget, cfg.noise_var, cfg.seed, cfg.sweep);
      break;
    case FilterChoice::Tnkf: {
      TnkfRounding rounding;
      rounding.mean_max_ranks = ranks.mean;
      rounding.cov_max_ranks = ranks.cov;
      tk = tnkf_init(prior, rounding, cfg.noise_var);
      break;
    }
    default:
      dn = dense_init(prior, cfg.noise_var, sqrt_form);
      break;
  }

  std::vector<Rank1FeatureTT> test_phi;
  std::vector<Vector> test_phi_dense;
  test_phi.reserve(ds.test_x.size());
  for (const auto& x : ds.test_x) {
    test_phi.push_back(make_features(x, cfg.feature));
    if (dn) test_phi_dense.push_back(dense_feature(test_phi.back()));
  }

  const auto evaluate = [&]() {
    std::vector<GaussianPrediction> pred;
    pred.reserve(test_phi.size());
    for (std::size_t i = 0; i < test_phi.size(); ++i) {
      if (tn) pred.push_back(predict(*tn, test_phi[i]));
      else if (tk) pred.push_back(tnkf_predict(*tk, test_phi[i]));
      else pred.push_back(dense_predict(*dn, test_phi_dense[i], sqrt_form));
    }
    return pred;
  };
  const auto covariance_min_eig = [&]() {
    Matrix p;
    if (tn) {
      const Matrix l = ttm_to_dense(tn->sqrt_factor);
      p = l * l.transpose();
    } else if (tk) {
      p = ttm_to_dense(tk->cov);
    } else {
      p = sqrt_form ? Matrix(dn->factor * dn->factor.transpose()) : dn->factor;
    }
    return Eigen::SelfAdjointEigenSolver<Matrix>(p, Eigen::EigenvaluesOnly)
        .eigenvalues()
        .minCoeff();
  };

  ExperimentResult res;
  res.test_targets = ds.test_y;
  const Index n = static_cast<Index>(ds.train_x.size());
  double wall_ms = 0.0;

  const auto record = [&](Index t) {
    if (test_phi.empty()) return;
    res.final_predictions = evaluate();
    MetricsRow row = compute_metrics(res.final_predictions, ds.test_y);
    row.t = t;
    row.wall_ms = cfg.timing ? wall_ms : 0.0;
    if (cfg.trace_min_eig) row.min_eig = covariance_min_eig();
    res.metrics.push_back(row);
  };

  for (Index t = 1; t <= n; ++t) {
    const auto& x = ds.train_x[static_cast<std::size_t>(t - 1)];
    const double y = ds.train_y[static_cast<std::size_t>(t - 1)];
    // a non-finite sample is a stream failure, not a config error
    if (!x.allFinite() || !std::isfinite(y)) {
      res.diverged_at = t;
      record(t);
      return res;
    }
    const Rank1FeatureTT phi = make_features(x, cfg.feature);

    bool ok = true;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (tn) ok = step(*tn, phi, y).ok;
      else if (tk) tnkf_step(*tk, phi, y);
      else if (sqrt_form) dense_srkf_step(*dn, dense_feature(phi), y);
      else dense_kf_step(*dn, dense_feature(phi), y);
    } catch (const NumericalFailure&) {
      ok = false;
    }
    wall_ms += 1e-3 * static_cast<double>(std::chrono::duration_cast<std::chrono::microseconds>(
                                              std::chrono::steady_clock::now() - t0)
                                              .count());

    if (!ok) {
      // the step left the state at its last good value; record it and stop
      res.diverged_at = t;
      record(t);
      return res;
    }
    res.steps_run = t;
    if (t % cfg.eval_every == 0 || t == n) record(t);
  }
  return res;
}

// ---------------------------------------------------------------------------
// output emission

struct OutputPaths {
  std::string metrics, predictions, plot;
};

namespace detail {

inline std::string resolve_out(const std::string& file, const std::string& out_dir) {
  if (file.empty()) return file;
  std::filesystem::path p(file);
  if (!out_dir.empty() && p.is_relative()) p = std::filesystem::path(out_dir) / p;
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec)
      throw IoError("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
  }
  return p.string();
}

/// Minimal static SVG: RMSE and NLL polylines over the step axis, one panel
/// each; non-finite values are dropped from the polylines.
inline void write_metrics_svg(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write plot '" + path + "'");
  const double w = 720, h = 560, ml = 70, mr = 20, mt = 30, panel = 220, gap = 60;
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  double tmin = 0, tmax = 1;
  if (!rows.empty()) {
    tmin = static_cast<double>(rows.front().t);
    tmax = static_cast<double>(rows.back().t);
    if (tmax <= tmin) tmax = tmin + 1;
  }
  const auto draw_panel = [&](double top, const char* name, auto value, const char* color) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : rows) {
      const double v = value(r);
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (!(lo <= hi)) {
      lo = 0;
      hi = 1;
    }
    if (hi <= lo) hi = lo + 1;
    out << "<rect x='" << ml << "' y='" << top << "' width='" << (w - ml - mr) << "' height='"
        << panel << "' fill='none' stroke='black'/>\n";
    out << "<text x='" << ml << "' y='" << top - 8 << "' font-size='14'>" << name << "</text>\n";
    out << "<text x='8' y='" << top + 12 << "' font-size='11'>" << fmt_g17(hi) << "</text>\n";
    out << "<text x='8' y='" << top + panel << "' font-size='11'>" << fmt_g17(lo) << "</text>\n";
    out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (const auto& r : rows) {
      const double v = value(r);
      if (!std::isfinite(v)) continue;
      const double px = ml + (static_cast<double>(r.t) - tmin) / (tmax - tmin) * (w - ml - mr);
      const double py = top + panel - (v - lo) / (hi - lo) * panel;
      out << px << ',' << py << ' ';
    }
    out << "'/>\n";
  };
  draw_panel(mt, "rmse", [](const MetricsRow& r) { return r.rmse; }, "steelblue");
  draw_panel(mt + panel + gap, "nll", [](const MetricsRow& r) { return r.nll; }, "firebrick");
  out << "<text x='" << (w / 2 - 10) << "' y='" << (h - 10) << "' font-size='12'>t</text>\n";
  out << "</svg>\n";
  if (!out) throw IoError("write to plot '" + path + "' failed");
}

}  // namespace detail

/// Writes the metrics CSV `t,rmse,nll,wall_ms[,min_eig][,diverged_at]`, the
/// predictions CSV `index,mean,variance,y_true`, and (when configured) the
/// metrics plot. Relative paths land under out_dir.
inline OutputPaths emit_outputs(const ExperimentResult& res, const ExperimentConfig& cfg,
                                const std::string& out_dir = "") {
  OutputPaths paths;
  paths.metrics = detail::resolve_out(cfg.out_metrics, out_dir);
  paths.predictions = detail::resolve_out(cfg.out_predictions, out_dir);
  paths.plot = detail::resolve_out(cfg.out_plot, out_dir);

  {
    std::ofstream out(paths.metrics);
    if (!out) throw IoError("cannot write metrics '" + paths.metrics + "'");
    out << "t,rmse,nll,wall_ms";
    if (cfg.trace_min_eig) out << ",min_eig";
    if (res.diverged_at) out << ",diverged_at";
    out << '\n';
    for (std::size_t i = 0; i < res.metrics.size(); ++i) {
      const auto& r = res.metrics[i];
      out << r.t << ',' << fmt_g17(r.rmse) << ',' << fmt_g17(r.nll) << ',' << fmt_g17(r.wall_ms);
      if (cfg.trace_min_eig) out << ',' << (r.min_eig ? fmt_g17(*r.min_eig) : std::string());
      if (res.diverged_at)
        out << ',' << (i + 1 == res.metrics.size() ? std::to_string(*res.diverged_at) : std::string());
      out << '\n';
    }
    if (!out) throw IoError("write to metrics '" + paths.metrics + "' failed");
  }
  {
    std::ofstream out(paths.predictions);
    if (!out) throw IoError("cannot write predictions '" + paths.predictions + "'");
    out << "index,mean,variance,y_true\n";
    for (std::size_t i = 0; i < res.final_predictions.size(); ++i)
      out << i << ',' << fmt_g17(res.final_predictions[i].mean) << ','
          << fmt_g17(res.final_predictions[i].variance) << ',' << fmt_g17(res.test_targets[i])
          << '\n';
    if (!out) throw IoError("write to predictions '" + paths.predictions + "' failed");
  }
  if (!paths.plot.empty()) detail::write_metrics_svg(res.metrics, paths.plot);
  return paths;
}

}  // namespace ttsrkf
