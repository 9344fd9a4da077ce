// Experiment CLI: runs config manifests, joins metric files, and generates
// datasets. Exit codes: 0 success, 2 config error, 3 IO error, 4 divergence
// (with --fail-on-divergence).
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "ttsrkf/harness/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;

ttsrkf::ExperimentConfig load_with_overrides(const std::string& path,
                                             const std::vector<std::string>& sets) {
  auto cfg = ttsrkf::load_config(path);
  for (const auto& kv : sets) ttsrkf::apply_config_override(cfg, kv);
  return cfg;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& sets,
            const std::string& out_dir, bool fail_on_divergence) {
  const auto cfg = load_with_overrides(config_path, sets);
  const auto res = ttsrkf::run_experiment(cfg);
  const auto paths = ttsrkf::emit_outputs(res, cfg, out_dir);
  std::cout << "steps " << res.steps_run;
  if (!res.metrics.empty())
    std::cout << "  rmse " << res.metrics.back().rmse << "  nll " << res.metrics.back().nll;
  if (res.diverged_at) std::cout << "  diverged_at " << *res.diverged_at;
  std::cout << "\nmetrics " << paths.metrics << "\npredictions " << paths.predictions << '\n';
  if (!paths.plot.empty()) std::cout << "plot " << paths.plot << '\n';
  if (res.diverged_at && fail_on_divergence) return kExitDiverged;
  return 0;
}

int cmd_compare(const std::string& configs_csv, const std::vector<std::string>& sets,
                const std::string& out_dir) {
  std::vector<std::string> paths;
  std::size_t pos = 0;
  while (pos <= configs_csv.size()) {
    const auto comma = configs_csv.find(',', pos);
    const auto piece = configs_csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (!piece.empty()) paths.push_back(piece);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (paths.size() < 2) throw ttsrkf::ConfigError("compare: need at least two configs");

  std::vector<std::string> names;
  std::vector<std::map<ttsrkf::Index, ttsrkf::MetricsRow>> runs;
  std::map<ttsrkf::Index, int> steps;  // union of eval steps
  for (const auto& p : paths) {
    const auto cfg = load_with_overrides(p, sets);
    const auto res = ttsrkf::run_experiment(cfg);
    names.push_back(std::filesystem::path(p).stem().string());
    runs.emplace_back();
    for (const auto& row : res.metrics) {
      runs.back()[row.t] = row;
      ++steps[row.t];
    }
  }

  const auto out_path =
      (out_dir.empty() ? std::filesystem::path("compare.csv")
                       : std::filesystem::path(out_dir) / "compare.csv");
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  std::ofstream out(out_path);
  if (!out) throw ttsrkf::IoError("compare: cannot write '" + out_path.string() + "'");
  out << 't';
  for (const auto& n : names) out << ",rmse_" << n << ",nll_" << n;
  out << '\n';
  for (const auto& [t, count] : steps) {
    out << t;
    for (const auto& run : runs) {
      const auto it = run.find(t);
      if (it == run.end()) out << ",,";
      else out << ',' << ttsrkf::fmt_g17(it->second.rmse) << ',' << ttsrkf::fmt_g17(it->second.nll);
    }
    out << '\n';
  }
  std::cout << "compare " << out_path.string() << '\n';
  return 0;
}

int cmd_gen(const std::string& kind, const std::string& config_path,
            const std::vector<std::string>& sets, const std::string& out_file, ttsrkf::Index rows,
            std::uint64_t seed) {
  const std::filesystem::path out_path(out_file);
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  if (kind == "tanks") {
    ttsrkf::save_tanks_csv(ttsrkf::simulate_cascaded_tanks(rows, seed), out_file);
    std::cout << "dataset " << out_file << '\n';
    return 0;
  }
  if (config_path.empty()) throw ttsrkf::ConfigError("gen: --config required for gp/volterra");
  const auto cfg = load_with_overrides(config_path, sets);
  ttsrkf::Dataset ds;
  if (kind == "gp") {
    const double noise = cfg.data_noise_var >= 0 ? cfg.data_noise_var : cfg.noise_var;
    ds = ttsrkf::gen_synthetic_gp(cfg.feature, cfg.n_train, cfg.n_test, cfg.half_width, noise,
                                  cfg.seed);
  } else if (kind == "volterra") {
    ds = ttsrkf::gen_volterra(cfg.feature, cfg.n_train, cfg.n_test, cfg.true_rank, cfg.snr_db,
                              cfg.seed);
  } else {
    throw ttsrkf::ConfigError("gen: unknown kind '" + kind + "'");
  }

  std::ofstream out(out_file);
  if (!out) throw ttsrkf::IoError("gen: cannot write '" + out_file + "'");
  const ttsrkf::Index k = ds.train_x.empty()
                              ? (ds.test_x.empty() ? 0 : ds.test_x[0].size())
                              : ds.train_x[0].size();
  out << "set,y,f";
  for (ttsrkf::Index i = 0; i < k; ++i) out << ",x" << i + 1;
  out << '\n';
  const auto emit = [&](const char* tag, const std::vector<Eigen::VectorXd>& xs,
                        const std::vector<double>& ys, const std::vector<double>& fs) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      out << tag << ',' << ttsrkf::fmt_g17(ys[i]) << ',' << ttsrkf::fmt_g17(fs[i]);
      for (ttsrkf::Index d = 0; d < xs[i].size(); ++d) out << ',' << ttsrkf::fmt_g17(xs[i](d));
      out << '\n';
    }
  };
  emit("train", ds.train_x, ds.train_y, ds.train_f);
  emit("test", ds.test_x, ds.test_y, ds.test_f);
  if (!out) throw ttsrkf::IoError("gen: write to '" + out_file + "' failed");
  std::cout << "dataset " << out_file << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tensor-train square-root Kalman filtering experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, configs_csv, kind, out_file;
  std::vector<std::string> sets;
  bool fail_on_divergence = false;
  ttsrkf::Index rows = 1024;
  std::uint64_t seed = 1;

  auto* run = app.add_subcommand("run", "run one experiment manifest");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--set", sets, "override key=value (repeatable)");
  run->add_option("--out", out_dir, "directory for relative output paths");
  run->add_flag("--fail-on-divergence", fail_on_divergence,
                "exit 4 when the filter diverges");

  auto* compare = app.add_subcommand("compare", "run several manifests and join their metrics");
  compare->add_option("--configs", configs_csv, "comma-separated config files")->required();
  compare->add_option("--set", sets, "override applied to every config (repeatable)");
  compare->add_option("--out", out_dir, "directory for compare.csv");

  auto* gen = app.add_subcommand("gen", "write a dataset CSV");
  gen->add_option("--kind", kind, "gp, volterra, or tanks")->required();
  gen->add_option("--config", config_path, "experiment config supplying feature/data keys");
  gen->add_option("--set", sets, "override key=value (repeatable)");
  gen->add_option("--out", out_file, "output CSV path")->required();
  gen->add_option("--rows", rows, "rows per tanks series");
  gen->add_option("--seed", seed, "tanks simulation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, sets, out_dir, fail_on_divergence);
    if (compare->parsed()) return cmd_compare(configs_csv, sets, out_dir);
    return cmd_gen(kind, config_path, sets, out_file, rows, seed);
  } catch (const ttsrkf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ttsrkf::ResourceLimit& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ttsrkf::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
