#include "dgossip/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include "dgossip/config.hpp"
#include "dgossip/errors.hpp"
#include "dgossip/stability.hpp"
#include "dgossip/topology.hpp"

namespace dgossip {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSeedEnv = "DGOSSIP_SEED";

struct RunManifest {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::string workers = "1";
  bool force = false;
};

void add_manifest_options(CLI::App& cmd, RunManifest& m) {
  cmd.add_option("--config", m.config_path, "Experiment config file (TOML-style sections)");
  cmd.add_option("--out", m.out_dir, "Output directory")->required();
  cmd.add_option("--set", m.overrides, "Override a config value, KEY=VALUE (repeatable)");
  cmd.add_option("--workers", m.workers, "Worker threads for client training, N or auto");
  cmd.add_flag("--force", m.force, "Overwrite existing outputs");
}

std::size_t resolve_workers(const std::string& spec) {
  if (spec == "auto") return std::max(1u, std::thread::hardware_concurrency());
  std::size_t n = 0;
  auto [ptr, ec] = std::from_chars(spec.data(), spec.data() + spec.size(), n);
  if (ec != std::errc() || ptr != spec.data() + spec.size() || n == 0)
    throw ConfigError(fmt::format("--workers expects a positive integer or 'auto', got '{}'", spec));
  return n;
}

/// File values, then DGOSSIP_SEED, then --set overrides.
FlatConfig manifest_flat_config(const RunManifest& m) {
  FlatConfig flat = m.config_path.empty() ? FlatConfig{} : read_config_file(m.config_path);
  if (const char* env = std::getenv(kSeedEnv); env != nullptr && *env != '\0') flat["seed"] = env;
  for (const auto& o : m.overrides) apply_override(flat, o);
  return flat;
}

ExperimentConfig validated(const FlatConfig& flat) {
  ExperimentConfig cfg = config_from_flat(flat);
  cfg.validate();
  return cfg;
}

void prepare_output(const fs::path& dir, const fs::path& guarded_file, bool force) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
  if (fs::exists(guarded_file) && !force)
    throw IoError(fmt::format("'{}' already exists (use --force to overwrite)", guarded_file.string()));
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

nlohmann::json real_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

nlohmann::json record_json(const RoundRecord& r) {
  return {{"t", r.t},
          {"train_loss", real_or_null(r.train_loss)},
          {"test_acc", real_or_null(r.test_acc)},
          {"grad_norm_sq", real_or_null(r.grad_norm_sq)},
          {"consensus", real_or_null(r.consensus)},
          {"delta_t", real_or_null(r.delta_t)},
          {"v1", real_or_null(r.v1)},
          {"v2", real_or_null(r.v2)},
          {"lr", real_or_null(r.lr)}};
}

nlohmann::json summary_json(const ExperimentConfig& cfg, const RunSummary& s) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& hit : s.targets)
    targets.push_back({{"target", hit.target},
                       {"round", hit.round ? nlohmann::json(*hit.round) : nlohmann::json(nullptr)}});
  return {{"config", config_to_json(cfg)},
          {"best_acc", real_or_null(s.best_acc)},
          {"rounds_to_targets", targets},
          {"initial", record_json(s.initial)},
          {"final", s.series.empty() ? nlohmann::json(nullptr) : record_json(s.series.back())},
          {"wall_time_seconds", s.wall_time_seconds}};
}

/// Runs one experiment into `dir` and writes metrics.csv and summary.json.
RunSummary execute_run(const ExperimentConfig& cfg, const fs::path& dir, std::size_t workers, bool force) {
  const fs::path summary_path = dir / "summary.json";
  prepare_output(dir, summary_path, force);
  RunSummary summary = run_experiment(cfg, RunOptions{workers});
  write_metrics_csv(dir / "metrics.csv", summary.series);
  auto out = open_output(summary_path);
  out << summary_json(cfg, summary).dump(2) << '\n';
  return summary;
}

int cmd_run(const RunManifest& m, std::ostream& out) {
  const ExperimentConfig cfg = validated(manifest_flat_config(m));
  const std::size_t workers = resolve_workers(m.workers);
  const RunSummary s = execute_run(cfg, m.out_dir, workers, m.force);
  const std::string best = std::isnan(s.best_acc) ? "n/a" : format_real(s.best_acc);
  fmt::print(out, "{} rounds, best_acc={}, wrote {}\n", cfg.rounds, best, m.out_dir);
  return exit_code::kOk;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::string cur;
  for (char ch : text) {
    if (ch == ',') {
      items.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  if (!cur.empty() || !items.empty()) items.push_back(cur);
  items.erase(std::remove(items.begin(), items.end(), std::string{}), items.end());
  return items;
}

std::string cell_directory(const std::string& axis, const std::string& value) {
  std::string name = axis + "=" + value;
  std::replace_if(name.begin(), name.end(), [](char c) { return c == '/' || c == '\\' || c == '"'; }, '_');
  return name;
}

int cmd_sweep(const RunManifest& m, const std::string& axis, const std::string& values_text, std::ostream& out,
              std::ostream& err) {
  const std::vector<std::string> values = split_list(values_text);
  if (values.empty()) throw ConfigError("empty sweep: --values lists no entries");
  if (!is_config_key(axis)) throw ConfigError(fmt::format("sweep axis '{}' is not a config key", axis));
  const FlatConfig base = manifest_flat_config(m);
  const std::size_t workers = resolve_workers(m.workers);

  // Every cell is validated before any cell runs.
  std::vector<ExperimentConfig> cells;
  for (const auto& v : values) {
    FlatConfig flat = base;
    apply_override(flat, axis + "=" + v);
    cells.push_back(validated(flat));
  }

  const fs::path root(m.out_dir);
  prepare_output(root, root / "sweep.csv", m.force);
  std::string table = "value,best_acc,rounds_to_first_target,final_delta_t,status\n";
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& cfg = cells[c];
    std::string best, first_target, delta, status = "ok";
    try {
      const RunSummary s = execute_run(cfg, root / cell_directory(axis, values[c]), workers, m.force);
      best = format_real(s.best_acc);
      if (!s.targets.empty())
        first_target = s.targets.front().round ? std::to_string(*s.targets.front().round)
                                                : fmt::format(">{}", cfg.rounds);
      delta = s.series.empty() ? std::string{} : format_real(s.series.back().delta_t);
    } catch (const DivergenceError& e) {
      status = "diverged";
      fmt::print(err, "sweep cell {}={}: {}\n", axis, values[c], e.what());
    }
    table += fmt::format("{},{},{},{},{}\n", values[c], best, first_target, delta, status);
  }
  auto file = open_output(root / "sweep.csv");
  file << table;
  fmt::print(out, "{} sweep cells written to {}\n", cells.size(), m.out_dir);
  return exit_code::kOk;
}

int cmd_topo_report(const std::string& kinds_text, const std::string& sizes_text, std::size_t k, std::uint64_t seed,
                    const std::string& out_dir, std::ostream& out) {
  std::vector<TopologySpec> specs;
  const auto kinds = split_list(kinds_text);
  const auto sizes = split_list(sizes_text);
  if (kinds.empty() || sizes.empty()) throw ConfigError("topo-report needs at least one kind and one m");
  for (const auto& kind_name : kinds) {
    const TopologyKind kind = parse_topology_kind(kind_name);
    for (const auto& size_text : sizes) {
      std::size_t m = 0;
      auto [ptr, ec] = std::from_chars(size_text.data(), size_text.data() + size_text.size(), m);
      if (ec != std::errc() || ptr != size_text.data() + size_text.size())
        throw ConfigError(fmt::format("--m expects integers, got '{}'", size_text));
      TopologySpec spec{kind, m, k, seed};
      spec.validate();
      specs.push_back(spec);
    }
  }

  std::string table = "kind,m,psi,beta_theory_bound,asymptotic_psi\n";
  for (const auto& spec : specs) {
    const MixingMatrix w = build_mixing(spec);
    table += fmt::format("{},{},{},{},{}\n", to_string(spec.kind), spec.m, format_real(w.psi()),
                         format_real(beta_theory_bound(w.psi())), asymptotic_psi_formula(spec.kind));
  }
  out << table;
  if (!out_dir.empty()) {
    prepare_output(out_dir, fs::path(out_dir) / "topo_report.csv", true);
    auto file = open_output(fs::path(out_dir) / "topo_report.csv");
    file << table;
  }
  return exit_code::kOk;
}

int cmd_stability(const RunManifest& m, std::size_t client, std::size_t sample, long long replacement_row,
                  bool identical, std::ostream& out) {
  const ExperimentConfig cfg = validated(manifest_flat_config(m));
  const std::size_t workers = resolve_workers(m.workers);
  const fs::path dir(m.out_dir);
  prepare_output(dir, dir / "stability.csv", m.force);

  const SwapSpec swap{client, sample};
  const Sample original = original_sample(cfg, swap);
  Sample replacement = original;
  if (!identical) {
    const auto problem = build_problem(cfg);
    const auto& train = problem->train;
    std::size_t row = 0;
    if (replacement_row >= 0) {
      row = static_cast<std::size_t>(replacement_row);
      if (row >= train.size())
        throw ConfigError(fmt::format("--replacement-row {} out of range ({} rows)", row, train.size()));
    } else {
      // Default: the first training row whose label differs from the swapped sample's.
      while (row < train.size() && train.labels[row] == original.label) ++row;
      if (row == train.size()) row = 0;
    }
    replacement = Sample{train.row(row), train.labels[row]};
  }

  const StabilityTrace trace = stability_probe(cfg, swap, replacement, workers);
  std::string table = "t,step_of_first_draw_flag,mean_param_distance,heldout_loss_gap\n";
  for (const auto& row : trace.rows)
    table += fmt::format("{},{},{},{}\n", row.t, row.first_draw ? 1 : 0, format_real(row.mean_param_distance),
                         format_real(row.heldout_loss_gap));
  auto file = open_output(dir / "stability.csv");
  file << table;

  nlohmann::json meta = {{"client", client},
                         {"sample", sample},
                         {"dataset_row", trace.dataset_row},
                         {"identical_replacement", identical},
                         {"config", config_to_json(cfg)}};
  meta["first_draw"] = trace.first_draw ? nlohmann::json{{"round", trace.first_draw->round},
                                                         {"step", trace.first_draw->step}}
                                        : nlohmann::json(nullptr);
  auto meta_file = open_output(dir / "stability.json");
  meta_file << meta.dump(2) << '\n';
  fmt::print(out, "stability trace ({} rounds) written to {}\n", trace.rows.size(), m.out_dir);
  return exit_code::kOk;
}

}  // namespace

std::string format_real(double value) {
  if (std::isnan(value)) return {};
  return fmt::format("{:.17g}", value);
}

void write_metrics_csv(const fs::path& path, const std::vector<RoundRecord>& series) {
  auto out = open_output(path);
  out << "t,train_loss,test_acc,grad_norm_sq,consensus,delta_t,v1,v2,lr\n";
  for (const auto& r : series)
    out << fmt::format("{},{},{},{},{},{},{},{},{}\n", r.t, format_real(r.train_loss), format_real(r.test_acc),
                       format_real(r.grad_norm_sq), format_real(r.consensus), format_real(r.delta_t),
                       format_real(r.v1), format_real(r.v2), format_real(r.lr));
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Decentralized federated learning simulator with opposite-lookahead initialization", "dgossip"};
  app.require_subcommand(1);

  RunManifest run_m;
  auto* run = app.add_subcommand("run", "Run one experiment; writes metrics.csv and summary.json");
  add_manifest_options(*run, run_m);

  RunManifest sweep_m;
  std::string axis, values;
  auto* sweep = app.add_subcommand("sweep", "Run one experiment per value of a config key");
  add_manifest_options(*sweep, sweep_m);
  sweep->add_option("--axis", axis, "Config key to sweep, e.g. beta or topology.kind")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();

  std::string kinds = "full,exponential,grid,ring", sizes = "16", topo_out;
  std::size_t topo_k = 10;
  std::uint64_t topo_seed = 0;
  auto* topo = app.add_subcommand("topo-report", "Spectral quantities of the built-in topologies as CSV");
  topo->add_option("--kinds", kinds, "Comma-separated kinds: full, exponential, grid, ring, random");
  topo->add_option("--m", sizes, "Comma-separated client counts");
  topo->add_option("--k", topo_k, "Neighbors drawn per node (random kind)");
  topo->add_option("--seed", topo_seed, "Seed (random kind)");
  topo->add_option("--out", topo_out, "Also write topo_report.csv into this directory");

  RunManifest stab_m;
  std::size_t stab_client = 0, stab_sample = 0;
  long long stab_row = -1;
  bool stab_identical = false;
  auto* stab = app.add_subcommand("stability", "Coupled runs differing in one training sample");
  add_manifest_options(*stab, stab_m);
  stab->add_option("--client", stab_client, "Client holding the swapped sample")->required();
  stab->add_option("--sample", stab_sample, "Position of the swapped sample in that client's shard")->required();
  stab->add_option("--replacement-row", stab_row, "Training row whose content replaces the sample");
  stab->add_flag("--identical", stab_identical, "Replace the sample with itself (control run)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_code::kOk;
  } catch (const CLI::ParseError& e) {
    fmt::print(err, "error: {}\n", e.what());
    return exit_code::kConfig;
  }

  try {
    if (*run) return cmd_run(run_m, out);
    if (*sweep) return cmd_sweep(sweep_m, axis, values, out, err);
    if (*topo) return cmd_topo_report(kinds, sizes, topo_k, topo_seed, topo_out, out);
    if (*stab) return cmd_stability(stab_m, stab_client, stab_sample, stab_row, stab_identical, out);
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return exit_code::kConfig;
  } catch (const DivergenceError& e) {
    fmt::print(err, "diverged: {}\n", e.what());
    return exit_code::kDivergence;
  } catch (const NumericalError& e) {
    fmt::print(err, "numerical error: {}\n", e.what());
    return exit_code::kDivergence;
  } catch (const IoError& e) {
    fmt::print(err, "i/o error: {}\n", e.what());
    return exit_code::kIo;
  } catch (const fs::filesystem_error& e) {
    fmt::print(err, "i/o error: {}\n", e.what());
    return exit_code::kIo;
  }
  return exit_code::kConfig;
}

}  // namespace dgossip
