#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "amplab/common.hpp"
#include "amplab/csv.hpp"
#include "amplab/estimators.hpp"
#include "amplab/oracle.hpp"
#include "amplab/ppo.hpp"
#include "amplab/version.hpp"

// The nlohmann single header installed under vendor/ exposes nlohmann::json.
#if !defined(NLOHMANN_JSON_VERSION_MAJOR)
#error "vendor/json.hpp not found on the include path"
#endif

namespace amplab::harness {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Small statistics helpers.
// ---------------------------------------------------------------------------

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Two-sided Student-t confidence interval; a single sample degenerates to
/// the point itself.
inline Interval mean_ci(std::span<const double> xs, double level = 0.95) {
  require(!xs.empty(), "confidence interval of an empty sample");
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (const double x : xs) mean += x;
  mean /= n;
  if (xs.size() == 1) return {mean, mean, mean};
  double ss = 0.0;
  for (const double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t_distribution<double> dist(n - 1.0);
  const double t = boost::math::quantile(dist, 0.5 + level / 2.0);
  const double half = t * sd / std::sqrt(n);
  return {mean, mean - half, mean + half};
}

/// Confidence interval for a variance by splitting the pooled samples into
/// groups and treating the per-group variances as the sample.
inline Interval variance_ci_by_groups(std::span<const double> samples, int groups,
                                      double level = 0.95) {
  require(groups >= 2, "variance CI needs at least 2 groups");
  require(samples.size() >= static_cast<std::size_t>(2 * groups),
          "too few samples for a grouped variance CI");
  std::vector<double> group_vars;
  const std::size_t per = samples.size() / static_cast<std::size_t>(groups);
  for (int g = 0; g < groups; ++g) {
    const std::size_t start = static_cast<std::size_t>(g) * per;
    const std::size_t stop = g + 1 == groups ? samples.size() : start + per;
    const auto [m, v] = estimators::mean_and_unbiased_variance(
        samples.subspan(start, stop - start));
    group_vars.push_back(v);
  }
  return mean_ci(group_vars, level);
}

// ---------------------------------------------------------------------------
// Experiment configuration (strict JSON schema with full defaulting).
// ---------------------------------------------------------------------------

struct VarianceSection {
  int episodes = 200;
  std::vector<std::string> modes{"plain_mc", "amp_exact", "amp_sampled"};
  std::vector<int> L_values{5, 50, 500};
  mqn::State anchor{0, 0, 0};
  std::string zeta = "oracle_h";  // oracle_h | zero
  std::string policy = "priority1";
  int cap = 10;
  std::uint64_t seed = 1;
};

struct OracleSection {
  int cap = 10;
  std::string policy = "priority1";
};

struct TimingRun {
  std::string label;
  std::filesystem::path dir;
};

struct ExperimentConfig {
  std::string environment = "mqn";
  mqn::Config mqn_cfg = mqn::Config::regime("IL");
  ridehail::Config ride_cfg = ridehail::Config::desk_default();
  ppo::PpoConfig ppo_cfg;
  bool compare_normalization = false;  // normalization = "both"
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::filesystem::path out_dir = "runs/out";
  VarianceSection variance;
  OracleSection oracle_section;
  std::vector<TimingRun> timing_runs;

  void validate() const {
    require(environment == "mqn" || environment == "ridehail",
            "environment must be mqn or ridehail, got ", environment);
    require(!seeds.empty(), "seeds must be nonempty");
    require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(),
            "rejected: duplicate seeds");
    ppo_cfg.validate();
    if (environment == "mqn")
      mqn_cfg.validate();
    else
      ride_cfg.validate();
  }
};

namespace detail_cfg {

inline void check_keys(const json& obj, const std::string& path,
                       const std::set<std::string>& allowed) {
  require(obj.is_object(), "config section ", path.empty() ? "(root)" : path,
          " must be an object");
  for (const auto& [key, value] : obj.items())
    require(allowed.count(key) == 1, "unknown config field: ",
            path.empty() ? key : path + "." + key);
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail_contract("config field ", key, " has the wrong type");
  }
}

inline std::vector<std::vector<double>> matrix_from(const json& value, const std::string& key,
                                                    const std::filesystem::path& base) {
  if (value.is_string()) {
    // CSV matrix: plain numeric rows, row = origin, column = destination.
    const std::filesystem::path path = base / value.get<std::string>();
    std::ifstream in(path);
    require(in.good(), "cannot open matrix csv for ", key, ": ", path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::size_t start = 0;
      while (start <= line.size()) {
        const std::size_t comma = line.find(',', start);
        const std::string cell =
            line.substr(start, comma == std::string::npos ? comma : comma - start);
        row.push_back(std::stod(cell));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      rows.push_back(std::move(row));
    }
    return rows;
  }
  try {
    return value.get<std::vector<std::vector<double>>>();
  } catch (const json::exception&) {
    fail_contract("config field ", key, " must be a matrix or a csv path");
  }
}

}  // namespace detail_cfg

inline estimators::EstimatorMode estimator_mode_from(const std::string& name, int L) {
  if (name == "plain_mc") return estimators::EstimatorMode::plain();
  if (name == "amp_exact") return estimators::EstimatorMode::exact();
  if (name == "amp_sampled") return estimators::EstimatorMode::sampled(L);
  fail_contract("unknown estimator mode: ", name,
                " (expected plain_mc, amp_exact or amp_sampled)");
}

/// Parses and fully resolves a config. Unknown keys are rejected with the
/// offending field named.
inline ExperimentConfig parse_config(const json& root,
                                     const std::filesystem::path& base_dir = ".") {
  using detail_cfg::check_keys;
  using detail_cfg::get_or;
  ExperimentConfig cfg;

  check_keys(root, "",
             {"environment", "mqn", "ridehail", "ppo", "estimator", "normalization", "seeds",
              "workers", "out", "variance", "oracle", "timing"});
  cfg.environment = get_or<std::string>(root, "environment", "mqn");

  if (root.contains("mqn")) {
    const auto& m = root.at("mqn");
    check_keys(m, "mqn",
               {"regime", "lambda1", "lambda2", "mu1", "mu2", "mu3", "episode_length",
                "queue_cap", "allow_idle"});
    const auto regime = get_or<std::string>(m, "regime", "IL");
    cfg.mqn_cfg = regime == "custom" ? mqn::Config() : mqn::Config::regime(regime);
    cfg.mqn_cfg.regime_label = regime;
    cfg.mqn_cfg.lambda1 = get_or<double>(m, "lambda1", cfg.mqn_cfg.lambda1);
    cfg.mqn_cfg.lambda2 = get_or<double>(m, "lambda2", cfg.mqn_cfg.lambda2);
    cfg.mqn_cfg.mu1 = get_or<double>(m, "mu1", cfg.mqn_cfg.mu1);
    cfg.mqn_cfg.mu2 = get_or<double>(m, "mu2", cfg.mqn_cfg.mu2);
    cfg.mqn_cfg.mu3 = get_or<double>(m, "mu3", cfg.mqn_cfg.mu3);
    cfg.mqn_cfg.episode_length = get_or<int>(m, "episode_length", cfg.mqn_cfg.episode_length);
    cfg.mqn_cfg.queue_cap = get_or<int>(m, "queue_cap", cfg.mqn_cfg.queue_cap);
    cfg.mqn_cfg.allow_idle = get_or<bool>(m, "allow_idle", cfg.mqn_cfg.allow_idle);
  }

  if (root.contains("ridehail")) {
    const auto& r = root.at("ridehail");
    check_keys(r, "ridehail",
               {"regions", "cars", "horizon", "patience", "arrival_rates", "travel_time"});
    cfg.ride_cfg.regions = get_or<int>(r, "regions", cfg.ride_cfg.regions);
    cfg.ride_cfg.cars = get_or<int>(r, "cars", cfg.ride_cfg.cars);
    cfg.ride_cfg.horizon = get_or<int>(r, "horizon", cfg.ride_cfg.horizon);
    cfg.ride_cfg.patience = get_or<int>(r, "patience", cfg.ride_cfg.patience);
    if (!r.contains("arrival_rates") || !r.contains("travel_time")) {
      // refresh default matrices to the configured region count
      const int n = cfg.ride_cfg.regions;
      cfg.ride_cfg.arrival_rates.assign(n, std::vector<double>(n, 0.15));
      cfg.ride_cfg.travel_time.assign(n, std::vector<int>(n, 1));
    }
    if (r.contains("arrival_rates"))
      cfg.ride_cfg.arrival_rates =
          detail_cfg::matrix_from(r.at("arrival_rates"), "arrival_rates", base_dir);
    if (r.contains("travel_time")) {
      const auto m = detail_cfg::matrix_from(r.at("travel_time"), "travel_time", base_dir);
      cfg.ride_cfg.travel_time.clear();
      for (const auto& row : m) {
        std::vector<int> irow;
        for (const double v : row) irow.push_back(static_cast<int>(v));
        cfg.ride_cfg.travel_time.push_back(std::move(irow));
      }
    }
  }

  if (root.contains("ppo")) {
    const auto& p = root.at("ppo");
    check_keys(p, "ppo",
               {"iterations", "episodes_per_iteration", "clip_epsilon", "policy_epochs",
                "policy_step_size", "policy_minibatch", "entropy_coefficient", "policy_hidden",
                "value_hidden", "value_epochs", "value_minibatch", "value_step_size"});
    auto& out = cfg.ppo_cfg;
    out.iterations = get_or<int>(p, "iterations", out.iterations);
    out.episodes_per_iteration =
        get_or<int>(p, "episodes_per_iteration", out.episodes_per_iteration);
    out.clip_epsilon = get_or<double>(p, "clip_epsilon", out.clip_epsilon);
    out.policy_epochs = get_or<int>(p, "policy_epochs", out.policy_epochs);
    out.policy_step_size = get_or<double>(p, "policy_step_size", out.policy_step_size);
    out.policy_minibatch = get_or<int>(p, "policy_minibatch", out.policy_minibatch);
    out.entropy_coefficient =
        get_or<double>(p, "entropy_coefficient", out.entropy_coefficient);
    out.policy_hidden = get_or<std::vector<int>>(p, "policy_hidden", out.policy_hidden);
    out.value_hidden = get_or<std::vector<int>>(p, "value_hidden", out.value_hidden);
    out.value_fit.epochs = get_or<int>(p, "value_epochs", out.value_fit.epochs);
    out.value_fit.minibatch = get_or<int>(p, "value_minibatch", out.value_fit.minibatch);
    out.value_fit.adam.step_size =
        get_or<double>(p, "value_step_size", out.value_fit.adam.step_size);
  }

  if (root.contains("estimator")) {
    const auto& e = root.at("estimator");
    check_keys(e, "estimator", {"mode", "L"});
    cfg.ppo_cfg.estimator = estimator_mode_from(get_or<std::string>(e, "mode", "plain_mc"),
                                                get_or<int>(e, "L", 500));
  }

  const auto normalization = get_or<std::string>(root, "normalization", "input_only");
  if (normalization == "both") {
    cfg.compare_normalization = true;
    cfg.ppo_cfg.normalization = nn::Normalization::input_only;
  } else {
    cfg.ppo_cfg.normalization = nn::normalization_from_string(normalization);
  }

  cfg.seeds = get_or<std::vector<std::uint64_t>>(root, "seeds", cfg.seeds);
  cfg.ppo_cfg.workers = get_or<int>(root, "workers", cfg.ppo_cfg.workers);
  cfg.out_dir = get_or<std::string>(root, "out", cfg.out_dir.string());

  if (root.contains("variance")) {
    const auto& v = root.at("variance");
    check_keys(v, "variance",
               {"episodes", "modes", "L_values", "anchor", "zeta", "policy", "cap", "seed"});
    cfg.variance.episodes = get_or<int>(v, "episodes", cfg.variance.episodes);
    cfg.variance.modes = get_or<std::vector<std::string>>(v, "modes", cfg.variance.modes);
    cfg.variance.L_values = get_or<std::vector<int>>(v, "L_values", cfg.variance.L_values);
    const auto anchor = get_or<std::vector<int>>(v, "anchor", {0, 0, 0});
    require(anchor.size() == 3, "variance.anchor must have 3 queue lengths");
    cfg.variance.anchor = {anchor[0], anchor[1], anchor[2]};
    cfg.variance.zeta = get_or<std::string>(v, "zeta", cfg.variance.zeta);
    cfg.variance.policy = get_or<std::string>(v, "policy", cfg.variance.policy);
    cfg.variance.cap = get_or<int>(v, "cap", cfg.variance.cap);
    cfg.variance.seed = get_or<std::uint64_t>(v, "seed", cfg.variance.seed);
  }

  if (root.contains("oracle")) {
    const auto& o = root.at("oracle");
    check_keys(o, "oracle", {"cap", "policy"});
    cfg.oracle_section.cap = get_or<int>(o, "cap", cfg.oracle_section.cap);
    cfg.oracle_section.policy = get_or<std::string>(o, "policy", cfg.oracle_section.policy);
  }

  if (root.contains("timing")) {
    const auto& t = root.at("timing");
    check_keys(t, "timing", {"runs"});
    require(t.contains("runs") && t.at("runs").is_array(), "timing.runs must be an array");
    for (const auto& entry : t.at("runs")) {
      check_keys(entry, "timing.runs[]", {"label", "dir"});
      cfg.timing_runs.push_back({entry.at("label").get<std::string>(),
                                 base_dir / entry.at("dir").get<std::string>()});
    }
  }

  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open config file: ", path.string());
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    fail_contract("config file ", path.string(), " is not valid json: ", e.what());
  }
  return parse_config(root, path.parent_path());
}

/// Serializes the fully resolved config (for the run manifest).
inline json resolved_config_json(const ExperimentConfig& cfg) {
  json root;
  root["environment"] = cfg.environment;
  root["mqn"] = {{"regime", cfg.mqn_cfg.regime_label},
                 {"lambda1", cfg.mqn_cfg.lambda1},
                 {"lambda2", cfg.mqn_cfg.lambda2},
                 {"mu1", cfg.mqn_cfg.mu1},
                 {"mu2", cfg.mqn_cfg.mu2},
                 {"mu3", cfg.mqn_cfg.mu3},
                 {"episode_length", cfg.mqn_cfg.episode_length},
                 {"queue_cap", cfg.mqn_cfg.queue_cap},
                 {"allow_idle", cfg.mqn_cfg.allow_idle}};
  root["ridehail"] = {{"regions", cfg.ride_cfg.regions},
                      {"cars", cfg.ride_cfg.cars},
                      {"horizon", cfg.ride_cfg.horizon},
                      {"patience", cfg.ride_cfg.patience},
                      {"arrival_rates", cfg.ride_cfg.arrival_rates},
                      {"travel_time", cfg.ride_cfg.travel_time}};
  root["ppo"] = {{"iterations", cfg.ppo_cfg.iterations},
                 {"episodes_per_iteration", cfg.ppo_cfg.episodes_per_iteration},
                 {"clip_epsilon", cfg.ppo_cfg.clip_epsilon},
                 {"policy_epochs", cfg.ppo_cfg.policy_epochs},
                 {"policy_step_size", cfg.ppo_cfg.policy_step_size},
                 {"policy_minibatch", cfg.ppo_cfg.policy_minibatch},
                 {"entropy_coefficient", cfg.ppo_cfg.entropy_coefficient},
                 {"policy_hidden", cfg.ppo_cfg.policy_hidden},
                 {"value_hidden", cfg.ppo_cfg.value_hidden},
                 {"value_epochs", cfg.ppo_cfg.value_fit.epochs},
                 {"value_minibatch", cfg.ppo_cfg.value_fit.minibatch},
                 {"value_step_size", cfg.ppo_cfg.value_fit.adam.step_size}};
  root["estimator"] = {{"mode", cfg.ppo_cfg.estimator.csv_name()},
                       {"L", cfg.ppo_cfg.estimator.sample_count}};
  root["normalization"] =
      cfg.compare_normalization ? "both" : nn::to_string(cfg.ppo_cfg.normalization);
  root["seeds"] = cfg.seeds;
  root["workers"] = cfg.ppo_cfg.workers;
  root["out"] = cfg.out_dir.string();
  return root;
}

// ---------------------------------------------------------------------------
// Curve aggregation and timing tables.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& curve_columns() {
  static const std::vector<std::string> cols{"seed",    "iteration", "metric", "value_loss",
                                             "sim_s",   "prep_s",    "train_s"};
  return cols;
}

struct AggregateRow {
  int iteration = 0;
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Mean metric with a symmetric 95% t-interval per iteration. Ragged seed
/// curves are truncated to the shortest, with a warning pushed to `warnings`.
inline std::vector<AggregateRow> aggregate_curves(
    const std::vector<std::vector<ppo::IterationRecord>>& per_seed,
    std::vector<std::string>* warnings = nullptr) {
  require(!per_seed.empty(), "aggregate_curves needs at least one seed");
  std::size_t rows = per_seed.front().size();
  bool ragged = false;
  for (const auto& run : per_seed) {
    ragged = ragged || run.size() != rows;
    rows = std::min(rows, run.size());
  }
  if (ragged && warnings != nullptr)
    warnings->push_back(detail::cat("ragged iteration counts across seeds; truncated to ",
                                    rows, " iterations"));
  std::vector<AggregateRow> out;
  out.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> metrics;
    metrics.reserve(per_seed.size());
    for (const auto& run : per_seed) metrics.push_back(run[i].metric);
    const auto ci = mean_ci(metrics);
    out.push_back({per_seed.front()[i].iteration, ci.mean, ci.lo, ci.hi});
  }
  return out;
}

struct TimingRow {
  std::string task;
  double simulation_mins = 0.0;
  double preprocessing_mins = 0.0;
  double training_mins = 0.0;
  double total_mins = 0.0;
};

/// Per-task mean minutes for the three pipeline phases plus their total.
inline TimingRow timing_row(const std::string& task,
                            std::span<const ppo::IterationRecord> records) {
  require(!records.empty(), "timing_row needs at least one iteration record");
  TimingRow row;
  row.task = task;
  for (const auto& rec : records) {
    row.simulation_mins += rec.sim_seconds / 60.0;
    row.preprocessing_mins += rec.prep_seconds / 60.0;
    row.training_mins += rec.train_seconds / 60.0;
  }
  const double n = static_cast<double>(records.size());
  row.simulation_mins /= n;
  row.preprocessing_mins /= n;
  row.training_mins /= n;
  row.total_mins = row.simulation_mins + row.preprocessing_mins + row.training_mins;
  return row;
}

inline void write_timing_csv(const std::filesystem::path& path,
                             std::span<const TimingRow> rows) {
  CsvWriter csv(path, {"task", "simulation_mins", "data_preprocessing_mins",
                       "nn_training_mins", "total_mins"});
  for (const auto& row : rows)
    csv.write_row({row.task, g17(row.simulation_mins), g17(row.preprocessing_mins),
                   g17(row.training_mins), g17(row.total_mins)});
}

/// Rebuilds iteration records from the curve csv files of a finished run
/// directory (all files named curves_seed*.csv).
inline std::vector<ppo::IterationRecord> read_run_records(const std::filesystem::path& dir) {
  std::vector<ppo::IterationRecord> records;
  std::vector<std::filesystem::path> files;
  require(std::filesystem::is_directory(dir), "not a run directory: ", dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("curves_seed", 0) == 0 && entry.path().extension() == ".csv")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), "no curve csv files under ", dir.string());
  for (const auto& file : files) {
    const auto table = read_csv(file);
    const int it = table.column("iteration");
    const int metric = table.column("metric");
    const int loss = table.column("value_loss");
    const int sim = table.column("sim_s");
    const int prep = table.column("prep_s");
    const int tr = table.column("train_s");
    for (const auto& row : table.rows) {
      ppo::IterationRecord rec;
      rec.iteration = std::stoi(row[static_cast<std::size_t>(it)]);
      rec.metric = std::stod(row[static_cast<std::size_t>(metric)]);
      rec.value_loss = std::stod(row[static_cast<std::size_t>(loss)]);
      rec.sim_seconds = std::stod(row[static_cast<std::size_t>(sim)]);
      rec.prep_seconds = std::stod(row[static_cast<std::size_t>(prep)]);
      rec.train_seconds = std::stod(row[static_cast<std::size_t>(tr)]);
      records.push_back(rec);
    }
  }
  return records;
}

/// The `timing` entry point: re-renders the per-phase table for a set of
/// labelled finished runs.
inline std::vector<TimingRow> timing_report(std::span<const TimingRun> runs,
                                            const std::filesystem::path& out_csv) {
  require(!runs.empty(), "timing report needs at least one run");
  std::vector<TimingRow> rows;
  for (const auto& run : runs) rows.push_back(timing_row(run.label, read_run_records(run.dir)));
  write_timing_csv(out_csv, rows);
  return rows;
}

// ---------------------------------------------------------------------------
// Experiment runner.
// ---------------------------------------------------------------------------

namespace detail_run {

inline void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                           const std::string& status,
                           const std::vector<std::string>& warnings) {
  json manifest;
  manifest["version"] = std::string(kVersion);
  manifest["status"] = status;
  manifest["config"] = resolved_config_json(cfg);
  manifest["seeds"] = cfg.seeds;
  manifest["warnings"] = warnings;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
}

template <typename Adapter>
std::vector<std::vector<ppo::IterationRecord>> run_seeds(const Adapter& env,
                                                         const ExperimentConfig& cfg,
                                                         ppo::PpoConfig ppo_cfg,
                                                         const std::filesystem::path& dir) {
  std::vector<std::vector<ppo::IterationRecord>> per_seed;
  for (const std::uint64_t seed : cfg.seeds) {
    ppo_cfg.seed = seed;
    const auto curve_path = dir / detail::cat("curves_seed", seed, ".csv");
    CsvWriter csv(curve_path, curve_columns());
    const auto ckpt_dir = dir / "checkpoints" / detail::cat("seed", seed);
    std::filesystem::create_directories(ckpt_dir);

    const auto result = ppo::train(
        env, ppo_cfg,
        [&](const ppo::IterationRecord& rec) {
          csv.write_row({std::to_string(seed), std::to_string(rec.iteration), g17(rec.metric),
                         g17(rec.value_loss), g17(rec.sim_seconds), g17(rec.prep_seconds),
                         g17(rec.train_seconds)});
        },
        [&](int iteration, const nn::PolicyHead& policy, const nn::ValueNet& value) {
          policy.save(ckpt_dir / detail::cat("policy_iter", iteration, ".txt"));
          value.save(ckpt_dir / detail::cat("value_iter", iteration, ".txt"));
        });
    per_seed.push_back(result.curve.records);
  }
  return per_seed;
}

}  // namespace detail_run

/// Runs the configured experiment: one training run per seed (per
/// normalization scheme when comparing), with incrementally appended curve
/// csv files, per-iteration checkpoints, an aggregate csv, a timing csv and a
/// manifest. A mid-run failure leaves the partial artifacts in place plus a
/// FAILED marker carrying the error.
inline void run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  std::vector<std::string> warnings;
  detail_run::write_manifest(cfg.out_dir, cfg, "running", warnings);

  std::vector<std::pair<nn::Normalization, std::filesystem::path>> schemes;
  if (cfg.compare_normalization) {
    schemes.emplace_back(nn::Normalization::input_only, cfg.out_dir / "input_only");
    schemes.emplace_back(nn::Normalization::input_and_output,
                         cfg.out_dir / "input_and_output");
  } else {
    schemes.emplace_back(cfg.ppo_cfg.normalization, cfg.out_dir);
  }

  try {
    for (const auto& [scheme, dir] : schemes) {
      std::filesystem::create_directories(dir);
      ppo::PpoConfig ppo_cfg = cfg.ppo_cfg;
      ppo_cfg.normalization = scheme;

      std::vector<std::vector<ppo::IterationRecord>> per_seed;
      if (cfg.environment == "mqn") {
        const ppo::MqnAdapter env(cfg.mqn_cfg);
        per_seed = detail_run::run_seeds(env, cfg, ppo_cfg, dir);
      } else {
        const ppo::RideHailAdapter env(cfg.ride_cfg);
        per_seed = detail_run::run_seeds(env, cfg, ppo_cfg, dir);
      }

      const auto aggregate = aggregate_curves(per_seed, &warnings);
      CsvWriter agg_csv(dir / "aggregate.csv", {"iteration", "mean", "ci_low", "ci_high"});
      for (const auto& row : aggregate)
        agg_csv.write_row({std::to_string(row.iteration), g17(row.mean), g17(row.ci_low),
                           g17(row.ci_high)});

      std::vector<ppo::IterationRecord> all_records;
      for (const auto& run : per_seed)
        all_records.insert(all_records.end(), run.begin(), run.end());
      if (!all_records.empty()) {
        const TimingRow row = timing_row(cfg.ppo_cfg.estimator.label(), all_records);
        write_timing_csv(dir / "timing.csv", {&row, 1});
      }
    }
  } catch (const std::exception& e) {
    std::ofstream marker(cfg.out_dir / "FAILED");
    marker << e.what() << "\n";
    warnings.push_back(detail::cat("run failed: ", e.what()));
    detail_run::write_manifest(cfg.out_dir, cfg, "failed", warnings);
    throw;
  }
  detail_run::write_manifest(cfg.out_dir, cfg, "completed", warnings);
}

// ---------------------------------------------------------------------------
// Variance study.
// ---------------------------------------------------------------------------

struct VarianceStudyRow {
  std::string mode;
  int L = 0;  // 0 for non-sampled modes
  mqn::State anchor;
  double mean = 0.0;
  double variance = 0.0;
  int episodes = 0;
  std::vector<double> samples;  // pooled per-visit targets (for CI analysis)
};

/// Fixed-policy, fixed-zeta variance table on the truncated network: one row
/// per requested mode (sampled modes swept over L_values). No learning runs.
inline std::vector<VarianceStudyRow> variance_study(const ExperimentConfig& cfg,
                                                    std::vector<std::string>* warnings
                                                    = nullptr) {
  require(cfg.environment == "mqn",
          "the variance study runs on the queueing environment only");
  const auto& section = cfg.variance;
  require(section.cap >= 0, "variance.cap must be >= 0 (truncated testbed)");
  require(section.zeta == "oracle_h" || section.zeta == "zero",
          "variance.zeta must be oracle_h or zero, got ", section.zeta);

  mqn::Config mqn_cfg = cfg.mqn_cfg;
  mqn_cfg.queue_cap = section.cap;
  const auto net = oracle::TruncatedMqn::build(mqn_cfg, section.cap);

  require(section.policy == "priority1" || section.policy == "priority2" ||
              section.policy == "uniform",
          "variance.policy must be priority1, priority2 or uniform, got ", section.policy);

  const auto with_policy = [&](const auto& policy) {
    const auto solution = oracle::exact_poisson_solution(net, policy);
    auto zeta = estimators::ValueApproximation<mqn::State>::zero();
    if (section.zeta == "oracle_h")
      zeta = {[net, h = solution.h](const mqn::State& s) {
                return h[static_cast<std::size_t>(net.index(s))];
              },
              "oracle h"};

    std::vector<VarianceStudyRow> rows;
    const std::vector<mqn::State> anchors{section.anchor};
    const auto run_mode = [&](const estimators::EstimatorMode& mode) {
      std::vector<std::vector<double>> samples;
      const auto stats = estimators::estimator_variance(
          mqn_cfg, policy, zeta, solution.average_cost, mode, section.episodes, anchors,
          section.seed, cfg.ppo_cfg.workers, &samples);
      if (!stats[0].visited) {
        if (warnings != nullptr)
          warnings->push_back(detail::cat("anchor (", section.anchor.q1, ",",
                                          section.anchor.q2, ",", section.anchor.q3,
                                          ") never visited under mode ", mode.label(),
                                          "; row skipped"));
        return;
      }
      rows.push_back({mode.csv_name(), mode.sample_count, section.anchor, stats[0].mean,
                      stats[0].variance, section.episodes, std::move(samples[0])});
    };

    for (const auto& name : section.modes) {
      if (name == "amp_sampled") {
        for (const int L : section.L_values)
          run_mode(estimators::EstimatorMode::sampled(L));
      } else {
        run_mode(estimator_mode_from(name, 0));
      }
    }
    return rows;
  };

  if (section.policy == "priority1") return with_policy(mqn::StaticPriorityPolicy(true));
  if (section.policy == "priority2") return with_policy(mqn::StaticPriorityPolicy(false));
  return with_policy(mqn::UniformPolicy(mqn_cfg));
}

inline void write_variance_csv(const std::filesystem::path& path,
                               std::span<const VarianceStudyRow> rows) {
  CsvWriter csv(path, {"mode", "L", "anchor", "mean", "variance", "episodes"});
  for (const auto& row : rows)
    csv.write_row({row.mode, std::to_string(row.L),
                   detail::cat(row.anchor.q1, "-", row.anchor.q2, "-", row.anchor.q3),
                   g17(row.mean), g17(row.variance), std::to_string(row.episodes)});
}

// ---------------------------------------------------------------------------
// Oracle export.
// ---------------------------------------------------------------------------

/// Solves the truncated network and writes the relative-value table of the
/// configured fixed policy, the optimal policy, and a summary csv.
inline void oracle_export(const ExperimentConfig& cfg) {
  const auto& section = cfg.oracle_section;
  mqn::Config mqn_cfg = cfg.mqn_cfg;
  mqn_cfg.queue_cap = section.cap;
  const auto net = oracle::TruncatedMqn::build(mqn_cfg, section.cap);
  std::filesystem::create_directories(cfg.out_dir);

  oracle::PoissonSolution fixed;
  if (section.policy == "priority1")
    fixed = oracle::exact_poisson_solution(net, mqn::StaticPriorityPolicy(true));
  else if (section.policy == "priority2")
    fixed = oracle::exact_poisson_solution(net, mqn::StaticPriorityPolicy(false));
  else if (section.policy == "uniform")
    fixed = oracle::exact_poisson_solution(net, mqn::UniformPolicy(mqn_cfg));
  else
    fail_contract("oracle.policy must be priority1, priority2 or uniform, got ",
                  section.policy);

  const auto optimal = oracle::optimal_average_cost(net);
  oracle::write_h_table_csv(cfg.out_dir / "h.csv", net, fixed.h);
  oracle::write_policy_csv(cfg.out_dir / "optimal_policy.csv", net, optimal.policy);
  CsvWriter summary(cfg.out_dir / "summary.csv",
                    {"cap", "policy", "policy_average_cost", "optimal_average_cost"});
  summary.write_row({std::to_string(section.cap), section.policy, g17(fixed.average_cost),
                     g17(optimal.average_cost)});
}

}  // namespace amplab::harness
