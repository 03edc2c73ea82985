#pragma once

// Batch driver behind the command line: run configuration, METTS chains on
// a worker pool with an ordered log writer, checkpoint/resume, purification,
// exact reference values and chain analysis.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "metts/chain_stats.hpp"
#include "metts/checkpoint.hpp"
#include "metts/ed_oracle.hpp"
#include "metts/errors.hpp"
#include "metts/models.hpp"
#include "metts/peps.hpp"
#include "metts/purification.hpp"
#include "metts/rng.hpp"
#include "metts/sampler.hpp"
#include "metts/trotter_ntu.hpp"

namespace metts {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kOutDirEnv = "METTS_PEPS_OUT_DIR";

struct RunConfig {
  std::string model = "tfim";
  double g = 2.9;
  std::size_t lx = 3, ly = 3;
  double beta = 1.0 / 0.6085;
  double dtau = kDefaultDtau;
  std::size_t D = 3;
  std::size_t chi = 16;
  std::size_t chi_sample = 16;
  std::size_t n_chains = 4;
  std::size_t steps = 100;
  std::uint64_t seed = 1;
  std::size_t burn_in = kDefaultBurnIn;
  std::vector<std::string> observables{"C1", "C2"};
  std::string out_dir;
  std::size_t workers = 0;  ///< 0: one per hardware thread, at most n_chains
  std::size_t checkpoint_every = 25;
  bool single_layer = false;

  ModelSpec spec() const { return make_model(model, g, lx, ly); }
};

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{"model",     "g",     "lx",      "ly",           "beta",
                                          "dtau",      "D",     "chi",     "chi_sample",   "n_chains",
                                          "steps",     "seed",  "burn_in", "observables",  "out_dir",
                                          "workers",   "checkpoint_every", "single_layer"};
  return keys;
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"model", c.model},
          {"g", c.g},
          {"lx", c.lx},
          {"ly", c.ly},
          {"beta", c.beta},
          {"dtau", c.dtau},
          {"D", c.D},
          {"chi", c.chi},
          {"chi_sample", c.chi_sample},
          {"n_chains", c.n_chains},
          {"steps", c.steps},
          {"seed", c.seed},
          {"burn_in", c.burn_in},
          {"observables", c.observables},
          {"out_dir", c.out_dir},
          {"workers", c.workers},
          {"checkpoint_every", c.checkpoint_every},
          {"single_layer", c.single_layer}};
}

/// Overlays the keys present in `j` onto `c`; unknown keys are errors.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!config_keys().count(key)) throw InputError("invalid config key '" + key + "'");
  try {
    c.model = j.value("model", c.model);
    c.g = j.value("g", c.g);
    c.lx = j.value("lx", c.lx);
    c.ly = j.value("ly", c.ly);
    c.beta = j.value("beta", c.beta);
    c.dtau = j.value("dtau", c.dtau);
    c.D = j.value("D", c.D);
    c.chi = j.value("chi", c.chi);
    c.chi_sample = j.value("chi_sample", c.chi_sample);
    c.n_chains = j.value("n_chains", c.n_chains);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    c.burn_in = j.value("burn_in", c.burn_in);
    c.observables = j.value("observables", c.observables);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.workers = j.value("workers", c.workers);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.single_layer = j.value("single_layer", c.single_layer);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid config value: ") + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  RunConfig c;
  try {
    apply_json(c, nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("config is not valid JSON: " + std::string(e.what()));
  }
  return c;
}

inline void validate(const RunConfig& c) {
  (void)c.spec();
  if (!(c.beta >= 0.0) || !std::isfinite(c.beta)) throw InputError("beta must be finite and non-negative");
  if (!(c.dtau > 0.0)) throw InputError("dtau must be positive");
  if (c.D == 0 || c.chi == 0 || c.chi_sample == 0) throw InputError("D, chi and chi_sample must be positive");
  if (c.n_chains == 0) throw InputError("n_chains must be positive");
  if (c.checkpoint_every == 0) throw InputError("checkpoint_every must be positive");
  for (const auto& o : c.observables) (void)parse_observable(c.spec(), o);
}

inline std::filesystem::path resolve_out_dir(const RunConfig& c) {
  if (!c.out_dir.empty()) return c.out_dir;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return "metts_out";
}

inline EvolutionSchedule schedule_for(const RunConfig& c) {
  return make_schedule(0.5 * c.beta, c.dtau, c.lx, c.ly);
}

inline std::vector<Observable> observables_for(const RunConfig& c) {
  std::vector<Observable> out;
  for (const auto& name : c.observables) out.push_back(parse_observable(c.spec(), name));
  return out;
}

/// Writes bundles of log lines in (round, chain) order regardless of the
/// order in which workers finish them.
class OrderedLogWriter {
 public:
  OrderedLogWriter(std::ostream& os, std::size_t n_chains, std::size_t first_round)
      : os_(os), n_chains_(n_chains), round_(first_round) {}

  void post(std::size_t round, std::size_t chain, std::vector<std::string> lines) {
    std::lock_guard lock(mutex_);
    pending_[{round, chain}] = std::move(lines);
    for (auto it = pending_.find({round_, chain_}); it != pending_.end(); it = pending_.find({round_, chain_})) {
      for (const auto& l : it->second) os_ << l << '\n';
      pending_.erase(it);
      if (++chain_ == n_chains_) {
        chain_ = 0;
        ++round_;
      }
    }
    os_.flush();
  }

  /// Writes whatever is still buffered (after a failure elsewhere).
  void drain() {
    std::lock_guard lock(mutex_);
    for (const auto& [key, lines] : pending_)
      for (const auto& l : lines) os_ << l << '\n';
    pending_.clear();
    os_.flush();
  }

 private:
  std::ostream& os_;
  std::size_t n_chains_;
  std::size_t round_;
  std::size_t chain_ = 0;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::string>> pending_;
  std::mutex mutex_;
};

/// Runs `job(k)` for k in [0, n) on `workers` threads; the first exception
/// is rethrown after all threads have joined.
template <class Job>
void run_pool(std::size_t n, std::size_t workers, Job job) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (std::size_t k; (k = next++) < n;) {
      try {
        job(k);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  if (workers <= 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

struct ChainStart {
  std::size_t step = 0;
  Configuration config;
  Rng rng;
};

inline std::filesystem::path checkpoint_file(const std::filesystem::path& dir, std::size_t chain, std::size_t step) {
  return dir / "checkpoints" / ("chain" + std::to_string(chain) + "_step" + std::to_string(step) + ".peps");
}

/// Initial product state of a chain, drawn uniformly from its own stream.
inline ChainStart fresh_chain(const RunConfig& c, std::size_t k) {
  ChainStart s{0, Configuration(c.lx, c.ly), Rng(c.seed).split(k)};
  for (auto& label : s.config.labels) label = static_cast<std::uint8_t>(s.rng.uniform() < 0.5 ? 0 : 1);
  return s;
}

inline nlohmann::json config_for_comparison(const RunConfig& c) {
  auto j = to_json(c);
  for (const char* k : {"steps", "out_dir", "workers"}) j.erase(k);
  return j;
}

inline ChainStart load_chain_checkpoint(const std::filesystem::path& path, const RunConfig& c) {
  const auto meta = read_sidecar(path);
  const auto& extra = meta.at("extra");
  if (extra.value("format_version", -1) != kCheckpointFormatVersion)
    throw InputError("checkpoint version mismatch in " + path.string());
  if (extra.at("config") != config_for_comparison(c))
    throw InputError("checkpoint " + path.string() + " was written with a different configuration");
  const PepsState state = load_peps(path);
  ChainStart s{extra.at("step").get<std::size_t>(), Configuration::from_string(extra.at("config_labels")),
               Rng::replay(extra.at("seed").get<std::uint64_t>(), extra.at("draws").get<std::uint64_t>())};
  if (state.lx != c.lx || state.ly != c.ly) throw InputError("checkpoint lattice mismatch in " + path.string());
  return s;
}

/// Largest checkpoint step available for every chain, if any.
inline std::optional<std::size_t> common_checkpoint_step(const std::filesystem::path& dir, const RunConfig& c) {
  std::optional<std::size_t> best;
  for (std::size_t s = c.checkpoint_every; s <= c.steps; s += c.checkpoint_every) {
    bool all = true;
    for (std::size_t k = 0; k < c.n_chains && all; ++k) all = std::filesystem::exists(checkpoint_file(dir, k, s));
    if (all) best = s;
  }
  return best;
}

/// Keeps the log lines that precede METTS step `step` (including the sample
/// and checkpoint events that hand over into it).
inline void truncate_log(const std::filesystem::path& log, std::size_t step) {
  std::ifstream in(log);
  if (!in) throw InputError("cannot resume: missing run log " + log.string());
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto ev = nlohmann::json::parse(line);
    const std::string type = ev.at("type");
    const auto s = ev.at("step").get<std::size_t>();
    const bool input_side = type == "sample" || type == "checkpoint";
    if (input_side ? s <= step : s < step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(log, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

struct MettsRunSummary {
  std::filesystem::path log;
  std::size_t resumed_from = 0;
};

/// Runs n_chains METTS chains. Each chain alternates evolve, measure and
/// sample; the run log gets one bundle of events per chain and step.
inline MettsRunSummary run_metts(const RunConfig& c, bool resume = false, std::ostream* progress = nullptr) {
  validate(c);
  const auto dir = resolve_out_dir(c);
  std::filesystem::create_directories(dir / "checkpoints");
  const auto spec = c.spec();
  const auto observables = observables_for(c);
  MettsSettings settings;
  settings.schedule = schedule_for(c);
  settings.ntu.max_D = c.D;
  settings.chi = c.chi;
  settings.chi_sample = c.chi_sample;
  settings.single_layer = c.single_layer;

  MettsRunSummary summary;
  summary.log = dir / "run.jsonl";
  std::vector<ChainStart> starts;
  if (resume) {
    const auto step = common_checkpoint_step(dir, c);
    if (!step) throw InputError("cannot resume: no checkpoint shared by all chains in " + dir.string());
    for (std::size_t k = 0; k < c.n_chains; ++k) starts.push_back(load_chain_checkpoint(checkpoint_file(dir, k, *step), c));
    truncate_log(summary.log, *step);
    summary.resumed_from = *step;
  }
  {
    std::ofstream cfg(dir / "config.json", std::ios::trunc);
    cfg << to_json(c).dump(2) << '\n';
  }
  std::ofstream log(summary.log, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw InputError("cannot open run log " + summary.log.string());
  if (!resume) log << nlohmann::json{{"type", "config"}, {"step", 0}, {"config", to_json(c)}}.dump() << '\n';
  // round 0 carries the initial samples, round j + 1 the events of step j
  OrderedLogWriter writer(log, c.n_chains, resume ? summary.resumed_from + 1 : 0);
  std::mutex progress_mutex;

  auto chain = [&](std::size_t k) {
    ChainStart st = resume ? starts[k] : fresh_chain(c, k);
    const std::uint64_t seed = st.rng.seed();
    if (!resume) {
      writer.post(0, k,
                  {nlohmann::json{{"type", "sample"}, {"chain", k}, {"seed", seed}, {"step", 0},
                                  {"config", st.config.to_string()}, {"log_prob", 0.0}, {"draws", st.rng.draws()},
                                  {"initial", true}}
                       .dump()});
    }
    Configuration config = st.config;
    for (std::size_t j = st.step; j < c.steps; ++j) {
      const auto r = metts_step(config, spec, settings, st.rng, observables);
      double max_delta = 0.0, sum_delta = 0.0;
      std::size_t fallbacks = 0;
      for (const auto& rep : r.reports) {
        max_delta = std::max(max_delta, rep.delta);
        sum_delta += rep.delta;
        fallbacks += rep.fallback ? 1 : 0;
      }
      const double mean_delta = r.reports.empty() ? 0.0 : sum_delta / static_cast<double>(r.reports.size());
      std::vector<std::string> lines;
      lines.push_back(nlohmann::json{{"type", "ntu_report"}, {"chain", k}, {"step", j}, {"updates", r.reports.size()},
                                     {"max_delta", max_delta}, {"mean_delta", mean_delta}, {"fallbacks", fallbacks},
                                     {"max_bond", r.max_bond}}
                          .dump());
      lines.push_back(nlohmann::json{{"type", "step"}, {"chain", k}, {"seed", seed}, {"step", j},
                                     {"config", config.to_string()}, {"measurements", r.measurements}}
                          .dump());
      config = r.sample.config;
      lines.push_back(nlohmann::json{{"type", "sample"}, {"chain", k}, {"seed", seed}, {"step", j + 1},
                                     {"config", config.to_string()}, {"log_prob", r.sample.log_prob},
                                     {"draws", r.sample.draws}}
                          .dump());
      if ((j + 1) % c.checkpoint_every == 0) {
        const auto path = checkpoint_file(dir, k, j + 1);
        save_peps(path, product_state(config, spec.d),
                  {{"format_version", kCheckpointFormatVersion}, {"chain", k}, {"step", j + 1}, {"seed", seed},
                   {"draws", st.rng.draws()}, {"config_labels", config.to_string()},
                   {"config", config_for_comparison(c)}});
        lines.push_back(nlohmann::json{{"type", "checkpoint"}, {"chain", k}, {"step", j + 1},
                                       {"path", path.filename().string()}, {"draws", st.rng.draws()}}
                            .dump());
      }
      writer.post(j + 1, k, std::move(lines));
      if (progress) {
        std::lock_guard lock(progress_mutex);
        *progress << "chain " << k << " step " << j + 1 << "/" << c.steps << '\n';
      }
    }
  };
  try {
    run_pool(c.n_chains, c.workers, chain);
  } catch (...) {
    writer.drain();
    throw;
  }
  return summary;
}

/// Purification evolved to beta/2; returns the results document, also
/// written to out_dir/purification.json.
inline nlohmann::json run_purification(const RunConfig& c, bool write = true) {
  validate(c);
  const auto spec = c.spec();
  const auto t0 = std::chrono::steady_clock::now();
  const auto state = evolve_purification(init_infinite_temperature(c.lx, c.ly, spec.d), spec, schedule_for(c), c.D);
  const ObservableEvaluator eval(state, c.chi);
  nlohmann::json values;
  for (const auto& o : observables_for(c)) values[o.name] = eval.evaluate(o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json out{{"type", "purification"}, {"config", to_json(c)}, {"values", values},
                     {"max_bond", state.max_bond()}, {"metadata", {{"elapsed_seconds", secs}}}};
  if (write) {
    const auto dir = resolve_out_dir(c);
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "purification.json", std::ios::trunc) << out.dump(2) << '\n';
  }
  return out;
}

/// Exact Gibbs averages of the configured observables.
inline nlohmann::json run_exact(const RunConfig& c) {
  const auto spec = c.spec();
  nlohmann::json values;
  for (const auto& o : observables_for(c)) values[o.name] = gibbs_expectation(spec, c.beta, o);
  return {{"type", "exact"}, {"config", to_json(c)}, {"values", values}};
}

inline void analyze(const std::vector<std::string>& logs, std::ostream& csv, const AnalysisOptions& opt) {
  const auto records = read_run_logs(logs, opt.burn_in.value_or(kDefaultBurnIn));
  if (records.empty()) throw InputError("run logs contain no step events");
  write_analysis_csv(csv, records, opt);
}

}  // namespace metts
