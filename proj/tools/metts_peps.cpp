// metts_peps: METTS and purification thermal averages of the 2D transverse
// field Ising model on finite PEPS.
//
//   metts_peps metts   --config run.json [--steps 500 ...] [--resume]
//   metts_peps purify  --config run.json [--D 6 --chi 64]
//   metts_peps exact   --lx 3 --ly 3 --g 2.9 --beta 1.643
//   metts_peps analyze run.jsonl [--burn-in 10] [--out analysis.csv]

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "metts/driver.hpp"

namespace {

/// Flags mirror config keys; only flags given on the command line override
/// the config file.
struct ConfigFlags {
  std::string config_path;
  nlohmann::json overrides = nlohmann::json::object();

  template <class T>
  void add(CLI::App* app, const std::string& key, const std::string& help) {
    auto slot = std::make_shared<std::optional<T>>();
    app->add_option("--" + key, *slot, help);
    setters_.push_back([this, key, slot] {
      if (*slot) overrides[key] = **slot;
    });
  }

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON run configuration");
    add<std::string>(app, "model", "model name (tfim)");
    add<double>(app, "g", "transverse field");
    add<std::size_t>(app, "lx", "lattice rows");
    add<std::size_t>(app, "ly", "lattice columns");
    add<double>(app, "beta", "inverse temperature");
    add<double>(app, "dtau", "Trotter step");
    add<std::size_t>(app, "D", "PEPS bond dimension");
    add<std::size_t>(app, "chi", "boundary bond dimension for expectation values");
    add<std::size_t>(app, "chi_sample", "boundary bond dimension for sampling");
    add<std::size_t>(app, "n_chains", "number of Markov chains");
    add<std::size_t>(app, "steps", "METTS steps per chain");
    add<std::uint64_t>(app, "seed", "base seed; chain k uses seed + k");
    add<std::size_t>(app, "burn_in", "steps discarded per chain");
    add<std::vector<std::string>>(app, "observables", "observables, e.g. C1 C2 energy");
    add<std::string>(app, "out_dir", "output directory");
    add<std::size_t>(app, "workers", "worker threads");
    add<std::size_t>(app, "checkpoint_every", "checkpoint cadence in steps");
    add<bool>(app, "single_layer", "single-layer boundaries for measured rows");
  }

  metts::RunConfig resolve() {
    metts::RunConfig c = config_path.empty() ? metts::RunConfig{} : metts::load_config(config_path);
    for (auto& s : setters_) s();
    metts::apply_json(c, overrides);
    return c;
  }

 private:
  std::vector<std::function<void()>> setters_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Thermal states of the 2D transverse-field Ising model with PEPS"};
  app.require_subcommand(1);

  ConfigFlags metts_flags, purify_flags, exact_flags;
  bool resume = false, quiet = false;
  auto* metts_cmd = app.add_subcommand("metts", "run METTS Markov chains");
  metts_flags.attach(metts_cmd);
  metts_cmd->add_flag("--resume", resume, "continue from the latest checkpoint shared by all chains");
  metts_cmd->add_flag("-q,--quiet", quiet, "no progress output");

  auto* purify_cmd = app.add_subcommand("purify", "evolve the purified thermal state and measure");
  purify_flags.attach(purify_cmd);

  auto* exact_cmd = app.add_subcommand("exact", "exact Gibbs averages by full diagonalization");
  exact_flags.attach(exact_cmd);

  std::vector<std::string> logs;
  std::optional<std::size_t> burn_in;
  std::string csv_path;
  double confidence = 0.95;
  std::size_t max_lag = 50;
  auto* analyze_cmd = app.add_subcommand("analyze", "running averages, bunched errors and tau from run logs");
  analyze_cmd->add_option("logs", logs, "run log files (JSON lines)")->required();
  analyze_cmd->add_option("--burn_in,--burn-in", burn_in, "steps discarded per chain");
  analyze_cmd->add_option("--confidence", confidence, "confidence level");
  analyze_cmd->add_option("--max_lag,--max-lag", max_lag, "largest autocorrelation lag");
  analyze_cmd->add_option("-o,--out", csv_path, "CSV output (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*metts_cmd) {
      const auto c = metts_flags.resolve();
      const auto summary = metts::run_metts(c, resume, quiet ? nullptr : &std::cerr);
      std::cout << nlohmann::json{{"log", summary.log.string()}, {"resumed_from", summary.resumed_from}}.dump()
                << '\n';
    } else if (*purify_cmd) {
      std::cout << metts::run_purification(purify_flags.resolve()).dump(2) << '\n';
    } else if (*exact_cmd) {
      const auto c = exact_flags.resolve();
      const auto out = metts::run_exact(c);
      if (!c.out_dir.empty() || std::getenv(metts::kOutDirEnv)) {
        const auto dir = metts::resolve_out_dir(c);
        std::filesystem::create_directories(dir);
        std::ofstream(dir / "exact.json", std::ios::trunc) << out.dump(2) << '\n';
      }
      std::cout << out.dump(2) << '\n';
    } else if (*analyze_cmd) {
      metts::AnalysisOptions opt;
      opt.burn_in = burn_in;
      opt.confidence = confidence;
      opt.max_lag = max_lag;
      if (csv_path.empty()) {
        metts::analyze(logs, std::cout, opt);
      } else {
        std::ofstream out(csv_path, std::ios::trunc);
        if (!out) throw metts::InputError("cannot write " + csv_path);
        metts::analyze(logs, out, opt);
      }
    }
  } catch (const metts::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
