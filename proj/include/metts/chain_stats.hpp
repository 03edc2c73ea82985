#pragma once

// Estimators over METTS Markov chains: running averages of interleaved
// chains, bunched (binned) error bars and autocorrelation functions.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "metts/errors.hpp"

namespace metts {

inline constexpr std::size_t kDefaultBurnIn = 10;
inline constexpr std::size_t kMinBins = 16;

struct ChainEntry {
  std::size_t step = 0;
  std::string observable;
  double value = 0.0;
};

struct ChainRecord {
  std::size_t chain_id = 0;
  std::uint64_t seed = 0;
  std::vector<ChainEntry> entries;
  std::size_t burn_in = kDefaultBurnIn;

  /// Post-burn-in values of one observable in step order. Steps
  /// 0..burn_in-1 are discarded.
  std::vector<double> series(const std::string& observable) const {
    std::vector<double> out;
    std::optional<std::size_t> last;
    for (const auto& e : entries) {
      if (e.observable != observable) continue;
      if (last && e.step <= *last) throw InputError("chain steps must be strictly increasing");
      last = e.step;
      if (e.step >= burn_in) out.push_back(e.value);
    }
    return out;
  }

  bool has(const std::string& observable) const {
    return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.observable == observable; });
  }
};

struct BunchedEstimate {
  double mean = 0.0;
  double std_error = 0.0;    ///< one-sigma plateau value
  double half_width = 0.0;   ///< std_error scaled to the confidence level
  std::size_t bin_size = 1;  ///< power of two, in rounds
  std::size_t round = 1;     ///< serialized samples per round (number of chains)
  double confidence = 0.95;
  std::size_t samples = 0;
};

struct RunningPoint {
  std::size_t s = 0;
  double mean = 0.0;
};

struct AutocorrelationResult {
  std::vector<double> gamma;  ///< gamma[lag], gamma[0] = 1
  double tau = 1.0;
};

namespace detail {

inline void require_observable(const std::vector<ChainRecord>& records, const std::string& observable) {
  if (records.empty()) throw InputError("no chain records");
  if (std::none_of(records.begin(), records.end(), [&](const auto& r) { return r.has(observable); }))
    throw InputError("unknown observable '" + observable + "'");
}

inline std::vector<std::vector<double>> chain_series(const std::vector<ChainRecord>& records,
                                                     const std::string& observable,
                                                     std::optional<std::size_t> burn_in) {
  require_observable(records, observable);
  std::vector<std::vector<double>> out;
  for (auto r : records) {
    if (burn_in) r.burn_in = *burn_in;
    out.push_back(r.series(observable));
  }
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

/// Standard error of the mean of bins of size b (trailing partial bin dropped).
inline double binned_stderr(const std::vector<double>& x, std::size_t b) {
  const std::size_t nb = x.size() / b;
  std::vector<double> bins(nb, 0.0);
  for (std::size_t i = 0; i < nb * b; ++i) bins[i / b] += x[i];
  for (auto& v : bins) v /= static_cast<double>(b);
  const double m = mean_of(bins);
  double var = 0.0;
  for (double v : bins) var += (v - m) * (v - m);
  var /= static_cast<double>(nb - 1);
  return std::sqrt(var / static_cast<double>(nb));
}

}  // namespace detail

/// Chains serialized by interleaving: round k takes the k-th post-burn-in
/// sample of every chain that still has one, in chain order.
inline std::vector<double> serialize_chains(const std::vector<std::vector<double>>& chains) {
  std::vector<double> out;
  std::size_t longest = 0;
  for (const auto& c : chains) longest = std::max(longest, c.size());
  for (std::size_t k = 0; k < longest; ++k)
    for (const auto& c : chains)
      if (k < c.size()) out.push_back(c[k]);
  return out;
}

inline std::vector<double> serialized(const std::vector<ChainRecord>& records, const std::string& observable,
                                      std::optional<std::size_t> burn_in = std::nullopt) {
  return serialize_chains(detail::chain_series(records, observable, burn_in));
}

/// Mean over the first s serialized samples, for every s.
inline std::vector<RunningPoint> running_average(const std::vector<ChainRecord>& records,
                                                 const std::string& observable,
                                                 std::optional<std::size_t> burn_in = std::nullopt) {
  const auto x = serialized(records, observable, burn_in);
  if (x.empty()) throw InputError("burn-in leaves no samples");
  std::vector<RunningPoint> out;
  out.reserve(x.size());
  double acc = 0.0;
  for (std::size_t s = 1; s <= x.size(); ++s) {
    acc += x[s - 1];
    out.push_back({s, acc / static_cast<double>(s)});
  }
  return out;
}

/// Two-sided standard normal quantile: 0.95 -> 1.96. A confidence of 0.997
/// is reported as 3 sigma.
inline double normal_quantile(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw InputError("confidence must lie in (0, 1)");
  if (std::abs(confidence - 0.997) < 1e-12) return 3.0;
  const double tail = 1.0 - confidence;
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (std::erfc(mid / std::sqrt(2.0)) > tail) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// Bunched error of a serialized series. Bins hold whole rounds of
/// `round` consecutive samples (one per chain when chains are interleaved);
/// the number of rounds per bin doubles until the standard error changes by
/// less than 10% or fewer than 16 bins remain.
inline BunchedEstimate bunched_error(const std::vector<double>& x, double confidence = 0.95,
                                     std::size_t round = 1) {
  if (x.size() < kMinBins) throw InputError("bunched_error needs at least 16 samples");
  if (round == 0) throw InputError("round must be positive");
  // too few rounds for even two bins: bunch single samples
  if (x.size() / round < 2) round = 1;
  BunchedEstimate est;
  est.confidence = confidence;
  est.samples = x.size();
  est.round = round;
  est.mean = detail::mean_of(x);
  std::size_t b = 1;
  double se = detail::binned_stderr(x, round);
  while (x.size() / (2 * b * round) >= kMinBins) {
    const double next = detail::binned_stderr(x, 2 * b * round);
    b *= 2;
    const bool plateau = std::abs(next - se) < 0.1 * se;
    se = next;
    if (plateau || se == 0.0) break;
  }
  est.std_error = se;
  est.bin_size = b;
  est.half_width = normal_quantile(confidence) * se;
  return est;
}

inline BunchedEstimate bunched_error(const std::vector<ChainRecord>& records, const std::string& observable,
                                     double confidence = 0.95, std::optional<std::size_t> burn_in = std::nullopt) {
  const auto chains = detail::chain_series(records, observable, burn_in);
  const auto live = std::count_if(chains.begin(), chains.end(), [](const auto& c) { return !c.empty(); });
  return bunched_error(serialize_chains(chains), confidence, std::max<std::size_t>(1, live));
}

/// Normalized autocorrelation averaged over chains (pairs never straddle
/// two chains) and the integrated time tau = 1 + 2 sum gamma, summed up to
/// the first negative value.
inline AutocorrelationResult autocorrelation(const std::vector<std::vector<double>>& chains, std::size_t max_lag) {
  std::size_t total = 0;
  double acc = 0.0;
  for (const auto& c : chains) {
    total += c.size();
    for (double v : c) acc += v;
  }
  if (total <= 4 * max_lag || total == 0) throw InputError("autocorrelation needs more than 4*max_lag samples");
  const double mean = acc / static_cast<double>(total);
  AutocorrelationResult res;
  res.gamma.assign(max_lag + 1, 0.0);
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : chains)
      for (std::size_t j = 0; j + lag < c.size(); ++j) {
        sum += (c[j] - mean) * (c[j + lag] - mean);
        ++n;
      }
    res.gamma[lag] = n ? sum / static_cast<double>(n) : 0.0;
  }
  const double c0 = res.gamma[0];
  if (c0 <= 0.0) {
    // constant series: no fluctuations to correlate
    std::fill(res.gamma.begin(), res.gamma.end(), 0.0);
    res.gamma[0] = 1.0;
    return res;
  }
  for (auto& g : res.gamma) g /= c0;
  for (std::size_t lag = 1; lag <= max_lag; ++lag) {
    if (res.gamma[lag] < 0.0) break;
    res.tau += 2.0 * res.gamma[lag];
  }
  return res;
}

inline AutocorrelationResult autocorrelation(const std::vector<ChainRecord>& records, const std::string& observable,
                                             std::size_t max_lag,
                                             std::optional<std::size_t> burn_in = std::nullopt) {
  return autocorrelation(detail::chain_series(records, observable, burn_in), max_lag);
}

/// Every observable name present in the records, sorted.
inline std::vector<std::string> observable_names(const std::vector<ChainRecord>& records) {
  std::set<std::string> names;
  for (const auto& r : records)
    for (const auto& e : r.entries) names.insert(e.observable);
  return {names.begin(), names.end()};
}

/// Chain records from run-log JSON lines. Only "step" events are used;
/// any line that is not a JSON object aborts with its line number.
inline std::vector<ChainRecord> read_run_logs(const std::vector<std::string>& paths, std::size_t burn_in) {
  std::map<std::size_t, ChainRecord> chains;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open run log " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json ev;
      try {
        ev = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw InputError(path + ":" + std::to_string(lineno) + ": malformed log line: " + e.what());
      }
      if (!ev.is_object() || !ev.contains("type"))
        throw InputError(path + ":" + std::to_string(lineno) + ": log line has no type");
      if (ev["type"] != "step") continue;
      try {
        const auto id = ev.at("chain").get<std::size_t>();
        auto& rec = chains[id];
        rec.chain_id = id;
        rec.seed = ev.at("seed").get<std::uint64_t>();
        rec.burn_in = burn_in;
        const auto step = ev.at("step").get<std::size_t>();
        for (const auto& [name, value] : ev.at("measurements").items())
          rec.entries.push_back({step, name, value.get<double>()});
      } catch (const nlohmann::json::exception& e) {
        throw InputError(path + ":" + std::to_string(lineno) + ": malformed step event: " + e.what());
      }
    }
  }
  std::vector<ChainRecord> out;
  for (auto& [id, rec] : chains) {
    std::stable_sort(rec.entries.begin(), rec.entries.end(),
                     [](const auto& a, const auto& b) { return a.step < b.step; });
    out.push_back(std::move(rec));
  }
  return out;
}

struct AnalysisOptions {
  std::optional<std::size_t> burn_in;
  double confidence = 0.95;
  std::size_t max_lag = 50;
};

/// CSV with columns observable,s,mean,stderr,tau. One row per prefix length
/// s of the serialized series; stderr is the bunched error of that prefix
/// (empty below 16 samples) and tau the integrated autocorrelation time of
/// the whole run.
inline void write_analysis_csv(std::ostream& os, const std::vector<ChainRecord>& records,
                               const AnalysisOptions& opt = {}) {
  os << "observable,s,mean,stderr,tau\n";
  os.precision(17);
  for (const auto& name : observable_names(records)) {
    const auto chains = detail::chain_series(records, name, opt.burn_in);
    const auto x = serialize_chains(chains);
    if (x.empty()) continue;
    std::size_t lag = opt.max_lag;
    std::size_t total = x.size();
    if (total <= 4 * lag) lag = total > 4 ? (total - 1) / 4 : 0;
    const double tau = lag > 0 ? autocorrelation(chains, lag).tau : 1.0;
    const auto round = static_cast<std::size_t>(
        std::max<std::ptrdiff_t>(1, std::count_if(chains.begin(), chains.end(), [](const auto& c) { return !c.empty(); })));
    double acc = 0.0;
    std::vector<double> prefix;
    prefix.reserve(x.size());
    for (std::size_t s = 1; s <= x.size(); ++s) {
      acc += x[s - 1];
      prefix.push_back(x[s - 1]);
      os << name << ',' << s << ',' << acc / static_cast<double>(s) << ',';
      if (s >= kMinBins) os << bunched_error(prefix, opt.confidence, round).std_error;
      os << ',' << tau << '\n';
    }
  }
}

}  // namespace metts
