#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "metts/chain_stats.hpp"

using namespace metts;

namespace {

ChainRecord make_record(std::size_t id, const std::vector<double>& values, const std::string& obs = "C1",
                        std::size_t burn_in = 0) {
  ChainRecord r;
  r.chain_id = id;
  r.seed = 100 + id;
  r.burn_in = burn_in;
  for (std::size_t j = 0; j < values.size(); ++j) r.entries.push_back({j, obs, values[j]});
  return r;
}

std::vector<double> iid_normal(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::vector<double> x(n);
  for (auto& v : x) v = nd(gen);
  return x;
}

// Unit-variance AR(1).
std::vector<double> ar1(std::size_t n, double rho, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::vector<double> x(n);
  x[0] = nd(gen);
  const double s = std::sqrt(1.0 - rho * rho);
  for (std::size_t i = 1; i < n; ++i) x[i] = rho * x[i - 1] + s * nd(gen);
  return x;
}

double sample_sd(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  return std::sqrt(var / static_cast<double>(x.size() - 1));
}

bool power_of_two(std::size_t b) { return b > 0 && (b & (b - 1)) == 0; }

}  // namespace

TEST(RunningAverage, ConstantSeries) {
  const std::vector<ChainRecord> recs{make_record(0, std::vector<double>(50, 0.37))};
  for (const auto& p : running_average(recs, "C1")) EXPECT_NEAR(p.mean, 0.37, 1e-15);
}

TEST(RunningAverage, AlternatingSeriesEnvelope) {
  std::vector<double> x(200);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = i % 2 ? -1.0 : 1.0;
  const auto pts = running_average({make_record(0, x)}, "C1");
  ASSERT_EQ(pts.size(), 200u);
  for (const auto& p : pts) EXPECT_LE(std::abs(p.mean), 1.0 / static_cast<double>(p.s) + 1e-15);
  EXPECT_NEAR(pts.back().mean, 0.0, 1e-15);
}

TEST(RunningAverage, BurnInAndInterleaving) {
  // two chains of different length: round k takes chain 0 then chain 1
  auto a = make_record(0, {9.0, 9.0, 1.0, 3.0, 5.0}, "C1", 2);
  auto b = make_record(1, {9.0, 9.0, 2.0, 4.0}, "C1", 2);
  EXPECT_EQ(serialized({a, b}, "C1"), (std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0}));
  const auto pts = running_average({a, b}, "C1");
  EXPECT_DOUBLE_EQ(pts[1].mean, 1.5);
  EXPECT_DOUBLE_EQ(pts.back().mean, 3.0);
  // an explicit burn-in overrides the stored one
  EXPECT_EQ(serialized({a, b}, "C1", 4), (std::vector<double>{5.0}));
}

TEST(RunningAverage, IndependentSummation) {
  std::vector<ChainRecord> recs;
  for (std::size_t k = 0; k < 4; ++k) recs.push_back(make_record(k, ar1(300, 0.7, 11 + k), "C1", 10));
  const auto pts = running_average(recs, "C1");
  // recompute with a Kahan sum in the interleaved order
  std::vector<double> order;
  for (std::size_t j = 10; j < 300; ++j)
    for (const auto& r : recs) order.push_back(r.entries[j].value);
  ASSERT_EQ(pts.size(), order.size());
  double sum = 0.0, comp = 0.0;
  for (std::size_t s = 1; s <= order.size(); ++s) {
    const double y = order[s - 1] - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
    EXPECT_NEAR(pts[s - 1].mean, sum / static_cast<double>(s), 1e-12);
  }
}

TEST(RunningAverage, FullLengthIsPlainMean) {
  const auto x = iid_normal(1234, 5);
  const auto pts = running_average({make_record(0, x)}, "C1");
  double m = 0.0;
  for (double v : x) m += v;
  EXPECT_NEAR(pts.back().mean, m / 1234.0, 1e-12);
}

TEST(RunningAverage, Errors) {
  const std::vector<ChainRecord> recs{make_record(0, {1.0, 2.0}, "C1", 0)};
  EXPECT_THROW(running_average(recs, "C2"), InputError);
  EXPECT_THROW(running_average(recs, "C1", 2), InputError);
  EXPECT_THROW(running_average({}, "C1"), InputError);
  auto bad = recs[0];
  bad.entries.push_back({1, "C1", 3.0});
  EXPECT_THROW(running_average({bad}, "C1"), InputError);
}

TEST(BunchedError, IidNormals) {
  const auto est = bunched_error(iid_normal(10000, 42));
  EXPECT_NEAR(est.std_error, 0.01, 0.002);
  EXPECT_TRUE(power_of_two(est.bin_size));
  EXPECT_EQ(est.samples, 10000u);
  EXPECT_NEAR(est.half_width, 1.959964 * est.std_error, 1e-6 * est.std_error);
}

TEST(BunchedError, ConstantSeriesZero) {
  const auto est = bunched_error(std::vector<double>(64, -0.5));
  EXPECT_EQ(est.std_error, 0.0);
  EXPECT_EQ(est.half_width, 0.0);
  EXPECT_DOUBLE_EQ(est.mean, -0.5);
  EXPECT_TRUE(power_of_two(est.bin_size));
}

TEST(BunchedError, Ar1Inflation) {
  const double rho = 0.5;
  const auto x = ar1(100000, rho, 7);
  const auto est = bunched_error(x);
  const double naive = sample_sd(x) / std::sqrt(static_cast<double>(x.size()));
  const double ratio = est.std_error / naive;
  EXPECT_NEAR(ratio, std::sqrt((1 + rho) / (1 - rho)), 0.25 * std::sqrt(3.0));
  EXPECT_TRUE(power_of_two(est.bin_size));
  EXPECT_GT(est.bin_size, 1u);
}

TEST(BunchedError, ConfidenceScaling) {
  EXPECT_NEAR(normal_quantile(0.95), 1.959964, 1e-6);
  EXPECT_DOUBLE_EQ(normal_quantile(0.997), 3.0);
  EXPECT_NEAR(normal_quantile(0.6826894921), 1.0, 1e-8);
  EXPECT_THROW(normal_quantile(1.0), InputError);
  const auto x = iid_normal(4096, 3);
  const auto a = bunched_error(x, 0.95), b = bunched_error(x, 0.997);
  EXPECT_DOUBLE_EQ(a.std_error, b.std_error);
  EXPECT_DOUBLE_EQ(b.half_width, 3.0 * b.std_error);
}

TEST(BunchedError, InsufficientData) {
  EXPECT_THROW(bunched_error(std::vector<double>(15, 1.0)), InputError);
  EXPECT_NO_THROW(bunched_error(std::vector<double>(16, 1.0)));
  const std::vector<ChainRecord> recs{make_record(0, std::vector<double>(20, 1.0), "C1", 10)};
  EXPECT_THROW(bunched_error(recs, "C1"), InputError);
}

TEST(BunchedError, ChainRelabeling) {
  std::vector<ChainRecord> recs;
  for (std::size_t k = 0; k < 4; ++k) recs.push_back(make_record(k, ar1(2000, 0.6, 20 + k)));
  const auto ref = bunched_error(recs, "C1");
  std::vector<std::size_t> perm{0, 1, 2, 3};
  while (std::next_permutation(perm.begin(), perm.end())) {
    std::vector<ChainRecord> shuffled;
    for (auto k : perm) shuffled.push_back(recs[k]);
    const auto est = bunched_error(shuffled, "C1");
    EXPECT_NEAR(est.mean, ref.mean, 1e-12);
    EXPECT_LT(std::abs(est.std_error - ref.std_error), ref.std_error);
  }
}

TEST(Autocorrelation, GammaZeroIsOne) {
  const auto res = autocorrelation({ar1(1000, 0.3, 1)}, 20);
  ASSERT_EQ(res.gamma.size(), 21u);
  EXPECT_DOUBLE_EQ(res.gamma[0], 1.0);
  const auto flat = autocorrelation({std::vector<double>(100, 2.0)}, 5);
  EXPECT_DOUBLE_EQ(flat.gamma[0], 1.0);
  EXPECT_DOUBLE_EQ(flat.tau, 1.0);
}

TEST(Autocorrelation, IidWithinThreeSigma) {
  const std::size_t s = 100000;
  const auto res = autocorrelation({iid_normal(s, 9)}, 50);
  for (std::size_t lag = 1; lag <= 50; ++lag) EXPECT_LT(std::abs(res.gamma[lag]), 3.0 / std::sqrt(double(s)));
  EXPECT_GE(res.tau, 1.0);
  EXPECT_NEAR(res.tau, 1.0, 0.2);
}

TEST(Autocorrelation, Ar1Decay) {
  const std::size_t s = 100000;
  const double rho = 0.5;
  const auto res = autocorrelation({ar1(s, rho, 13)}, 10);
  for (std::size_t lag = 1; lag <= 10; ++lag) {
    // Bartlett variance of gamma_k for AR(1) stays below (1 + rho^2) / (1 - rho^2) / s
    const double sigma = std::sqrt((1 + rho * rho) / (1 - rho * rho) / double(s));
    EXPECT_NEAR(res.gamma[lag], std::pow(rho, double(lag)), 3.0 * sigma) << "lag " << lag;
  }
  EXPECT_NEAR(res.tau, (1 + rho) / (1 - rho), 0.25 * 3.0);
}

TEST(Autocorrelation, PairsStayInsideChains) {
  // two constant chains at different levels: across-chain pairs would give gamma(1) < 1
  const auto res = autocorrelation({std::vector<double>(50, 1.0), std::vector<double>(50, -1.0)}, 5);
  for (double g : res.gamma) EXPECT_NEAR(g, 1.0, 1e-12);
}

TEST(Autocorrelation, TauAtLeastOne) {
  // anticorrelated input: gamma(1) < 0 stops the sum immediately
  std::vector<double> x(400);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = i % 2 ? 1.0 : -1.0;
  EXPECT_DOUBLE_EQ(autocorrelation({x}, 10).tau, 1.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) EXPECT_GE(autocorrelation({ar1(500, -0.4, seed)}, 20).tau, 1.0);
}

TEST(Autocorrelation, InsufficientData) {
  EXPECT_THROW(autocorrelation({std::vector<double>(40, 0.0)}, 10), InputError);
  EXPECT_NO_THROW(autocorrelation({std::vector<double>(41, 0.0)}, 10));
  EXPECT_THROW(autocorrelation(std::vector<ChainRecord>{}, "C1", 2), InputError);
}

TEST(RunLogs, ReadAndAnalyze) {
  const auto dir = std::filesystem::temp_directory_path() / "chain_stats_logs";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "run.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"type":"config","seed":3})" << '\n';
    for (int j = 0; j < 40; ++j)
      for (int c = 0; c < 2; ++c)
        out << nlohmann::json{{"type", "step"},
                              {"chain", c},
                              {"seed", 3 + c},
                              {"step", j},
                              {"measurements", {{"C1", 0.1 * c + 0.01 * j}, {"C2", 1.0}}}}
                   .dump()
            << '\n';
  }
  const auto recs = read_run_logs({path}, 5);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1].seed, 4u);
  EXPECT_EQ(recs[0].burn_in, 5u);
  EXPECT_EQ(observable_names(recs), (std::vector<std::string>{"C1", "C2"}));
  EXPECT_EQ(recs[0].series("C1").size(), 35u);

  std::ostringstream csv;
  write_analysis_csv(csv, recs);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "observable,s,mean,stderr,tau");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 140u);

  std::ostringstream again;
  write_analysis_csv(again, recs);
  EXPECT_EQ(csv.str(), again.str());
}

TEST(RunLogs, MalformedLineReportsLineNumber) {
  const auto path = (std::filesystem::temp_directory_path() / "chain_stats_bad.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"type":"step","chain":0,"seed":1,"step":0,"measurements":{"C1":1.0}})" << '\n';
    out << "not json\n";
  }
  try {
    read_run_logs({path}, 0);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_run_logs({path + ".missing"}, 0), InputError);
}

TEST(BunchedError, InterleavedChainsBunchWholeRounds) {
  const double rho = 0.5;
  std::vector<ChainRecord> recs;
  for (std::size_t k = 0; k < 4; ++k) recs.push_back(make_record(k, ar1(25000, rho, 40 + k)));
  const auto x = serialized(recs, "C1");
  const auto est = bunched_error(recs, "C1");
  EXPECT_EQ(est.round, 4u);
  EXPECT_TRUE(power_of_two(est.bin_size));
  const double naive = sample_sd(x) / std::sqrt(static_cast<double>(x.size()));
  EXPECT_NEAR(est.std_error / naive, std::sqrt((1 + rho) / (1 - rho)), 0.25 * std::sqrt(3.0));
  // sample-wise bunching of the same series stops on the flat first doubling
  EXPECT_LT(bunched_error(x).std_error, est.std_error);
}
