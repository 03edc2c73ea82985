#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "metts/chain_stats.hpp"
#include "metts/ed_oracle.hpp"
#include "metts/sampler.hpp"

using namespace metts;

namespace {

constexpr std::size_t kExactChi = 4096;

PepsState uniform_superposition(std::size_t lx, std::size_t ly) {
  PepsState s = product_state(Configuration(lx, ly, 0));
  for (auto& t : s.sites) t = Tensor({1, 1, 1, 1, 2}, {M_SQRT1_2, M_SQRT1_2});
  return s;
}

std::vector<double> dense_probabilities(const PepsState& s) {
  const Eigen::VectorXd v = to_eigen(to_dense(s));
  std::vector<double> p(static_cast<std::size_t>(v.size()));
  const double n = v.squaredNorm();
  for (Eigen::Index i = 0; i < v.size(); ++i) p[static_cast<std::size_t>(i)] = v[i] * v[i] / n;
  return p;
}

}  // namespace

TEST(Sampler, ProductStateIsReturnedExactly) {
  Rng rng(3);
  for (const char* c : {"00/00", "01/10", "110/011/101"}) {
    const auto config = Configuration::from_string(c);
    const auto res = sample_configuration(product_state(config), 8, rng);
    EXPECT_EQ(res.config.to_string(), config.to_string());
    EXPECT_EQ(res.log_prob, 0.0);
  }
}

TEST(Sampler, UniformSuperpositionFrequencies) {
  const auto s = uniform_superposition(2, 2);
  Rng rng(4);
  const int n = 100000;
  std::vector<int> counts(16, 0);
  for (int k = 0; k < n; ++k) ++counts[basis_index(sample_configuration(s, 4, rng).config)];
  const double p = 1.0 / 16, sigma = std::sqrt(p * (1 - p) / n);
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / n, p, 3 * sigma);
}

TEST(Sampler, RandomStateTotalVariation) {
  std::mt19937_64 gen(5);
  const auto s = random_peps(2, 3, 2, 2, gen);
  const auto exact = dense_probabilities(s);
  Rng rng(6);
  const int n = 100000;
  std::vector<double> freq(exact.size(), 0.0);
  for (int k = 0; k < n; ++k) freq[basis_index(sample_configuration(s, 16, rng).config)] += 1.0 / n;
  double tv = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) tv += 0.5 * std::abs(freq[i] - exact[i]);
  EXPECT_LT(tv, 0.01);
}

TEST(Sampler, ChainRuleGivesJointProbability) {
  std::mt19937_64 gen(7);
  Rng rng(8);
  for (auto [lx, ly] : {std::pair{2, 2}, {2, 3}, {3, 3}, {3, 4}}) {
    const auto s = random_peps(lx, ly, 2, 2, gen);
    const auto exact = dense_probabilities(s);
    for (int k = 0; k < 20; ++k) {
      const auto res = sample_configuration(s, kExactChi, rng);
      const double p = exact[basis_index(res.config)];
      EXPECT_NEAR(std::exp(res.log_prob) / p, 1.0, 1e-8) << lx << "x" << ly;
    }
  }
}

TEST(Sampler, ConditionalsAreDistributions) {
  std::mt19937_64 gen(9);
  const auto s = random_peps(3, 3, 2, 3, gen);
  Rng rng(10);
  const auto res = sample_configuration(s, 16, rng);
  ASSERT_EQ(res.conditionals.size(), 9u);
  double log_prob = 0.0;
  for (std::size_t i = 0; i < 9; ++i) {
    const auto& w = res.conditionals[i];
    EXPECT_NEAR(w[0] + w[1], 1.0, 1e-12);
    for (double p : w) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
    log_prob += std::log(w[res.config.labels[i]]);
  }
  EXPECT_NEAR(log_prob, res.log_prob, 1e-12);
}

TEST(Sampler, SingleLayerMatchesDoubleLayer) {
  std::mt19937_64 gen(11);
  const auto s = random_peps(3, 4, 2, 2, gen);
  SampleOptions dbl, sgl;
  dbl.chi = sgl.chi = kExactChi;
  sgl.single_layer = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng a(seed), b(seed);
    const auto ra = sample_configuration(s, dbl, a);
    const auto rb = sample_configuration(s, sgl, b);
    EXPECT_EQ(ra.config.to_string(), rb.config.to_string());
    EXPECT_NEAR(ra.log_prob, rb.log_prob, 1e-9);
  }
}

TEST(Sampler, ReplayFromSeedAndDraws) {
  std::mt19937_64 gen(12);
  const auto s = random_peps(2, 3, 2, 2, gen);
  Rng rng(77);
  const auto first = sample_configuration(s, 16, rng);
  EXPECT_EQ(first.seed, 77u);
  EXPECT_EQ(first.draws, 6u);
  Rng replay = Rng::replay(first.seed, first.draws);
  const auto next_a = sample_configuration(s, 16, rng);
  const auto next_b = sample_configuration(s, 16, replay);
  EXPECT_EQ(next_a.config.to_string(), next_b.config.to_string());
  EXPECT_EQ(next_a.log_prob, next_b.log_prob);
}

TEST(Sampler, ClampsSmallNegativeWeights) {
  std::vector<double> w{1.0, -5e-9};
  normalize_conditionals(w);
  EXPECT_EQ(w[1], 0.0);
  EXPECT_EQ(w[0], 1.0);
  std::vector<double> bad{1.0, -1e-6};
  EXPECT_THROW(normalize_conditionals(bad), ContractionAccuracyError);
  std::vector<double> none{0.0, 0.0};
  EXPECT_THROW(normalize_conditionals(none), ZeroNormError);
}

TEST(Sampler, ZeroOutcomeNeverDrawn) {
  // sites with amplitude only on label 1
  PepsState s = product_state(Configuration(2, 2, 1));
  s.at(0, 0) = Tensor({1, 1, 1, 1, 2}, {0.6, 0.8});
  Rng rng(13);
  for (int k = 0; k < 200; ++k) {
    const auto c = sample_configuration(s, 4, rng).config;
    EXPECT_EQ(c(0, 1), 1);
    EXPECT_EQ(c(1, 1), 1);
  }
}

TEST(Sampler, ZeroStateRejected) {
  PepsState s = product_state(Configuration(2, 2, 0));
  s.at(1, 1) = Tensor({1, 1, 1, 1, 2});
  Rng rng(14);
  EXPECT_THROW(sample_configuration(s, 4, rng), ZeroNormError);
}

TEST(MettsStep, ZeroBetaKeepsConfiguration) {
  const auto spec = make_model("tfim", 2.9, 3, 3);
  MettsSettings st;
  st.schedule = make_schedule(0.0, 0.01, 3, 3);
  const auto config = Configuration::from_string("010/110/001");
  Rng rng(15);
  const auto res = metts_step(config, spec, st, rng, {parse_observable(spec, "C1"), parse_observable(spec, "C2")});
  EXPECT_EQ(res.sample.config.to_string(), config.to_string());
  EXPECT_NEAR(res.measurements.at("C1"), -1.0, 1e-14);  // (1,1) = 1, (1,2) = 0
  EXPECT_NEAR(res.measurements.at("C2"), -1.0, 1e-14);  // (1,0) = 1, (1,2) = 0
  EXPECT_EQ(res.max_bond, 1u);
}

TEST(MettsStep, GibbsStationarityOnTwoByTwo) {
  const auto spec = make_model("tfim", 1.5, 2, 2);
  const double beta = 1.0;
  NtuOptions ntu;
  ntu.max_D = 4;
  const auto sched = make_schedule(beta / 2, 0.01, 2, 2);
  std::map<std::string, PepsState> evolved;
  auto typical = [&](const Configuration& c) -> const PepsState& {
    auto it = evolved.find(c.to_string());
    if (it == evolved.end()) it = evolved.emplace(c.to_string(), evolve(product_state(c), spec, sched, ntu)).first;
    return it->second;
  };
  // p_i / Z with p_i = <i| e^{-beta H} |i>
  std::vector<double> target(16);
  const double z = partition_function(spec, beta);
  for (std::size_t i = 0; i < 16; ++i)
    target[i] = exact_metts_propagate(spec, beta / 2, configuration_from_index(spec, i)).p / z;

  Rng rng(16);
  Configuration c(2, 2, 0);
  const std::size_t n = 20000;
  std::vector<std::vector<double>> indicator(16, std::vector<double>(n, 0.0));
  for (std::size_t k = 0; k < n; ++k) {
    c = sample_configuration(typical(c), 64, rng).config;
    indicator[basis_index(c)][k] = 1.0;
  }
  for (std::size_t i = 0; i < 16; ++i) {
    const auto est = bunched_error(indicator[i]);
    EXPECT_NEAR(est.mean, target[i], 3 * est.std_error + 1e-4) << configuration_from_index(spec, i).to_string();
  }
}

TEST(MettsStep, ThreeByThreeChainMatchesThermalCorrelator) {
  const auto spec = make_model("tfim", 2.9, 3, 3);
  const double beta = 1.0 / 0.6085;
  MettsSettings st;
  st.schedule = make_schedule(beta / 2, 0.02, 3, 3);
  st.ntu.max_D = 4;
  const auto c1 = parse_observable(spec, "C1");
  Rng rng(17);
  Configuration c(3, 3, 0);
  std::vector<double> series;
  for (int k = 0; k < 210; ++k) {
    const auto res = metts_step(c, spec, st, rng, {c1});
    if (k >= 10) series.push_back(res.measurements.at("C1"));
    c = res.sample.config;
  }
  const auto est = bunched_error(series);
  EXPECT_NEAR(est.mean, gibbs_expectation(spec, beta, c1), 3 * est.std_error)
      << "mean " << est.mean << " +- " << est.std_error;
}
