#include <gtest/gtest.h>

#include <random>

#include "metts/ed_oracle.hpp"
#include "metts/observables.hpp"

using namespace metts;

namespace {

constexpr std::size_t kExactChi = 4096;

PepsState positive_peps(std::size_t lx, std::size_t ly, std::size_t bond, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  auto s = random_peps(lx, ly, 2, bond, gen);
  for (auto& t : s.sites)
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.2 + std::abs(t[i]);
  return s;
}

}  // namespace

TEST(Observables, SiteAndPairsMatchDense) {
  std::mt19937_64 gen(31);
  const auto s = random_peps(3, 3, 2, 2, gen);
  const auto spec = make_model("tfim", 1.0, 3, 3);
  const Eigen::VectorXd v = to_eigen(to_dense(s));
  const ObservableEvaluator ev(s, kExactChi);
  for (const char* name : {"sz", "sx", "mz", "C1", "C2", "energy"}) {
    const auto obs = parse_observable(spec, name);
    EXPECT_NEAR(ev.evaluate(obs), dense_expectation(spec, obs, v), 1e-10) << name;
  }
  Observable col{"col", {{1.0, {{{0, 2}, Pauli::X}, {{2, 2}, Pauli::Z}}}}};
  EXPECT_NEAR(ev.evaluate(col), dense_expectation(spec, col, v), 1e-10);
}

TEST(Observables, FreeFunctionsAgreeWithEvaluator) {
  const auto s = positive_peps(2, 3, 2, 32);
  const ObservableEvaluator ev(s, 64);
  EXPECT_NEAR(expect_site(s, {1, 2}, pauli::x(), 64), ev.site({1, 2}, pauli::x()), 1e-13);
  EXPECT_NEAR(correlator(s, {0, 1}, {1, 1}, pauli::z(), pauli::z(), 64),
              ev.pair({0, 1}, {1, 1}, pauli::z(), pauli::z()), 1e-13);
  EXPECT_NEAR(correlator(s, {1, 0}, {1, 2}, pauli::z(), pauli::z(), 64),
              ev.pair({1, 0}, {1, 2}, pauli::z(), pauli::z()), 1e-13);
}

TEST(Observables, SameSitePairMultipliesOperators) {
  const auto s = positive_peps(2, 2, 2, 33);
  const ObservableEvaluator ev(s, 64);
  EXPECT_NEAR(ev.pair({0, 0}, {0, 0}, pauli::z(), pauli::z()), 1.0, 1e-12);
  EXPECT_NEAR(ev.pair({1, 1}, {1, 1}, pauli::x(), pauli::x()), 1.0, 1e-12);
}

TEST(Observables, ConvergesWithChi) {
  const auto s = positive_peps(4, 4, 3, 34);
  const double ref = correlator(s, {1, 1}, {1, 3}, pauli::z(), pauli::z(), 512);
  double prev = 1e300;
  for (std::size_t chi : {2u, 8u, 32u, 81u}) {
    const double err = std::abs(correlator(s, {1, 1}, {1, 3}, pauli::z(), pauli::z(), chi) - ref);
    EXPECT_LE(err, std::max(prev, 1e-13) * 1.5) << chi;
    prev = err;
  }
  EXPECT_LT(prev, 1e-10);
}

TEST(Observables, NormIndependentOfRowUsed) {
  const auto s = positive_peps(3, 4, 2, 35);
  const Environment env(s, kExactChi);
  const double n = env.norm_sq().value();
  const auto& b = env.boundaries();
  for (std::size_t x = 0; x < 3; ++x) {
    const auto w = window_value(b.top[x], row_transfer_tensors(s, x), b.bottom[x + 1]);
    EXPECT_NEAR(w.value() / n, 1.0, 1e-11);
  }
  EXPECT_NEAR(n / to_eigen(to_dense(s)).squaredNorm(), 1.0, 1e-11);
}

TEST(Observables, RejectsBadInput) {
  const auto s = positive_peps(2, 2, 2, 36);
  const ObservableEvaluator ev(s, 16);
  EXPECT_THROW(ev.site({2, 0}, pauli::z()), InputError);
  EXPECT_THROW(ev.pair({0, 0}, {1, 1}, pauli::z(), pauli::z()), InputError);
  PepsState zero = s;
  for (std::size_t i = 0; i < zero.at(0, 0).size(); ++i) zero.at(0, 0)[i] = 0.0;
  EXPECT_THROW(Environment(zero, 16), ZeroNormError);
}
