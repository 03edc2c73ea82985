#include <gtest/gtest.h>

#include <cmath>

#include "metts/ed_oracle.hpp"

using namespace metts;

namespace {

/// exp(a) by scaling and squaring of a truncated Taylor series.
Eigen::MatrixXd expm_series(const Eigen::MatrixXd& a) {
  int k = 0;
  double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  while (norm > 0.01) {
    norm /= 2;
    ++k;
  }
  const Eigen::MatrixXd b = a / std::pow(2.0, k);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(a.rows(), a.cols()), sum = term;
  for (int n = 1; n < 20; ++n) {
    term = term * b / n;
    sum += term;
  }
  for (int i = 0; i < k; ++i) sum = sum * sum;
  return sum;
}

/// Dense matrix of an observable built column by column.
Eigen::MatrixXd observable_matrix(const ModelSpec& spec, const Observable& obs) {
  const auto dim = static_cast<Eigen::Index>(std::size_t{1} << spec.sites());
  Eigen::MatrixXd m(dim, dim);
  for (Eigen::Index c = 0; c < dim; ++c) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(dim);
    e[c] = 1.0;
    m.col(c) = apply_observable(spec, obs, e);
  }
  return m;
}

}  // namespace

TEST(Gibbs, InfiniteTemperature) {
  const auto spec = make_model("tfim", 2.9, 3, 3);
  EXPECT_EQ(gibbs_expectation(spec, 0.0, parse_observable(spec, "sz")), 0.0);
  EXPECT_NEAR(gibbs_expectation(spec, 0.0, parse_observable(spec, "C1")), 0.0, 1e-15);
  EXPECT_NEAR(gibbs_expectation(spec, 0.0, parse_observable(spec, "sx")), 0.0, 1e-15);
}

TEST(Gibbs, LargeBetaTwoSiteGroundState) {
  // ground state a (|00>+|11>)/sqrt2 + b (|01>+|10>)/sqrt2 with
  // [[-1, -2g], [-2g, 1]] (a, b) = E0 (a, b), E0 = -sqrt(1 + 4 g^2)
  const double g = 1.0;
  const auto spec = make_model("tfim", g, 1, 2);
  const double e0 = -std::sqrt(1 + 4 * g * g);
  const double a = 1.0, b = (-1.0 - e0) * a / (2 * g);
  const double zz = (a * a - b * b) / (a * a + b * b);
  const double x1 = 2 * a * b / (a * a + b * b);
  EXPECT_NEAR(gibbs_expectation(spec, 200.0, parse_observable(spec, "C1")), zz, 1e-12);
  EXPECT_NEAR(gibbs_expectation(spec, 200.0, parse_observable(spec, "sx")), x1, 1e-12);
  EXPECT_NEAR(gibbs_expectation(spec, 200.0, parse_observable(spec, "energy")), e0 / 2, 1e-12);
}

TEST(Gibbs, FrozenThreeByThreeReference) {
  const auto spec = make_model("tfim", 2.9, 3, 3);
  const double beta = 1.0 / 0.6085;
  EXPECT_NEAR(gibbs_expectation(spec, beta, parse_observable(spec, "C1")), 0.218534607440937, 1e-12);
  EXPECT_NEAR(gibbs_expectation(spec, beta, parse_observable(spec, "C2")), 0.079901837621371, 1e-12);
  EXPECT_NEAR(gibbs_expectation(spec, beta, parse_observable(spec, "energy")), -3.020561493694133, 1e-12);
}

TEST(Gibbs, MatchesSeriesExponential) {
  const auto spec = make_model("tfim", 2.9, 3, 3);
  const double beta = 1.0 / 0.6085;
  const Eigen::MatrixXd rho = expm_series(-beta * dense_hamiltonian(spec));
  for (const char* name : {"C1", "C2", "sx"}) {
    const auto obs = parse_observable(spec, name);
    const double ref = (observable_matrix(spec, obs) * rho).trace() / rho.trace();
    EXPECT_NEAR(gibbs_expectation(spec, beta, obs), ref, 1e-10) << name;
  }
}

TEST(Gibbs, ContinuousInBeta) {
  const auto spec = make_model("tfim", 2.9, 2, 3);
  for (const char* name : {"C1", "sx", "mz", "energy"}) {
    const auto obs = parse_observable(spec, name);
    for (double beta : {0.0, 0.3, 1.0 / 0.6085, 5.0})
      EXPECT_LT(std::abs(gibbs_expectation(spec, beta, obs) - gibbs_expectation(spec, beta + 1e-6, obs)), 1e-4);
  }
}

TEST(Gibbs, SizeCapAndInput) {
  EXPECT_THROW(gibbs_expectation(make_model("tfim", 1.0, 1, 13), 1.0, Observable{}), SizeCapError);
  const auto spec = make_model("tfim", 1.0, 2, 2);
  EXPECT_THROW(gibbs_expectation(spec, -1.0, parse_observable(spec, "C1")), InputError);
}

TEST(MettsPropagate, ZeroBetaIsBasisVector) {
  const auto spec = make_model("tfim", 2.9, 2, 3);
  const auto c = Configuration::from_string("011/010");
  const auto m = exact_metts_propagate(spec, 0.0, c);
  EXPECT_NEAR(m.p, 1.0, 1e-14);
  EXPECT_NEAR(m.psi[static_cast<Eigen::Index>(basis_index(c))], 1.0, 1e-14);
}

TEST(MettsPropagate, NormalizedForAnyConfiguration) {
  const auto spec = make_model("tfim", 2.9, 2, 3);
  for (std::size_t i = 0; i < 64; i += 5)
    EXPECT_NEAR(exact_metts_propagate(spec, 0.8, configuration_from_index(spec, i)).psi.squaredNorm(), 1.0, 1e-12);
}

TEST(MettsPropagate, WeightsSumToTrace) {
  const auto spec = make_model("tfim", 2.9, 2, 2);
  const double beta = 1.3;
  double sum = 0.0;
  for (std::size_t i = 0; i < 16; ++i) sum += exact_metts_propagate(spec, beta / 2, configuration_from_index(spec, i)).p;
  EXPECT_NEAR(sum, partition_function(spec, beta), 1e-8);
  EXPECT_NEAR(sum / expm_series(-beta * dense_hamiltonian(spec)).trace(), 1.0, 1e-12);
}

TEST(MettsPropagate, TypicalStatesAreUnbiased) {
  for (auto [lx, ly] : {std::pair{2, 2}, {2, 3}}) {
    const auto spec = make_model("tfim", 2.9, lx, ly);
    const double beta = 1.0 / 0.6085;
    const double z = partition_function(spec, beta);
    for (const char* name : {"C1", "sx", "mz", "energy"}) {
      const auto obs = parse_observable(spec, name);
      double acc = 0.0;
      for (std::size_t i = 0; i < (std::size_t{1} << spec.sites()); ++i) {
        const auto m = exact_metts_propagate(spec, beta / 2, configuration_from_index(spec, i));
        acc += m.p / z * dense_expectation(spec, obs, m.psi);
      }
      EXPECT_NEAR(acc, gibbs_expectation(spec, beta, obs), 1e-10) << lx << "x" << ly << " " << name;
    }
  }
}

TEST(DensePropagator, MatchesSeriesExponential) {
  const auto spec = make_model("tfim", 1.7, 2, 3);
  const Eigen::MatrixXd u = expm_series(-0.7 * dense_hamiltonian(spec));
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(64, -1.0, 2.0);
  EXPECT_LT((dense_propagate(spec, 0.7, v) - u * v).norm(), 1e-10 * (u * v).norm());
}

TEST(DensePropagator, TwoSiteOperatorMatchesEmbedding) {
  const auto spec = make_model("tfim", 1.0, 2, 2);
  const Bond bond{{0, 1}, {1, 1}};
  const Eigen::Matrix4d h = bond_hamiltonian(spec, bond).matrix(1);
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(16, 0.5, 3.0);
  // <s| (h on sites 1, 3) |v> by enumeration
  const Eigen::VectorXd got = apply_two_site(spec, bond, h, v);
  for (int s = 0; s < 16; ++s) {
    double ref = 0.0;
    for (int t = 0; t < 16; ++t) {
      if ((s & 0b1010) != (t & 0b1010)) continue;
      const int rs = ((s >> 2) & 1) * 2 + (s & 1), rt = ((t >> 2) & 1) * 2 + (t & 1);
      ref += h(rs, rt) * v[t];
    }
    EXPECT_NEAR(got[s], ref, 1e-14);
  }
}

TEST(DensePropagator, TrotterizedGibbsIsSecondOrder) {
  const auto spec = make_model("tfim", 2.9, 2, 2);
  const auto obs = parse_observable(spec, "C1");
  const double exact = gibbs_expectation(spec, 1.0, obs);
  const auto order = lattice_bonds(2, 2);
  std::vector<double> err;
  for (std::size_t steps : {10u, 20u, 40u}) err.push_back(trotter_gibbs_expectation(spec, 0.5 / steps, steps, order, obs) - exact);
  EXPECT_NEAR(err[0] / err[1], 4.0, 0.2);
  EXPECT_NEAR(err[1] / err[2], 4.0, 0.2);
}
