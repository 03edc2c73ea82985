#pragma once

// Exact dense thermal averages and imaginary-time propagation for small
// lattices; the reference every approximate result is checked against.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "metts/errors.hpp"
#include "metts/models.hpp"
#include "metts/peps.hpp"

namespace metts {

inline constexpr std::size_t kEdSiteCap = 12;

struct Eigensystem {
  Eigen::VectorXd energies;  ///< ascending
  Eigen::MatrixXd vectors;   ///< columns are eigenvectors
};

/// Eigensystem of the dense Hamiltonian, computed once per model.
inline std::shared_ptr<const Eigensystem> eigensystem(const ModelSpec& spec) {
  if (spec.sites() > kEdSiteCap)
    throw SizeCapError("exact diagonalization limited to " + std::to_string(kEdSiteCap) + " sites");
  using Key = std::tuple<int, double, std::size_t, std::size_t>;
  static std::mutex mutex;
  static std::map<Key, std::shared_ptr<const Eigensystem>> cache;
  const Key key{static_cast<int>(spec.kind), spec.g, spec.lx, spec.ly};
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense_hamiltonian(spec));
  auto sys = std::make_shared<const Eigensystem>(Eigensystem{es.eigenvalues(), es.eigenvectors()});
  std::lock_guard lock(mutex);
  return cache.emplace(key, std::move(sys)).first->second;
}

inline std::size_t basis_index(const Configuration& c) {
  const std::size_t n = c.labels.size();
  std::size_t idx = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (c.labels[k] > 1) throw InputError("dense oracle supports spin-1/2 labels only");
    idx |= static_cast<std::size_t>(c.labels[k]) << (n - 1 - k);
  }
  return idx;
}

inline Eigen::VectorXd apply_term(const ModelSpec& spec, const PauliTerm& term, const Eigen::VectorXd& v) {
  const std::size_t n = spec.sites();
  std::size_t flip = 0;
  std::vector<std::size_t> z_bits;
  for (const auto& f : term.factors) {
    const std::size_t bit = std::size_t{1} << (n - 1 - site_index(spec, f.site));
    if (f.op == Pauli::X) flip ^= bit;
    else z_bits.push_back(bit);
  }
  Eigen::VectorXd out(v.size());
  for (Eigen::Index s = 0; s < v.size(); ++s) {
    const auto src = static_cast<std::size_t>(s);
    // O|src> = sign |src ^ flip>, Z factors act before the flips
    double sign = term.coefficient;
    for (auto b : z_bits) sign = (src & b) ? -sign : sign;
    out[static_cast<Eigen::Index>(src ^ flip)] = sign * v[s];
  }
  return out;
}

inline Eigen::VectorXd apply_observable(const ModelSpec& spec, const Observable& obs, const Eigen::VectorXd& v) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(v.size());
  for (const auto& t : obs.terms) out += apply_term(spec, t, v);
  return out;
}

/// <v|O|v> / <v|v>.
inline double dense_expectation(const ModelSpec& spec, const Observable& obs, const Eigen::VectorXd& v) {
  return v.dot(apply_observable(spec, obs, v)) / v.squaredNorm();
}

/// Tr(O e^{-beta H}) / Tr(e^{-beta H}).
inline double gibbs_expectation(const ModelSpec& spec, double beta, const Observable& obs) {
  if (beta < 0.0) throw InputError("beta must be non-negative");
  if (beta == 0.0) {
    // Tr(O) / 2^N term by term; only terms without sigma^x are diagonal
    if (spec.sites() > kEdSiteCap)
      throw SizeCapError("exact diagonalization limited to " + std::to_string(kEdSiteCap) + " sites");
    const auto dim = static_cast<Eigen::Index>(std::size_t{1} << spec.sites());
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(dim);
    double tr = 0.0;
    for (const auto& t : obs.terms) {
      bool diagonal = true;
      for (const auto& f : t.factors) diagonal = diagonal && f.op == Pauli::Z;
      if (diagonal) tr += apply_term(spec, t, ones).sum();
    }
    return tr / static_cast<double>(dim);
  }
  const auto sys = eigensystem(spec);
  const double e0 = sys->energies[0];
  double z = 0.0, acc = 0.0;
  for (Eigen::Index n = 0; n < sys->energies.size(); ++n) {
    const double w = std::exp(-beta * (sys->energies[n] - e0));
    if (w < 1e-300) continue;
    const Eigen::VectorXd vn = sys->vectors.col(n);
    z += w;
    acc += w * vn.dot(apply_observable(spec, obs, vn));
  }
  return acc / z;
}

inline double partition_function(const ModelSpec& spec, double beta) {
  const auto sys = eigensystem(spec);
  return (-beta * sys->energies.array()).exp().sum();
}

/// e^{-tau H} v, unnormalized.
inline Eigen::VectorXd dense_propagate(const ModelSpec& spec, double tau, const Eigen::VectorXd& v) {
  const auto sys = eigensystem(spec);
  const Eigen::VectorXd coeff = sys->vectors.transpose() * v;
  const Eigen::VectorXd w = (-tau * sys->energies.array()).exp();
  return sys->vectors * (w.array() * coeff.array()).matrix();
}

struct MettsVector {
  Eigen::VectorXd psi;  ///< normalized e^{-beta H/2} |phi>
  double p = 0.0;       ///< <phi| e^{-beta H} |phi>
};

inline MettsVector exact_metts_propagate(const ModelSpec& spec, double beta_half, const Configuration& config) {
  if (config.lx != spec.lx || config.ly != spec.ly) throw InputError("configuration does not match lattice");
  const auto dim = static_cast<Eigen::Index>(std::size_t{1} << spec.sites());
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(dim);
  phi[static_cast<Eigen::Index>(basis_index(config))] = 1.0;
  MettsVector out;
  out.psi = dense_propagate(spec, beta_half, phi);
  out.p = out.psi.squaredNorm();
  out.psi /= std::sqrt(out.p);
  return out;
}

/// Applies a d^2 x d^2 operator (rows (s1', s2'), columns (s1, s2)) to the
/// two sites of `bond`.
inline Eigen::VectorXd apply_two_site(const ModelSpec& spec, const Bond& bond, const Eigen::Matrix4d& op,
                                      const Eigen::VectorXd& v) {
  const std::size_t n = spec.sites();
  const std::size_t ba = std::size_t{1} << (n - 1 - site_index(spec, bond.a));
  const std::size_t bb = std::size_t{1} << (n - 1 - site_index(spec, bond.b));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(v.size());
  for (Eigen::Index s = 0; s < v.size(); ++s) {
    const auto src = static_cast<std::size_t>(s);
    const std::size_t col = ((src & ba) ? 2 : 0) + ((src & bb) ? 1 : 0);
    const std::size_t rest = src & ~(ba | bb);
    for (std::size_t row = 0; row < 4; ++row) {
      const std::size_t dst = rest | ((row & 2) ? ba : 0) | ((row & 1) ? bb : 0);
      out[static_cast<Eigen::Index>(dst)] += op(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)) * v[s];
    }
  }
  return out;
}

/// Second-order Trotter approximation of e^{-steps dtau H} v: per step the
/// bond factors e^{-dtau h/2} in `order`, then in reverse.
inline Eigen::VectorXd dense_trotter_propagate(const ModelSpec& spec, double dtau, std::size_t steps,
                                               const std::vector<Bond>& order, Eigen::VectorXd v) {
  std::vector<Eigen::Matrix4d> gates;
  for (const auto& b : order) {
    const Eigen::Matrix4d h = bond_hamiltonian(spec, b).matrix(1);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(h);
    const Eigen::Vector4d w = (-0.5 * dtau * es.eigenvalues().array()).exp();
    gates.push_back(es.eigenvectors() * w.asDiagonal() * es.eigenvectors().transpose());
  }
  for (std::size_t step = 0; step < steps; ++step) {
    for (std::size_t i = 0; i < order.size(); ++i) v = apply_two_site(spec, order[i], gates[i], v);
    for (std::size_t i = order.size(); i-- > 0;) v = apply_two_site(spec, order[i], gates[i], v);
  }
  return v;
}

/// Tr(U^T O U) / Tr(U^T U) for the Trotterized U ~ e^{-beta H/2}: the
/// thermal average a purification sees when only Trotter error is present.
inline double trotter_gibbs_expectation(const ModelSpec& spec, double dtau, std::size_t steps,
                                        const std::vector<Bond>& order, const Observable& obs) {
  if (spec.sites() > kEdSiteCap) throw SizeCapError("dense Trotter oracle limited to " + std::to_string(kEdSiteCap) + " sites");
  const auto dim = static_cast<Eigen::Index>(std::size_t{1} << spec.sites());
  double num = 0.0, den = 0.0;
  for (Eigen::Index c = 0; c < dim; ++c) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(dim);
    e[c] = 1.0;
    const Eigen::VectorXd u = dense_trotter_propagate(spec, dtau, steps, order, e);
    num += u.dot(apply_observable(spec, obs, u));
    den += u.squaredNorm();
  }
  return num / den;
}

inline Configuration configuration_from_index(const ModelSpec& spec, std::size_t idx) {
  Configuration c(spec.lx, spec.ly);
  const std::size_t n = spec.sites();
  for (std::size_t k = 0; k < n; ++k) c.labels[k] = static_cast<std::uint8_t>((idx >> (n - 1 - k)) & 1u);
  return c;
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace metts
