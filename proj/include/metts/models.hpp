#pragma once

// Spin models on the open square lattice: bond terms for Trotterization,
// the dense Hamiltonian for the exact oracle, and the Pauli-string
// observables both sides evaluate.
//
// Basis convention: label 0 is spin up (sigma^z = +1), label 1 is spin down.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "metts/errors.hpp"
#include "metts/tensor.hpp"

namespace metts {

struct Site {
  std::size_t x = 0;  ///< row, from the top
  std::size_t y = 0;  ///< column, from the left
  friend bool operator==(const Site&, const Site&) = default;
};

struct Bond {
  Site a, b;  ///< a precedes b in row-major order; b is a's right or lower neighbour
  bool horizontal() const { return a.x == b.x; }
  friend bool operator==(const Bond&, const Bond&) = default;
};

inline std::string to_string(const Bond& bond) {
  return "(" + std::to_string(bond.a.x) + "," + std::to_string(bond.a.y) + ")-(" +
         std::to_string(bond.b.x) + "," + std::to_string(bond.b.y) + ")";
}

/// Horizontal bonds row by row, left to right, then vertical bonds column
/// by column, top to bottom.
inline std::vector<Bond> lattice_bonds(std::size_t lx, std::size_t ly) {
  std::vector<Bond> bonds;
  for (std::size_t x = 0; x < lx; ++x)
    for (std::size_t y = 0; y + 1 < ly; ++y) bonds.push_back({{x, y}, {x, y + 1}});
  for (std::size_t y = 0; y < ly; ++y)
    for (std::size_t x = 0; x + 1 < lx; ++x) bonds.push_back({{x, y}, {x + 1, y}});
  return bonds;
}

inline std::size_t coordination(std::size_t lx, std::size_t ly, Site s) {
  std::size_t z = 0;
  if (s.x > 0) ++z;
  if (s.x + 1 < lx) ++z;
  if (s.y > 0) ++z;
  if (s.y + 1 < ly) ++z;
  return z;
}

namespace pauli {

inline Tensor identity() { return Tensor::identity(2); }
inline Tensor z() { return Tensor({2, 2}, {1.0, 0.0, 0.0, -1.0}); }
inline Tensor x() { return Tensor({2, 2}, {0.0, 1.0, 1.0, 0.0}); }
/// |label><label|
inline Tensor projector(std::size_t label, std::size_t d = 2) {
  Tensor p({d, d});
  p.at({label, label}) = 1.0;
  return p;
}

}  // namespace pauli

/// Kronecker product of two d x d matrices as a d^2 x d^2 matrix with
/// rows (s1', s2') and columns (s1, s2).
inline Tensor kron(const Tensor& a, const Tensor& b) {
  const std::size_t da = a.extent(0), db = b.extent(0);
  return transpose("ijkl->ikjl", outer(a, b)).reshape({da * db, da * db});
}

enum class ModelKind { Tfim };

struct ModelSpec {
  ModelKind kind = ModelKind::Tfim;
  double g = 0.0;
  std::size_t lx = 1, ly = 2;
  std::size_t d = 2;

  std::size_t sites() const { return lx * ly; }
};

/// Registry lookup by config name.
inline ModelSpec make_model(const std::string& name, double g, std::size_t lx, std::size_t ly) {
  if (name == "hubbard" || name == "fermi-hubbard")
    throw UnsupportedModelError("model '" + name +
                                "' needs fermionic swap gates and symmetric tensors; not supported");
  if (name != "tfim") throw UnsupportedModelError("unknown model '" + name + "'");
  if (!std::isfinite(g)) throw InputError("transverse field g must be finite");
  if (lx == 0 || ly == 0 || lx * ly < 2) throw InputError("lattice needs at least two sites");
  return ModelSpec{ModelKind::Tfim, g, lx, ly, 2};
}

inline void check_bond(const ModelSpec& spec, const Bond& bond) {
  const bool in = bond.a.x < spec.lx && bond.a.y < spec.ly && bond.b.x < spec.lx && bond.b.y < spec.ly;
  const bool nn = (bond.a.x == bond.b.x && bond.a.y + 1 == bond.b.y) ||
                  (bond.a.y == bond.b.y && bond.a.x + 1 == bond.b.x);
  if (!in || !nn) throw InputError("invalid bond " + to_string(bond));
}

/// h_ab = -Z Z - (g/z_a) X I - (g/z_b) I X, so the sum over all bonds is
/// H = -sum_<ij> Z_i Z_j - g sum_j X_j exactly on the open lattice.
inline Tensor bond_hamiltonian(const ModelSpec& spec, const Bond& bond) {
  check_bond(spec, bond);
  const double fa = spec.g / static_cast<double>(coordination(spec.lx, spec.ly, bond.a));
  const double fb = spec.g / static_cast<double>(coordination(spec.lx, spec.ly, bond.b));
  const auto id = pauli::identity();
  return -1.0 * kron(pauli::z(), pauli::z()) - fa * kron(pauli::x(), id) - fb * kron(id, pauli::x());
}

inline constexpr std::size_t kDenseHamiltonianCap = 14;

inline std::size_t site_index(const ModelSpec& spec, Site s) { return s.x * spec.ly + s.y; }

/// Bit of basis state `state` holding site k; site 0 is the most significant.
inline int spin_bit(std::size_t state, std::size_t k, std::size_t n) {
  return static_cast<int>((state >> (n - 1 - k)) & 1u);
}

inline Eigen::MatrixXd dense_hamiltonian(const ModelSpec& spec) {
  const std::size_t n = spec.sites();
  if (n > kDenseHamiltonianCap)
    throw SizeCapError("dense Hamiltonian limited to " + std::to_string(kDenseHamiltonianCap) + " sites");
  const std::size_t dim = std::size_t{1} << n;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  const auto bonds = lattice_bonds(spec.lx, spec.ly);
  for (std::size_t s = 0; s < dim; ++s) {
    double diag = 0.0;
    for (const auto& b : bonds) {
      const int za = 1 - 2 * spin_bit(s, site_index(spec, b.a), n);
      const int zb = 1 - 2 * spin_bit(s, site_index(spec, b.b), n);
      diag -= za * zb;
    }
    const auto si = static_cast<Eigen::Index>(s);
    h(si, si) = diag;
    for (std::size_t k = 0; k < n; ++k) {
      const auto flipped = static_cast<Eigen::Index>(s ^ (std::size_t{1} << (n - 1 - k)));
      h(flipped, si) -= spec.g;
    }
  }
  return h;
}

// -- observables --------------------------------------------------------

enum class Pauli { X, Z };

struct PauliFactor {
  Site site;
  Pauli op;
};

/// coefficient * product of single-site Paulis (on distinct sites).
struct PauliTerm {
  double coefficient = 1.0;
  std::vector<PauliFactor> factors;
};

struct Observable {
  std::string name;
  std::vector<PauliTerm> terms;
};

inline Tensor pauli_matrix(Pauli p) { return p == Pauli::X ? pauli::x() : pauli::z(); }

inline Site center_site(const ModelSpec& spec) { return {(spec.lx - 1) / 2, (spec.ly - 1) / 2}; }

/// Sites of the row correlator C_R: the central site and the site R columns
/// to its right. When that runs off the lattice the pair is shifted left so
/// it ends on the last column.
inline std::pair<Site, Site> correlator_sites(const ModelSpec& spec, std::size_t r) {
  const Site c = center_site(spec);
  if (r == 0 || r >= spec.ly)
    throw InputError("correlator distance " + std::to_string(r) + " does not fit in a row of " +
                     std::to_string(spec.ly));
  if (c.y + r < spec.ly) return {c, {c.x, c.y + r}};
  return {{c.x, spec.ly - 1 - r}, {c.x, spec.ly - 1}};
}

/// Named observables: "C<R>" (central-row sigma^z sigma^z at distance R),
/// "sz" and "sx" (central site), "mz" (mean sigma^z), "energy" (<H>/N).
inline Observable parse_observable(const ModelSpec& spec, const std::string& name) {
  Observable obs{name, {}};
  if (name.size() > 1 && name[0] == 'C') {
    std::size_t pos = 0;
    unsigned long r = 0;
    try {
      r = std::stoul(name.substr(1), &pos);
    } catch (const std::exception&) {
      throw InputError("unknown observable '" + name + "'");
    }
    if (pos + 1 != name.size()) throw InputError("unknown observable '" + name + "'");
    auto [a, b] = correlator_sites(spec, r);
    obs.terms.push_back({1.0, {{a, Pauli::Z}, {b, Pauli::Z}}});
  } else if (name == "sz" || name == "sx") {
    obs.terms.push_back({1.0, {{center_site(spec), name == "sz" ? Pauli::Z : Pauli::X}}});
  } else if (name == "mz") {
    const double w = 1.0 / static_cast<double>(spec.sites());
    for (std::size_t x = 0; x < spec.lx; ++x)
      for (std::size_t y = 0; y < spec.ly; ++y) obs.terms.push_back({w, {{{x, y}, Pauli::Z}}});
  } else if (name == "energy") {
    const double w = 1.0 / static_cast<double>(spec.sites());
    for (const auto& b : lattice_bonds(spec.lx, spec.ly))
      obs.terms.push_back({-w, {{b.a, Pauli::Z}, {b.b, Pauli::Z}}});
    for (std::size_t x = 0; x < spec.lx; ++x)
      for (std::size_t y = 0; y < spec.ly; ++y) obs.terms.push_back({-w * spec.g, {{{x, y}, Pauli::X}}});
  } else {
    throw InputError("unknown observable '" + name + "'");
  }
  return obs;
}

}  // namespace metts
