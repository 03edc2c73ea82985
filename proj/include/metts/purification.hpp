#pragma once

// Thermal state as a PEPS with one ancilla per site. At beta = 0 each site
// is sum_i |i, i>; the Hamiltonian acts on the physical axes only, and
// expectation values trace the ancillas.

#include <cstddef>

#include "metts/errors.hpp"
#include "metts/models.hpp"
#include "metts/observables.hpp"
#include "metts/peps.hpp"
#include "metts/trotter_ntu.hpp"

namespace metts {

using PurifiedPeps = PepsState;

inline PurifiedPeps init_infinite_temperature(std::size_t lx, std::size_t ly, std::size_t d = 2) {
  if (lx == 0 || ly == 0) throw InputError("lattice extents must be positive");
  if (d == 0) throw InputError("physical dimension must be positive");
  PurifiedPeps s{lx, ly, d, true, {}, 0.0};
  Tensor site({1, 1, 1, 1, d, d});
  for (std::size_t i = 0; i < d; ++i) site.at({0, 0, 0, 0, i, i}) = 1.0;
  s.sites.assign(lx * ly, site);
  return s;
}

inline void check_purified(const PurifiedPeps& s) {
  if (!s.ancilla) throw InputError("state carries no ancilla axis");
  s.validate();
}

/// Imaginary-time evolution of the physical axes to schedule.beta_half,
/// with bond dimension capped at max_D.
inline PurifiedPeps evolve_purification(const PurifiedPeps& state, const ModelSpec& model,
                                        const EvolutionSchedule& schedule, std::size_t max_D, NtuOptions opts = {},
                                        const NtuObserver& observer = {}) {
  check_purified(state);
  opts.max_D = max_D;
  return evolve(state, model, schedule, opts, observer);
}

inline double expect_purified(const PurifiedPeps& state, Site site, const Tensor& op, std::size_t chi) {
  check_purified(state);
  return expect_site(state, site, op, chi);
}

inline double expect_purified(const PurifiedPeps& state, Site a, Site b, const Tensor& op_a, const Tensor& op_b,
                              std::size_t chi) {
  check_purified(state);
  return correlator(state, a, b, op_a, op_b, chi);
}

}  // namespace metts
