#pragma once

// Sequential projective sampling of a PEPS in the sigma^z product basis,
// site after site and row after row, plus one full METTS step.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metts/errors.hpp"
#include "metts/models.hpp"
#include "metts/observables.hpp"
#include "metts/peps.hpp"
#include "metts/rng.hpp"
#include "metts/trotter_ntu.hpp"
#include "metts/zipper.hpp"

namespace metts {

inline constexpr double kNegativeProbabilityTolerance = 1e-8;
inline constexpr double kDegenerateMass = 1e-12;

struct SampleResult {
  Configuration config;
  double log_prob = 0.0;
  /// Normalized outcome probabilities per site, row-major, d entries each.
  std::vector<std::vector<double>> conditionals;
  std::uint64_t seed = 0;
  std::uint64_t draws = 0;  ///< generator draw count after sampling
};

struct SampleOptions {
  std::size_t chi = 16;
  double rel_cutoff = kDefaultRelCutoff;
  /// Carry the measured rows as a single-layer boundary; the double-layer
  /// top is then its outer product with itself.
  bool single_layer = false;
};

namespace detail {

/// Right environments of one row window: env[y] covers columns y..ly-1,
/// axes (top bond, row bond, bottom bond).
inline std::vector<Tensor> right_environments(const BoundaryMps& top, const std::vector<Tensor>& row,
                                              const BoundaryMps& bottom) {
  const std::size_t n = row.size();
  std::vector<Tensor> env(n + 1);
  env[n] = Tensor({1, 1, 1}, 1.0);
  for (std::size_t y = n; y-- > 0;) {
    const Tensor a = einsum("auc,crf->aurf", top.tensors[y], env[y + 1]);
    const Tensor b = einsum("aurf,uldr->aldf", a, row[y]);
    Tensor e = einsum("aldf,bdf->alb", b, bottom.tensors[y]);
    const double m = e.max_abs();
    if (m > 0.0) e *= 1.0 / m;
    env[y] = std::move(e);
  }
  return env;
}

inline Tensor extend_left(const Tensor& left, const Tensor& top, const Tensor& t, const Tensor& bottom) {
  const Tensor x = einsum("arb,auc->rbuc", left, top);
  const Tensor z = einsum("rbuc,urdq->bcdq", x, t);
  return einsum("bcdq,bde->cqe", z, bottom);
}

/// Double-layer boundary from a single-layer one: every leg becomes the
/// (ket, bra) pair, matching the fusion order of transfer_tensor.
inline BoundaryMps double_layer(const BoundaryMps& s) {
  BoundaryMps out;
  out.log_scale = 2.0 * s.log_scale;
  out.canonical = s.canonical;
  for (const auto& t : s.tensors) {
    const auto& sh = t.shape();
    out.tensors.push_back(einsum("auc,AUC->aAuUcC", t, t).reshape({sh[0] * sh[0], sh[1] * sh[1], sh[2] * sh[2]}));
  }
  out.chi = out.max_bond();
  return out;
}

/// Single-layer row of a fully projected row: site tensors at their labels.
inline std::vector<Tensor> projected_row(const PepsState& state, std::size_t x, const Configuration& c) {
  std::vector<Tensor> row;
  for (std::size_t y = 0; y < state.ly; ++y) {
    const Tensor& t = state.at(x, y);
    const auto& sh = t.shape();
    Tensor p({sh[0], sh[1], sh[2], sh[3]});
    const std::size_t d = sh[4];
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = t[i * d + c(x, y)];
    row.push_back(std::move(p));
  }
  return row;
}

}  // namespace detail

/// Turns raw outcome weights into probabilities. Slightly negative values
/// (truncation noise) are clamped to zero; anything below the tolerance, or
/// no mass at all, is an error.
inline void normalize_conditionals(std::vector<double>& w, const std::string& where = "") {
  double total = 0.0;
  for (double v : w) total += v;
  if (!(total > 0.0) || !std::isfinite(total))
    throw ZeroNormError("degenerate state: no probability mass at site " + where);
  double mass = 0.0;
  for (auto& p : w) {
    p /= total;
    if (p < -kNegativeProbabilityTolerance)
      throw ContractionAccuracyError("negative conditional probability " + std::to_string(p) + " at site " + where);
    if (p < 0.0) p = 0.0;
    mass += p;
  }
  if (mass < kDegenerateMass) throw ZeroNormError("degenerate state: vanishing probability mass at site " + where);
  for (auto& p : w) p /= mass;
}

/// Draws one basis configuration with probability |<phi|psi>|^2 / <psi|psi>
/// up to boundary truncation.
inline SampleResult sample_configuration(const PepsState& input, const SampleOptions& opt, Rng& rng) {
  input.validate();
  const std::size_t lx = input.lx, ly = input.ly, d = input.d;
  const bool single = opt.single_layer && !input.ancilla;
  ZipOptions zopt;
  zopt.chi = opt.chi;
  zopt.rel_cutoff = opt.rel_cutoff;

  std::vector<BoundaryMps> bottom(lx + 1);
  bottom[lx] = trivial_boundary(ly);
  for (std::size_t x = lx; x-- > 1;)
    bottom[x] = zip_row(bottom[x + 1], flip_row(row_transfer_tensors(input, x)), zopt).boundary;

  std::vector<Tensor> projectors;
  for (std::size_t i = 0; i < d; ++i) projectors.push_back(pauli::projector(i, d));

  PepsState state = input;
  SampleResult res{Configuration(lx, ly), 0.0, {}, rng.seed(), 0};
  res.conditionals.reserve(lx * ly);
  BoundaryMps top = trivial_boundary(ly);
  BoundaryMps top_single = trivial_boundary(ly);
  for (std::size_t x = 0; x < lx; ++x) {
    const BoundaryMps window_top = single && x > 0 ? detail::double_layer(top_single) : top;
    std::vector<Tensor> row = row_transfer_tensors(state, x);
    const auto right = detail::right_environments(window_top, row, bottom[x + 1]);
    Tensor left({1, 1, 1}, 1.0);
    for (std::size_t y = 0; y < ly; ++y) {
      std::vector<double> w(d);
      std::vector<Tensor> candidates;
      for (std::size_t i = 0; i < d; ++i) {
        candidates.push_back(transfer_tensor(state.at(x, y), projectors[i]));
        const Tensor l = detail::extend_left(left, window_top.tensors[y], candidates[i], bottom[x + 1].tensors[y]);
        w[i] = dot(l, right[y + 1]);
      }
      normalize_conditionals(w, "(" + std::to_string(x) + ", " + std::to_string(y) + ")");

      const double u = rng.uniform();
      std::size_t pick = 0;
      double acc = w[0];
      while (pick + 1 < d && (u >= acc || w[pick] == 0.0)) acc += w[++pick];
      while (w[pick] == 0.0) --pick;
      res.config.labels[x * ly + y] = static_cast<std::uint8_t>(pick);
      res.log_prob += std::log(w[pick]);
      res.conditionals.push_back(w);

      state = apply_projector(std::move(state), {x, y}, pick);
      row[y] = std::move(candidates[pick]);
      left = detail::extend_left(left, window_top.tensors[y], row[y], bottom[x + 1].tensors[y]);
      const double m = left.max_abs();
      if (m > 0.0) left *= 1.0 / m;
    }
    if (x + 1 == lx) break;
    if (single) {
      top_single = zip_row(top_single, detail::projected_row(state, x, res.config), zopt).boundary;
    } else {
      top = zip_row(top, row, zopt).boundary;
    }
  }
  res.draws = rng.draws();
  return res;
}

inline SampleResult sample_configuration(const PepsState& state, std::size_t chi, Rng& rng) {
  SampleOptions opt;
  opt.chi = chi;
  return sample_configuration(state, opt, rng);
}

/// Settings of one METTS step.
struct MettsSettings {
  EvolutionSchedule schedule;
  NtuOptions ntu;
  std::size_t chi = 16;         ///< expectation values
  std::size_t chi_sample = 16;  ///< sampling
  bool single_layer = false;
};

struct MettsStepResult {
  std::map<std::string, double> measurements;
  SampleResult sample;
  std::vector<NtuReport> reports;
  std::size_t max_bond = 1;
};

/// Evolves |phi> by beta/2, measures the observables on the resulting
/// typical state and samples the next product state from it.
inline MettsStepResult metts_step(const Configuration& config, const ModelSpec& model, const MettsSettings& settings,
                                  Rng& rng, const std::vector<Observable>& observables) {
  if (config.lx != model.lx || config.ly != model.ly) throw InputError("configuration does not match lattice");
  MettsStepResult out;
  auto [psi, reports] = evolve_with_reports(product_state(config, model.d), model, settings.schedule, settings.ntu);
  out.reports = std::move(reports);
  out.max_bond = psi.max_bond();
  if (!observables.empty()) {
    const ObservableEvaluator eval(psi, settings.chi);
    for (const auto& o : observables) out.measurements[o.name] = eval.evaluate(o);
  }
  SampleOptions sopt;
  sopt.chi = settings.chi_sample;
  sopt.single_layer = settings.single_layer;
  out.sample = sample_configuration(psi, sopt, rng);
  return out;
}

}  // namespace metts
