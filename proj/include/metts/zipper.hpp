#pragma once

// Boundary MPS for finite PEPS, built with the zipper: a row of transfer
// tensors is attached to the boundary one column at a time, with an SVD
// truncation to bond chi after each attachment. Per step the matrix being
// decomposed is (chi D^2) x (D^2 chi), so the cost is D^6 chi^3.
//
// Boundary tensors have axes (left bond, physical, right bond). For a top
// boundary the physical leg connects to the up legs of the next row; for a
// bottom boundary, to the down legs of the row above it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "metts/errors.hpp"
#include "metts/peps.hpp"
#include "metts/tensor.hpp"

namespace metts {

enum class Canonical { None, Left, Right, Both };

struct BoundaryMps {
  std::vector<Tensor> tensors;
  Canonical canonical = Canonical::None;
  std::size_t chi = 1;
  /// The represented vector is exp(log_scale) times the tensor chain.
  double log_scale = 0.0;

  std::size_t width() const { return tensors.size(); }
  std::size_t max_bond() const {
    std::size_t m = 1;
    for (const auto& t : tensors) m = std::max({m, t.extent(0), t.extent(2)});
    return m;
  }
  bool right_canonical() const { return canonical == Canonical::Right || canonical == Canonical::Both; }
  bool left_canonical() const { return canonical == Canonical::Left || canonical == Canonical::Both; }
};

struct ZipStep {
  std::size_t y = 0;
  std::vector<double> lambda;
  double discarded_weight = 0.0;
};

struct ZipOptions {
  std::size_t chi = 16;
  double rel_cutoff = kDefaultRelCutoff;
  /// Pull the norm of each zipped row into log_scale.
  bool rescale = true;
  /// Before every truncation, assert that the tensors already produced are
  /// left-canonical and the unvisited input tensors right-canonical.
  bool verify_canonical = false;
};

struct ZipResult {
  BoundaryMps boundary;
  std::vector<ZipStep> steps;
};

inline BoundaryMps trivial_boundary(std::size_t width) {
  if (width == 0) throw InputError("boundary width must be at least 1");
  BoundaryMps b;
  b.tensors.assign(width, Tensor({1, 1, 1}, 1.0));
  b.canonical = Canonical::Both;
  b.chi = 1;
  return b;
}

/// max |T^T T - 1| over the right bond (left-canonical isometry).
inline double left_isometry_error(const Tensor& t) {
  const Tensor g = einsum("lpr,lps->rs", t, t);
  const std::size_t n = g.extent(0);
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) err = std::max(err, std::abs(g.at({i, j}) - (i == j ? 1.0 : 0.0)));
  return err;
}

/// max |T T^T - 1| over the left bond (right-canonical isometry).
inline double right_isometry_error(const Tensor& t) {
  const Tensor g = einsum("lpr,mpr->lm", t, t);
  const std::size_t n = g.extent(0);
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) err = std::max(err, std::abs(g.at({i, j}) - (i == j ? 1.0 : 0.0)));
  return err;
}

inline BoundaryMps mirror(const BoundaryMps& b) {
  BoundaryMps out = b;
  out.tensors.assign(b.tensors.rbegin(), b.tensors.rend());
  for (auto& t : out.tensors) t = t.permute({2, 1, 0});
  if (b.canonical == Canonical::Left) out.canonical = Canonical::Right;
  else if (b.canonical == Canonical::Right) out.canonical = Canonical::Left;
  return out;
}

/// Row of (up, left, down, right) tensors read right to left.
inline std::vector<Tensor> mirror_row(const std::vector<Tensor>& row) {
  std::vector<Tensor> out;
  out.reserve(row.size());
  for (auto it = row.rbegin(); it != row.rend(); ++it) out.push_back(it->permute({0, 3, 2, 1}));
  return out;
}

/// Swaps up and down so bottom boundaries reuse the top-boundary code.
inline std::vector<Tensor> flip_row(const std::vector<Tensor>& row) {
  std::vector<Tensor> out;
  out.reserve(row.size());
  for (const auto& t : row) out.push_back(t.permute({2, 1, 0, 3}));
  return out;
}

namespace detail {

inline BoundaryMps left_canonicalize(BoundaryMps mps) {
  const std::size_t n = mps.width();
  for (std::size_t i = 0; i < n; ++i) {
    auto qr = qr_split(mps.tensors[i], {0, 1});
    mps.tensors[i] = std::move(qr.q);
    if (i + 1 < n) {
      mps.tensors[i + 1] = einsum("kr,rps->kps", qr.r, mps.tensors[i + 1]);
    } else {
      const double r = qr.r.item();
      if (!(r > 0.0)) throw ZeroNormError("boundary MPS has zero norm");
      mps.log_scale += std::log(r);
    }
  }
  mps.canonical = Canonical::Left;
  return mps;
}

}  // namespace detail

/// Brings the MPS into left- or right-canonical form with unit-norm tensors;
/// the norm moves into log_scale.
inline BoundaryMps canonicalize(const BoundaryMps& mps, Canonical direction) {
  if (direction == Canonical::Left) return detail::left_canonicalize(mps);
  if (direction == Canonical::Right) return mirror(detail::left_canonicalize(mirror(mps)));
  throw InputError("canonicalize direction must be Left or Right");
}

namespace detail {

/// Zips left to right; `boundary` must be right-canonical for the local
/// truncations to be optimal. Output is left-canonical.
inline ZipResult zip_left_to_right(const BoundaryMps& boundary, const std::vector<Tensor>& row,
                                   const ZipOptions& opt) {
  const std::size_t n = row.size();
  ZipResult res;
  res.boundary.chi = opt.chi;
  res.boundary.log_scale = boundary.log_scale;
  res.boundary.tensors.reserve(n);
  Tensor carry({1, 1, 1}, 1.0);  // (new left bond, row bond, old boundary bond)
  for (std::size_t y = 0; y < n; ++y) {
    const Tensor& t = row[y];
    const Tensor& b = boundary.tensors[y];
    if (t.rank() != 4) throw InputError("row tensors must have rank 4");
    if (b.extent(1) != t.extent(0)) throw InputError("boundary physical leg does not match row up leg");
    const Tensor x = einsum("arb,buc->aruc", carry, b);
    const Tensor m = einsum("aruc,urdq->adqc", x, t);
    if (opt.verify_canonical) {
      for (const auto& done : res.boundary.tensors)
        if (left_isometry_error(done) > 1e-10) throw ContractionAccuracyError("zipper lost left-canonical form");
      for (std::size_t k = y + 1; k < n; ++k)
        if (right_isometry_error(boundary.tensors[k]) > 1e-10)
          throw ContractionAccuracyError("zipper input is not right-canonical");
    }
    auto svd = svd_truncated(m, {0, 1}, opt.chi, opt.rel_cutoff);
    res.steps.push_back({y, svd.s, svd.discarded_weight});
    if (y + 1 < n) {
      carry = scale_leading(svd.s, std::move(svd.v));
      res.boundary.tensors.push_back(std::move(svd.u));
    } else {
      const double s0 = svd.s[0];
      if (!(s0 > 0.0)) throw ZeroNormError("zipped row has zero norm");
      const double sign = svd.v[0] < 0 ? -1.0 : 1.0;
      if (opt.rescale) {
        res.boundary.log_scale += std::log(s0);
        res.boundary.tensors.push_back(sign * std::move(svd.u));
      } else {
        res.boundary.tensors.push_back((sign * s0) * std::move(svd.u));
      }
    }
  }
  // without rescaling the last tensor carries the norm; it is an isometry up to that scalar
  res.boundary.canonical = Canonical::Left;
  return res;
}

}  // namespace detail

/// Applies one row of transfer tensors to the boundary. A right-canonical
/// boundary is zipped left to right (result left-canonical); a left-canonical
/// one right to left (result right-canonical). Any other boundary is first
/// brought to right-canonical form.
inline ZipResult zip_row(const BoundaryMps& boundary, const std::vector<Tensor>& row, const ZipOptions& opt) {
  if (boundary.width() != row.size()) throw InputError("boundary width does not match row width");
  if (opt.chi == 0) throw InputError("chi must be positive");
  if (boundary.right_canonical()) return detail::zip_left_to_right(boundary, row, opt);
  if (boundary.left_canonical()) {
    auto res = detail::zip_left_to_right(mirror(boundary), mirror_row(row), opt);
    res.boundary = mirror(res.boundary);
    std::reverse(res.steps.begin(), res.steps.end());
    for (std::size_t i = 0; i < res.steps.size(); ++i) res.steps[i].y = i;
    return res;
  }
  return detail::zip_left_to_right(canonicalize(boundary, Canonical::Right), row, opt);
}

inline ZipResult zip_row(const BoundaryMps& boundary, const std::vector<Tensor>& row, std::size_t chi,
                         double rel_cutoff = kDefaultRelCutoff) {
  ZipOptions opt;
  opt.chi = chi;
  opt.rel_cutoff = rel_cutoff;
  return zip_row(boundary, row, opt);
}

/// Untruncated MPO-MPS product; bonds become (boundary bond x row bond).
inline BoundaryMps apply_row_exact(const BoundaryMps& boundary, const std::vector<Tensor>& row) {
  if (boundary.width() != row.size()) throw InputError("boundary width does not match row width");
  BoundaryMps out;
  out.log_scale = boundary.log_scale;
  for (std::size_t y = 0; y < row.size(); ++y) {
    const Tensor n = einsum("buc,uldr->bldcr", boundary.tensors[y], row[y]);
    const auto& s = n.shape();
    out.tensors.push_back(n.reshape({s[0] * s[1], s[2], s[3] * s[4]}));
  }
  out.chi = out.max_bond();
  return out;
}

/// <a|b> as mantissa * exp(log_scale).
struct ScaledValue {
  double mantissa = 0.0;
  double log_scale = 0.0;
  double value() const { return mantissa * std::exp(log_scale); }
};

inline ScaledValue overlap(const BoundaryMps& a, const BoundaryMps& b) {
  if (a.width() != b.width()) throw InputError("overlap of MPS with different widths");
  Tensor env({1, 1}, 1.0);
  double log_acc = a.log_scale + b.log_scale;
  for (std::size_t i = 0; i < a.width(); ++i) {
    const Tensor x = einsum("ab,apc->bpc", env, a.tensors[i]);
    env = einsum("bpc,bpe->ce", x, b.tensors[i]);
    const double m = env.max_abs();
    if (m > 0.0) {
      env *= 1.0 / m;
      log_acc += std::log(m);
    }
  }
  return {env.item(), log_acc};
}

/// <a|b> / (|a| |b|).
inline double normalized_overlap(const BoundaryMps& a, const BoundaryMps& b) {
  const auto ab = overlap(a, b), aa = overlap(a, a), bb = overlap(b, b);
  return ab.mantissa / std::sqrt(aa.mantissa * bb.mantissa) *
         std::exp(ab.log_scale - 0.5 * (aa.log_scale + bb.log_scale));
}

/// Transfer tensors of row x; `ops[y]`, when set, is inserted at column y.
inline std::vector<Tensor> row_transfer_tensors(const PepsState& state, std::size_t x,
                                                const std::vector<const Tensor*>& ops = {}) {
  std::vector<Tensor> row;
  row.reserve(state.ly);
  for (std::size_t y = 0; y < state.ly; ++y)
    row.push_back(transfer_tensor(state.at(x, y), ops.empty() ? nullptr : ops.at(y)));
  return row;
}

/// top[k] approximates rows 0..k-1 contracted; bottom[k] rows k..lx-1.
/// top[0] and bottom[lx] are trivial.
struct Boundaries {
  std::vector<BoundaryMps> top;
  std::vector<BoundaryMps> bottom;
  std::vector<std::vector<ZipStep>> top_steps, bottom_steps;
};

/// Operator insertions per site (row-major); nullptr means none.
using SiteOperators = std::vector<const Tensor*>;

inline std::vector<const Tensor*> row_ops(const SiteOperators& ops, std::size_t x, std::size_t ly) {
  if (ops.empty()) return {};
  return {ops.begin() + static_cast<std::ptrdiff_t>(x * ly), ops.begin() + static_cast<std::ptrdiff_t>((x + 1) * ly)};
}

inline Boundaries boundaries_all_rows(const PepsState& state, const ZipOptions& opt, const SiteOperators& ops = {}) {
  if (opt.chi == 0) throw InputError("chi must be positive");
  if (!ops.empty() && ops.size() != state.lx * state.ly) throw InputError("operator grid size mismatch");
  Boundaries out;
  out.top.push_back(trivial_boundary(state.ly));
  out.top_steps.emplace_back();
  for (std::size_t x = 0; x < state.lx; ++x) {
    auto res = zip_row(out.top.back(), row_transfer_tensors(state, x, row_ops(ops, x, state.ly)), opt);
    out.top.push_back(std::move(res.boundary));
    out.top_steps.push_back(std::move(res.steps));
  }
  std::vector<BoundaryMps> bottom{trivial_boundary(state.ly)};
  std::vector<std::vector<ZipStep>> bottom_steps(1);
  for (std::size_t x = state.lx; x-- > 0;) {
    auto res = zip_row(bottom.back(), flip_row(row_transfer_tensors(state, x, row_ops(ops, x, state.ly))), opt);
    bottom.push_back(std::move(res.boundary));
    bottom_steps.push_back(std::move(res.steps));
  }
  out.bottom.assign(bottom.rbegin(), bottom.rend());
  out.bottom_steps.assign(bottom_steps.rbegin(), bottom_steps.rend());
  return out;
}

inline Boundaries boundaries_all_rows(const PepsState& state, std::size_t chi, double rel_cutoff = kDefaultRelCutoff,
                                      const SiteOperators& ops = {}) {
  ZipOptions opt;
  opt.chi = chi;
  opt.rel_cutoff = rel_cutoff;
  return boundaries_all_rows(state, opt, ops);
}

}  // namespace metts
