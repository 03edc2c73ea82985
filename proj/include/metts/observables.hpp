#pragma once

// Norms, one-site expectation values and two-point functions from the
// top/bottom boundary sandwich of a single row. The row window itself is
// contracted exactly, left to right, with running rescaling.

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <vector>

#include "metts/errors.hpp"
#include "metts/models.hpp"
#include "metts/peps.hpp"
#include "metts/zipper.hpp"

namespace metts {

/// Exact contraction of top boundary, one row of transfer tensors, and
/// bottom boundary.
inline ScaledValue window_value(const BoundaryMps& top, const std::vector<Tensor>& row, const BoundaryMps& bottom) {
  if (top.width() != row.size() || bottom.width() != row.size()) throw InputError("row window widths differ");
  Tensor env({1, 1, 1}, 1.0);  // (top bond, row bond, bottom bond)
  double log_acc = top.log_scale + bottom.log_scale;
  for (std::size_t y = 0; y < row.size(); ++y) {
    const Tensor x = einsum("arb,auc->rbuc", env, top.tensors[y]);
    const Tensor z = einsum("rbuc,urdq->bcdq", x, row[y]);
    env = einsum("bcdq,bde->cqe", z, bottom.tensors[y]);
    if (y + 1 < row.size()) {
      const double m = env.max_abs();
      if (m > 0.0) {
        env *= 1.0 / m;
        log_acc += std::log(m);
      }
    }
  }
  return {env.item(), log_acc};
}

inline double checked_ratio(const ScaledValue& num, const ScaledValue& den) {
  return num.mantissa / den.mantissa * std::exp(num.log_scale - den.log_scale);
}

inline void check_norm_mantissa(double mantissa) {
  if (mantissa < -1e-10) throw ContractionAccuracyError("negative norm from boundary contraction");
  if (!(mantissa > 0.0)) throw ZeroNormError("state has zero norm");
}

/// Boundaries of one state, shared by all observables evaluated on it.
class Environment {
 public:
  Environment(const PepsState& state, const ZipOptions& opt) : state_(state) {
    state_.validate();
    bounds_ = boundaries_all_rows(state_, opt);
    rows_.reserve(state_.lx);
    for (std::size_t x = 0; x < state_.lx; ++x) rows_.push_back(row_transfer_tensors(state_, x));
    row_norms_.reserve(state_.lx);
    for (std::size_t x = 0; x < state_.lx; ++x) {
      row_norms_.push_back(window_value(bounds_.top[x], rows_[x], bounds_.bottom[x + 1]));
      check_norm_mantissa(row_norms_.back().mantissa);
    }
  }
  Environment(const PepsState& state, std::size_t chi) : Environment(state, options(chi)) {}

  const PepsState& state() const { return state_; }
  const Boundaries& boundaries() const { return bounds_; }

  /// <psi|psi>, including the state's own log_scale.
  ScaledValue norm_sq() const {
    auto n = row_norms_.front();
    n.log_scale += 2.0 * state_.log_scale;
    return n;
  }

  double expect_site(Site s, const Tensor& op) const {
    check_site(s);
    auto row = rows_[s.x];
    row[s.y] = transfer_tensor(state_.at(s), op);
    return checked_ratio(window_value(bounds_.top[s.x], row, bounds_.bottom[s.x + 1]), row_norms_[s.x]);
  }

  /// <O_a O_b> for two sites in the same row (a == b multiplies the operators).
  double expect_pair_in_row(Site a, Site b, const Tensor& op_a, const Tensor& op_b) const {
    check_site(a);
    check_site(b);
    if (a.x != b.x) throw InputError("expect_pair_in_row needs sites in one row");
    auto row = rows_[a.x];
    if (a.y == b.y) {
      const Tensor prod = einsum("ij,jk->ik", op_a, op_b);
      row[a.y] = transfer_tensor(state_.at(a), prod);
    } else {
      row[a.y] = transfer_tensor(state_.at(a), op_a);
      row[b.y] = transfer_tensor(state_.at(b), op_b);
    }
    return checked_ratio(window_value(bounds_.top[a.x], row, bounds_.bottom[a.x + 1]), row_norms_[a.x]);
  }

  static ZipOptions options(std::size_t chi) {
    ZipOptions opt;
    opt.chi = chi;
    return opt;
  }

 private:
  void check_site(Site s) const {
    if (s.x >= state_.lx || s.y >= state_.ly) throw InputError("site outside the lattice");
  }

  PepsState state_;
  Boundaries bounds_;
  std::vector<std::vector<Tensor>> rows_;
  std::vector<ScaledValue> row_norms_;
};

/// Row-path evaluator plus a lazily built transposed environment for
/// column pairs.
class ObservableEvaluator {
 public:
  ObservableEvaluator(const PepsState& state, const ZipOptions& opt) : rows_(state, opt), opt_(opt) {}
  ObservableEvaluator(const PepsState& state, std::size_t chi) : ObservableEvaluator(state, Environment::options(chi)) {}

  const Environment& rows() const { return rows_; }

  double site(Site s, const Tensor& op) const { return rows_.expect_site(s, op); }

  double pair(Site a, Site b, const Tensor& op_a, const Tensor& op_b) const {
    if (a.x == b.x) return rows_.expect_pair_in_row(a, b, op_a, op_b);
    if (a.y == b.y) return columns().expect_pair_in_row({a.y, a.x}, {b.y, b.x}, op_a, op_b);
    throw InputError("two-point functions need collinear sites");
  }

  double evaluate(const Observable& obs) const {
    double total = 0.0;
    for (const auto& term : obs.terms) {
      double v = 0.0;
      if (term.factors.size() == 1) {
        v = site(term.factors[0].site, pauli_matrix(term.factors[0].op));
      } else if (term.factors.size() == 2) {
        v = pair(term.factors[0].site, term.factors[1].site, pauli_matrix(term.factors[0].op),
                 pauli_matrix(term.factors[1].op));
      } else {
        throw InputError("observable terms must act on one or two sites");
      }
      total += term.coefficient * v;
    }
    return total;
  }

 private:
  const Environment& columns() const {
    if (!cols_) cols_ = std::make_unique<Environment>(transposed(rows_.state()), opt_);
    return *cols_;
  }

  Environment rows_;
  ZipOptions opt_;
  mutable std::unique_ptr<Environment> cols_;
};

inline ScaledValue norm_sq(const PepsState& state, std::size_t chi) { return Environment(state, chi).norm_sq(); }

inline double expect_site(const PepsState& state, Site site, const Tensor& op, std::size_t chi) {
  return Environment(state, chi).expect_site(site, op);
}

/// Two-point function of collinear sites; column pairs go through the
/// transposed lattice.
inline double correlator(const PepsState& state, Site a, Site b, const Tensor& op_a, const Tensor& op_b,
                         std::size_t chi) {
  if (a.x == b.x) return Environment(state, chi).expect_pair_in_row(a, b, op_a, op_b);
  if (a.y == b.y) return Environment(transposed(state), chi).expect_pair_in_row({a.y, a.x}, {b.y, b.x}, op_a, op_b);
  throw InputError("two-point functions need collinear sites");
}

}  // namespace metts
