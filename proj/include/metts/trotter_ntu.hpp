#pragma once

// Imaginary-time evolution of a finite PEPS: second-order Suzuki-Trotter
// sweeps of two-site gates, each followed by a neighbourhood tensor update
// (NTU) that truncates the enlarged bond back to max_D.
//
// NTU cluster: the two updated sites and all their nearest neighbours. The
// virtual legs leaving the cluster are traced directly between ket and bra,
// so the cluster norm (and the metric built from it) is computed exactly and
// is non-negative by construction.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metts/errors.hpp"
#include "metts/models.hpp"
#include "metts/peps.hpp"
#include "metts/tensor.hpp"

namespace metts {

struct TwoSiteGate {
  Tensor full;   ///< d^2 x d^2, rows (s1', s2'), columns (s1, s2)
  Tensor left;   ///< (s1', s1, k)
  Tensor right;  ///< (k, s2', s2)
  double dtau = 0.0;
  std::size_t r() const { return left.extent(2); }
};

inline constexpr double kGateSplitCutoff = 1e-14;

/// exp(-dtau * h_bond) by eigendecomposition, split by SVD into a pair of
/// rank-3 tensors joined by an index of dimension r <= d^2.
inline TwoSiteGate make_gate(const Tensor& h_bond, double dtau) {
  if (h_bond.rank() != 2 || h_bond.extent(0) != h_bond.extent(1))
    throw InputError("bond Hamiltonian must be square");
  if (dtau < 0.0 || !std::isfinite(dtau)) throw InputError("dtau must be finite and non-negative");
  const std::size_t n = h_bond.extent(0);
  const auto d = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
  if (d * d != n) throw InputError("bond Hamiltonian extent must be d^2");
  const Eigen::MatrixXd h = h_bond.matrix(1);
  const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
  if ((h - h.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) throw InputError("bond Hamiltonian is not symmetric");

  TwoSiteGate gate;
  gate.dtau = dtau;
  if (dtau == 0.0) {
    gate.full = Tensor::identity(n);
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h + h.transpose()));
    const Eigen::VectorXd w = (-dtau * es.eigenvalues().array()).exp();
    const RowMatrix g = es.eigenvectors() * w.asDiagonal() * es.eigenvectors().transpose();
    gate.full = Tensor::from_matrix(g);
  }
  const Tensor g4 = gate.full.reshape({d, d, d, d});  // (s1', s2', s1, s2)
  auto svd = svd_truncated(g4, {0, 2}, n, kGateSplitCutoff);
  std::vector<double> root(svd.s.size());
  for (std::size_t i = 0; i < root.size(); ++i) root[i] = std::sqrt(svd.s[i]);
  gate.left = scale_trailing(std::move(svd.u), root);
  gate.right = scale_leading(root, std::move(svd.v));
  return gate;
}

struct EvolutionSchedule {
  double beta_half = 0.0;
  double dtau = 0.0;
  std::size_t steps = 0;
  std::vector<Bond> bond_order;
};

inline constexpr double kDefaultDtau = 0.01;

/// dtau is lowered, if needed, so that steps * dtau == beta_half.
inline EvolutionSchedule make_schedule(double beta_half, double dtau, std::size_t lx, std::size_t ly) {
  if (beta_half < 0.0 || !std::isfinite(beta_half)) throw InputError("beta/2 must be finite and non-negative");
  if (!(dtau > 0.0)) throw InputError("dtau must be positive");
  EvolutionSchedule s;
  s.beta_half = beta_half;
  s.bond_order = lattice_bonds(lx, ly);
  if (beta_half == 0.0) return s;
  s.steps = static_cast<std::size_t>(std::ceil(beta_half / dtau - 1e-9));
  s.steps = std::max<std::size_t>(s.steps, 1);
  s.dtau = beta_half / static_cast<double>(s.steps);
  return s;
}

struct NtuOptions {
  std::size_t max_D = 4;
  /// Relative eigenvalue cutoff of the pseudo-inverse in the ALS solves.
  double pinv_cutoff = 1e-10;
  /// Stop when the relative squared error changes by less than this.
  double tolerance = 1e-12;
  std::size_t max_sweeps = 100;
  /// After the reduced solve, continue the sweeps on the full site tensors so
  /// the update is not confined to the range of the old tensors. Lowers the
  /// cluster error but not the thermal error, at several times the cost.
  bool full_sweeps = false;
  bool record_history = false;
};

struct NtuReport {
  Bond bond;
  double delta = 0.0;  ///< |Psi' - Psi_G| / |Psi_G| on the cluster
  std::size_t iterations = 0;
  bool fallback = false;  ///< the ALS result was unusable; SVD initialization kept
  std::vector<double> history;  ///< delta after initialization and each sweep
};

namespace detail {

/// The PEPS as seen with the bond horizontal: for vertical bonds the
/// lattice is transposed.
struct OrientedLattice {
  const PepsState& state;
  bool vertical;
  std::size_t lx() const { return vertical ? state.ly : state.lx; }
  std::size_t ly() const { return vertical ? state.lx : state.ly; }
  bool contains(long x, long y) const {
    return x >= 0 && y >= 0 && static_cast<std::size_t>(x) < lx() && static_cast<std::size_t>(y) < ly();
  }
  /// Site tensor in oriented axes, padded to rank 6 (unit ancilla if absent).
  Tensor site(long x, long y) const {
    const auto ux = static_cast<std::size_t>(x), uy = static_cast<std::size_t>(y);
    const Tensor& t = vertical ? state.at(uy, ux) : state.at(ux, uy);
    Tensor o = vertical ? transpose_site(t) : t;
    if (o.rank() == 5) {
      Shape s = o.shape();
      s.push_back(1);
      o = std::move(o).reshape(s);
    }
    return o;
  }
};

inline Tensor env_left_neighbor(const Tensor& a) { return einsum("uldrsa,uldRsa->rR", a, a); }
inline Tensor env_right_neighbor(const Tensor& a) { return einsum("uldrsa,uLdrsa->lL", a, a); }

/// Joint environment of two horizontally adjacent sites above the bond,
/// open on their down legs: (d_i, d_i', d_j, d_j').
inline Tensor env_top_pair(const Tensor& ti, const Tensor& tj) {
  const Tensor mi = einsum("uldrsa,ulDRsa->dDrR", ti, ti);
  const Tensor mj = einsum("uldrsa,uLDrsa->lLdD", tj, tj);
  return einsum("dDrR,rReE->dDeE", mi, mj);
}

/// Same below the bond, open on the up legs: (u_i, u_i', u_j, u_j').
inline Tensor env_bottom_pair(const Tensor& bi, const Tensor& bj) {
  const Tensor mi = einsum("uldrsa,UldRsa->uUrR", bi, bi);
  const Tensor mj = einsum("uldrsa,ULdrsa->lLuU", bj, bj);
  return einsum("uUrR,rRvV->uUvV", mi, mj);
}

/// Bond problem after QR reduction: site i = q_i r_i, site j = q_j r_j, with
/// the environment of the reduced pair collected into the metric g.
struct ReducedBond {
  bool vertical = false;
  long x = 0, y = 0;  ///< oriented coordinates of site i
  Tensor q_i;  ///< (u, l, d, a, k)
  Tensor r_i;  ///< (k, r, s)
  Tensor q_j;  ///< (u, d, r, a, k')
  Tensor r_j;  ///< (k', l, s)
  Tensor g;    ///< (k, K, k', K'): ket/bra pairs of both reduced legs
  Tensor env_l, env_r;  ///< (l, L) of site i, (r, R) of site j
  Tensor env_t, env_b;  ///< (u_i, U_i, u_j, U_j), (d_i, D_i, d_j, D_j)
};

inline ReducedBond reduce_bond(const PepsState& state, const Bond& bond) {
  ReducedBond red;
  red.vertical = !bond.horizontal();
  OrientedLattice lat{state, red.vertical};
  const long x = static_cast<long>(red.vertical ? bond.a.y : bond.a.x);
  const long y = static_cast<long>(red.vertical ? bond.a.x : bond.a.y);
  red.x = x;
  red.y = y;
  const Tensor ai = lat.site(x, y);
  const Tensor aj = lat.site(x, y + 1);

  auto qi = qr_split(ai, {0, 1, 2, 5});  // (u,l,d,a,k), (k,r,s)
  auto qj = qr_split(aj, {0, 2, 3, 5});  // (u,d,r,a,k'), (k',l,s)
  red.q_i = std::move(qi.q);
  red.r_i = std::move(qi.r);
  red.q_j = std::move(qj.q);
  red.r_j = std::move(qj.r);

  const Tensor nl = lat.contains(x, y - 1) ? env_left_neighbor(lat.site(x, y - 1)) : Tensor({1, 1}, 1.0);
  const Tensor nr = lat.contains(x, y + 2) ? env_right_neighbor(lat.site(x, y + 2)) : Tensor({1, 1}, 1.0);
  const Tensor nt = lat.contains(x - 1, y) ? env_top_pair(lat.site(x - 1, y), lat.site(x - 1, y + 1))
                                           : Tensor({1, 1, 1, 1}, 1.0);
  const Tensor nb = lat.contains(x + 1, y) ? env_bottom_pair(lat.site(x + 1, y), lat.site(x + 1, y + 1))
                                           : Tensor({1, 1, 1, 1}, 1.0);

  const Tensor xi = einsum("lm,uldak->mudak", nl, red.q_i);
  const Tensor ei = einsum("mudak,vmeaK->uvdekK", xi, red.q_i);
  const Tensor xj = einsum("rs,wfrak->swfak", nr, red.q_j);
  const Tensor ej = einsum("swfak,xhsaK->wxfhkK", xj, red.q_j);
  const Tensor t1 = einsum("uvdekK,uvwx->dekKwx", ei, nt);
  const Tensor t2 = einsum("dekKwx,defh->kKwxfh", t1, nb);
  Tensor g = einsum("kKwxfh,wxfhlL->kKlL", t2, ej);
  g = 0.5 * (g + transpose("kKlL->KkLl", g));
  red.g = std::move(g);
  red.env_l = nl;
  red.env_r = nr;
  red.env_t = nt;
  red.env_b = nb;
  return red;
}

inline Eigen::MatrixXd pseudo_inverse_sym(const Eigen::MatrixXd& m, double rel_cutoff) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const auto& w = es.eigenvalues();
  const double wmax = w.cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > rel_cutoff * wmax) inv[i] = 1.0 / w[i];
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

/// Squared metric norm of a reduced-bond tensor phi (k, s1, k', s2).
inline double metric_norm_sq(const Tensor& g, const Tensor& phi) {
  const Tensor gphi = einsum("aAbB,AsBt->asbt", g, phi);
  return dot(gphi, phi);
}

/// (a (x) b)^+ applied to the first two axes of rhs, viewed as (n, m, rest),
/// for symmetric positive semidefinite a and b; the cutoff is relative to the
/// largest eigenvalue of the product.
inline Tensor kron_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Tensor& rhs, double rel_cutoff) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a), eb(b);
  const Eigen::VectorXd& wa = ea.eigenvalues();
  const Eigen::VectorXd& wb = eb.eigenvalues();
  const double wmax = std::max(0.0, wa.maxCoeff()) * std::max(0.0, wb.maxCoeff());
  const Eigen::Index n = a.rows(), m = b.rows();
  const Eigen::Index rest = static_cast<Eigen::Index>(rhs.size()) / (n * m);
  RowMatrix c = ea.eigenvectors().transpose() * rhs.reshape({static_cast<std::size_t>(n), rhs.size() / static_cast<std::size_t>(n)}).matrix(1);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Map<RowMatrix> slab(c.row(i).data(), m, rest);
    RowMatrix t = eb.eigenvectors().transpose() * slab;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double w = wa[i] * wb[j];
      t.row(j) *= w > rel_cutoff * wmax ? 1.0 / w : 0.0;
    }
    slab = eb.eigenvectors() * t;
  }
  Tensor flat = Tensor::from_matrix(ea.eigenvectors() * c);
  return std::move(flat).reshape(rhs.shape());
}

/// Alternating least squares on the full site tensors X (u, l, d, c, s, a)
/// and Y (u, c, d, r, s, a) of the oriented bond. Unlike the reduced
/// problem, the new tensors may leave the range of the old ones on the
/// environment legs. The metric is env_l (x) env_t (x) env_b (x) env_r, so
/// each half-sweep is a Kronecker pseudo-inverse.
struct FullAls {
  const ReducedBond& red;
  Tensor gtheta;  ///< metric applied to the gate-applied pair, (u,l,d,a,s, v,e,r,b,t)
  double theta_norm_sq = 0.0;

  FullAls(const ReducedBond& r, const Tensor& theta) : red(r) {
    const Tensor ti = einsum("uldak,ksKt->uldasKt", red.q_i, theta);
    Tensor t = einsum("uldasKt,verbK->uldasverbt", ti, red.q_j);
    const Tensor full = t;
    t = einsum("lL,uLdasverbt->uldasverbt", red.env_l, t);
    t = einsum("uUvV,UldasVerbt->uldasverbt", red.env_t, t);
    t = einsum("dDeE,ulDasvErbt->uldasverbt", red.env_b, t);
    gtheta = einsum("rR,uldasveRbt->uldasverbt", red.env_r, t);
    theta_norm_sq = dot(gtheta, full);
  }

  Tensor solve_x(const Tensor& y, double cutoff) const {
    const Tensor m = einsum("vcerta,rR->vceRta", y, red.env_r);
    const Tensor m2 = einsum("vceRta,VCERta->vceVCE", m, y);
    const Tensor t = einsum("uUvV,vceVCE->uUceCE", red.env_t, m2);
    const Tensor k = einsum("dDeE,uUceCE->udcUDC", red.env_b, t);
    const Tensor bx = einsum("uldasverbt,vcertb->ludcsa", gtheta, y);
    const RowMatrix km = k.matrix(3);
    const Tensor sol = kron_solve(red.env_l.matrix(1), 0.5 * (km + km.transpose()), bx, cutoff);
    return transpose("ludcsa->uldcsa", sol);
  }

  Tensor solve_y(const Tensor& x, double cutoff) const {
    const Tensor p = einsum("uldcsa,lL->uLdcsa", x, red.env_l);
    const Tensor p2 = einsum("uLdcsa,ULDCsa->udcUDC", p, x);
    const Tensor t = einsum("uUvV,udcUDC->vVdcDC", red.env_t, p2);
    const Tensor k = einsum("dDeE,vVdcDC->vceVCE", red.env_b, t);
    const Tensor by = einsum("uldasverbt,uldcsa->rvcetb", gtheta, x);
    const RowMatrix km = k.matrix(3);
    const Tensor sol = kron_solve(red.env_r.matrix(1), 0.5 * (km + km.transpose()), by, cutoff);
    return transpose("rvcetb->vcertb", sol);
  }

  double delta(const Tensor& x, const Tensor& y) const {
    const Tensor p = einsum("uldcsa,lL->uLdcsa", x, red.env_l);
    const Tensor p2 = einsum("uLdcsa,ULDCsa->udcUDC", p, x);
    const Tensor t = einsum("uUvV,udcUDC->vVdcDC", red.env_t, p2);
    const Tensor k = einsum("dDeE,vVdcDC->vceVCE", red.env_b, t);
    const Tensor yr = einsum("vcerta,rR->vceRta", y, red.env_r);
    const Tensor q = einsum("vceRta,VCERta->vceVCE", yr, y);
    const Tensor by = einsum("uldasverbt,uldcsa->vcertb", gtheta, x);
    const double num = dot(q, k) - 2.0 * dot(by, y) + theta_norm_sq;
    return theta_norm_sq > 0.0 ? std::sqrt(std::max(0.0, num) / theta_norm_sq) : 0.0;
  }
};

}  // namespace detail

/// The cluster metric of a bond as a symmetric matrix over (k, k') x (K, K').
inline Eigen::MatrixXd ntu_metric(const PepsState& state, const Bond& bond) {
  const auto red = detail::reduce_bond(state, bond);
  const Tensor m = transpose("kKlL->klKL", red.g);
  return m.matrix(2);
}

/// Applies `gate` to `bond` and truncates the bond back to opts.max_D by
/// alternating least squares in the cluster metric. Updates `state` in place.
inline NtuReport ntu_update(PepsState& state, const Bond& bond, const TwoSiteGate& gate, const NtuOptions& opts) {
  if (bond.a.x >= state.lx || bond.b.x >= state.lx || bond.a.y >= state.ly || bond.b.y >= state.ly)
    throw InputError("bond outside the lattice");
  const bool nn = (bond.a.x == bond.b.x && bond.a.y + 1 == bond.b.y) || (bond.a.y == bond.b.y && bond.a.x + 1 == bond.b.x);
  if (!nn) throw InputError("ntu_update needs a nearest-neighbour bond " + to_string(bond));
  if (gate.left.extent(0) != state.d || gate.right.extent(1) != state.d)
    throw InputError("gate dimension does not match physical dimension");
  if (opts.max_D == 0) throw InputError("max_D must be positive");

  auto red = detail::reduce_bond(state, bond);
  const Tensor& g = red.g;

  // gate-applied reduced pair theta (k, s1', k', s2')
  const Tensor ri_g = einsum("krs,tsg->krgt", red.r_i, gate.left);
  const Tensor rj_g = einsum("mls,gus->mlgu", red.r_j, gate.right);
  const Tensor theta = einsum("krgt,mrgu->ktmu", ri_g, rj_g);
  const Tensor g_theta = einsum("aAbB,AsBt->abst", g, theta);  // (k, k', s1, s2)
  const double theta_norm_sq = dot(transpose("abst->asbt", g_theta), theta);

  NtuReport report;
  report.bond = bond;

  auto delta_of = [&](const Tensor& x, const Tensor& y) {
    Tensor phi = einsum("asc,cbt->asbt", x, y);
    phi -= theta;
    const double num = std::max(0.0, detail::metric_norm_sq(g, phi));
    return theta_norm_sq > 0.0 ? std::sqrt(num / theta_norm_sq) : 0.0;
  };

  auto init = svd_truncated(theta, {0, 1}, opts.max_D, kGateSplitCutoff);
  std::vector<double> root(init.s.size());
  for (std::size_t i = 0; i < root.size(); ++i) root[i] = std::sqrt(init.s[i]);
  Tensor x = scale_trailing(std::move(init.u), root);  // (k, s1, c)
  Tensor y = scale_leading(root, std::move(init.v));   // (c, k', s2)
  double delta = delta_of(x, y);
  if (opts.record_history) report.history.push_back(delta);

  const std::size_t ds = theta.extent(1);
  const bool truncated = delta > 1e-14 && init.discarded_weight > 0.0;
  if (truncated) {
    for (std::size_t sweep = 0; sweep < opts.max_sweeps; ++sweep) {
      // solve for x with y fixed
      const Tensor yy = einsum("cbt,CBt->cbCB", y, y);
      Tensor gy = einsum("aAbB,cbCB->acAC", g, yy);
      const Tensor jx = einsum("abst,cbt->acs", g_theta, y);
      const Eigen::MatrixXd sol_x = detail::pseudo_inverse_sym(gy.matrix(2), opts.pinv_cutoff) * jx.matrix(2);
      Tensor x_new(Shape{gy.extent(0), gy.extent(1), ds});
      x_new.matrix(2) = sol_x;
      x_new = transpose("acs->asc", x_new);

      // solve for y with x fixed
      const Tensor xx = einsum("asc,AsC->acAC", x_new, x_new);
      Tensor gx = einsum("aAbB,acAC->cbCB", g, xx);
      const Tensor jy = einsum("abst,asc->cbt", g_theta, x_new);
      const Eigen::MatrixXd sol_y = detail::pseudo_inverse_sym(gx.matrix(2), opts.pinv_cutoff) * jy.matrix(2);
      Tensor y_new(Shape{gx.extent(0), gx.extent(1), ds});
      y_new.matrix(2) = sol_y;

      if (!x_new.all_finite() || !y_new.all_finite()) {
        report.fallback = true;
        break;
      }
      const double delta_new = delta_of(x_new, y_new);
      ++report.iterations;
      if (!std::isfinite(delta_new) || delta_new > delta * (1.0 + 1e-9) + 1e-15) break;
      const double change = std::abs(delta * delta - delta_new * delta_new);
      x = std::move(x_new);
      y = std::move(y_new);
      delta = delta_new;
      if (opts.record_history) report.history.push_back(delta);
      if (change < opts.tolerance) break;
    }
  }
  Tensor ai = einsum("uldak,ksc->uldcsa", red.q_i, x);  // (u, l, d, c, s, a)
  Tensor aj = einsum("udrak,ckt->ucdrta", red.q_j, y);  // (u, c, d, r, s, a)
  if (opts.full_sweeps && truncated && !report.fallback) {
    const detail::FullAls full(red, theta);
    for (std::size_t sweep = 0; sweep < opts.max_sweeps; ++sweep) {
      Tensor xn = full.solve_x(aj, opts.pinv_cutoff);
      Tensor yn = full.solve_y(xn, opts.pinv_cutoff);
      if (!xn.all_finite() || !yn.all_finite()) break;
      const double delta_new = full.delta(xn, yn);
      ++report.iterations;
      if (!std::isfinite(delta_new) || delta_new > delta * (1.0 + 1e-9) + 1e-15) break;
      const double change = std::abs(delta * delta - delta_new * delta_new);
      ai = std::move(xn);
      aj = std::move(yn);
      delta = delta_new;
      if (opts.record_history) report.history.push_back(delta);
      if (change < opts.tolerance) break;
    }
  }
  report.delta = delta;

  // rebalance the pair and pull the overall scale into log_scale
  const auto qx = qr_split(ai, {0, 1, 2, 4, 5});  // (u, l, d, s, a, k), (k, c)
  const auto qy = qr_split(aj, {0, 2, 3, 4, 5});  // (u, d, r, s, a, k'), (k', c)
  auto bal = svd_truncated(einsum("kc,Kc->kK", qx.r, qy.r), {0}, opts.max_D, kGateSplitCutoff);
  const double s0 = bal.s.front();
  if (!(s0 > 0.0)) throw ZeroNormError("gate produced a zero bond");
  std::vector<double> half(bal.s.size());
  for (std::size_t i = 0; i < half.size(); ++i) half[i] = std::sqrt(bal.s[i] / s0);
  state.log_scale += std::log(s0);
  ai = einsum("uldsak,kc->uldcsa", qx.q, scale_trailing(std::move(bal.u), half));
  aj = einsum("udrsaK,cK->ucdrsa", qy.q, scale_leading(half, std::move(bal.v)));
  if (!state.ancilla) {
    Shape si = ai.shape(), sj = aj.shape();
    si.pop_back();
    sj.pop_back();
    ai = std::move(ai).reshape(si);
    aj = std::move(aj).reshape(sj);
  }
  if (red.vertical) {
    state.at(bond.a) = transpose_site(ai);
    state.at(bond.b) = transpose_site(aj);
  } else {
    state.at(bond.a) = std::move(ai);
    state.at(bond.b) = std::move(aj);
  }
  return report;
}

/// Value-semantics wrapper around ntu_update.
inline std::pair<PepsState, NtuReport> ntu_truncate(PepsState state, const Bond& bond, const TwoSiteGate& gate,
                                                    const NtuOptions& opts) {
  auto report = ntu_update(state, bond, gate, opts);
  return {std::move(state), std::move(report)};
}

/// Called after every gate with (step index, report).
using NtuObserver = std::function<void(std::size_t, const NtuReport&)>;

/// Evolves by schedule.beta_half: each step applies exp(-h dtau / 2) over
/// the bond order, then over the reversed order. The result is not
/// normalized (its scale accumulates in log_scale).
inline PepsState evolve(PepsState state, const ModelSpec& model, const EvolutionSchedule& schedule,
                        const NtuOptions& opts, const NtuObserver& observer = {}) {
  if (state.lx != model.lx || state.ly != model.ly || state.d != model.d)
    throw InputError("state dimensions do not match the model");
  if (schedule.steps == 0) return state;
  std::vector<TwoSiteGate> gates;
  gates.reserve(schedule.bond_order.size());
  for (const auto& b : schedule.bond_order) gates.push_back(make_gate(bond_hamiltonian(model, b), 0.5 * schedule.dtau));
  const std::size_t nb = schedule.bond_order.size();
  for (std::size_t step = 0; step < schedule.steps; ++step) {
    for (std::size_t i = 0; i < nb; ++i) {
      auto rep = ntu_update(state, schedule.bond_order[i], gates[i], opts);
      if (observer) observer(step, rep);
    }
    for (std::size_t i = nb; i-- > 0;) {
      auto rep = ntu_update(state, schedule.bond_order[i], gates[i], opts);
      if (observer) observer(step, rep);
    }
  }
  return state;
}

/// Collects every NTU report of an evolution.
inline std::pair<PepsState, std::vector<NtuReport>> evolve_with_reports(PepsState state, const ModelSpec& model,
                                                                        const EvolutionSchedule& schedule,
                                                                        const NtuOptions& opts) {
  std::vector<NtuReport> reports;
  auto out = evolve(std::move(state), model, schedule, opts,
                    [&](std::size_t, const NtuReport& r) { reports.push_back(r); });
  return {std::move(out), std::move(reports)};
}

}  // namespace metts
