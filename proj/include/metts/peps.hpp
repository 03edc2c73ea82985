#pragma once

// Finite open-boundary PEPS.
//
// Site tensors use one axis convention everywhere:
//   (up, left, down, right, physical[, ancilla])
// Sites are addressed (x, y): row x from the top, column y from the left,
// both 0-based. Bonds facing the lattice edge have extent 1.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metts/checkpoint.hpp"
#include "metts/errors.hpp"
#include "metts/models.hpp"
#include "metts/tensor.hpp"

namespace metts {

namespace axis {
inline constexpr std::size_t kUp = 0, kLeft = 1, kDown = 2, kRight = 3, kPhys = 4, kAncilla = 5;
}  // namespace axis

inline constexpr const char* kAxisConvention = "up,left,down,right,physical[,ancilla]";

/// Product-basis labels on an lx x ly grid, row-major.
struct Configuration {
  std::size_t lx = 0, ly = 0;
  std::vector<std::uint8_t> labels;

  Configuration() = default;
  Configuration(std::size_t lx_, std::size_t ly_, std::uint8_t fill = 0)
      : lx(lx_), ly(ly_), labels(lx_ * ly_, fill) {}

  std::uint8_t& operator()(std::size_t x, std::size_t y) { return labels.at(x * ly + y); }
  std::uint8_t operator()(std::size_t x, std::size_t y) const { return labels.at(x * ly + y); }
  friend bool operator==(const Configuration&, const Configuration&) = default;

  /// One character per site, rows separated by '/': "01/10".
  std::string to_string() const {
    std::string s;
    for (std::size_t x = 0; x < lx; ++x) {
      if (x) s.push_back('/');
      for (std::size_t y = 0; y < ly; ++y) s.push_back(static_cast<char>('0' + (*this)(x, y)));
    }
    return s;
  }

  static Configuration from_string(const std::string& s) {
    Configuration c;
    std::size_t row_len = 0, cur = 0;
    for (char ch : s) {
      if (ch == '/') {
        if (c.lx == 0) row_len = cur;
        if (cur != row_len || cur == 0) throw InputError("ragged configuration string '" + s + "'");
        ++c.lx;
        cur = 0;
        continue;
      }
      if (ch < '0' || ch > '9') throw InputError("bad configuration character in '" + s + "'");
      c.labels.push_back(static_cast<std::uint8_t>(ch - '0'));
      ++cur;
    }
    if (c.lx == 0) row_len = cur;
    if (cur != row_len || cur == 0) throw InputError("ragged configuration string '" + s + "'");
    ++c.lx;
    c.ly = row_len;
    return c;
  }
};

struct PepsState {
  std::size_t lx = 0, ly = 0;
  std::size_t d = 2;
  bool ancilla = false;
  std::vector<Tensor> sites;  ///< row-major
  /// The represented vector is exp(log_scale) times the network.
  double log_scale = 0.0;

  Tensor& at(Site s) { return sites.at(s.x * ly + s.y); }
  const Tensor& at(Site s) const { return sites.at(s.x * ly + s.y); }
  Tensor& at(std::size_t x, std::size_t y) { return sites.at(x * ly + y); }
  const Tensor& at(std::size_t x, std::size_t y) const { return sites.at(x * ly + y); }

  std::size_t site_rank() const { return ancilla ? 6 : 5; }

  std::size_t max_bond() const {
    std::size_t m = 1;
    for (const auto& t : sites)
      for (std::size_t a = 0; a < 4; ++a) m = std::max(m, t.extent(a));
    return m;
  }

  /// Throws InputError if bonds, ranks, or physical extents are inconsistent.
  void validate() const {
    if (sites.size() != lx * ly || lx == 0 || ly == 0) throw InputError("PEPS grid size mismatch");
    for (std::size_t x = 0; x < lx; ++x)
      for (std::size_t y = 0; y < ly; ++y) {
        const auto& t = at(x, y);
        const std::string where = " at site (" + std::to_string(x) + "," + std::to_string(y) + ")";
        if (t.rank() != site_rank()) throw InputError("wrong site tensor rank" + where);
        if (t.extent(axis::kPhys) != d) throw InputError("physical extent != d" + where);
        if (ancilla && t.extent(axis::kAncilla) != d) throw InputError("ancilla extent != d" + where);
        if (x == 0 && t.extent(axis::kUp) != 1) throw InputError("top boundary bond not 1" + where);
        if (y == 0 && t.extent(axis::kLeft) != 1) throw InputError("left boundary bond not 1" + where);
        if (x + 1 == lx && t.extent(axis::kDown) != 1) throw InputError("bottom boundary bond not 1" + where);
        if (y + 1 == ly && t.extent(axis::kRight) != 1) throw InputError("right boundary bond not 1" + where);
        if (y + 1 < ly && t.extent(axis::kRight) != at(x, y + 1).extent(axis::kLeft))
          throw InputError("horizontal bond mismatch" + where);
        if (x + 1 < lx && t.extent(axis::kDown) != at(x + 1, y).extent(axis::kUp))
          throw InputError("vertical bond mismatch" + where);
      }
  }
};

inline PepsState product_state(const Configuration& config, std::size_t d = 2) {
  PepsState s{config.lx, config.ly, d, false, {}, 0.0};
  if (config.lx == 0 || config.ly == 0) throw InputError("empty lattice");
  for (auto label : config.labels) {
    if (label >= d) throw InputError("basis label " + std::to_string(label) + " out of range");
    Tensor t({1, 1, 1, 1, d});
    t[label] = 1.0;
    s.sites.push_back(std::move(t));
  }
  return s;
}

/// Random site tensors with all internal bonds of extent `bond`.
template <class Gen>
PepsState random_peps(std::size_t lx, std::size_t ly, std::size_t d, std::size_t bond, Gen& gen,
                      bool ancilla = false) {
  PepsState s{lx, ly, d, ancilla, {}, 0.0};
  for (std::size_t x = 0; x < lx; ++x)
    for (std::size_t y = 0; y < ly; ++y) {
      Shape shape{x > 0 ? bond : 1, y > 0 ? bond : 1, x + 1 < lx ? bond : 1, y + 1 < ly ? bond : 1, d};
      if (ancilla) shape.push_back(d);
      s.sites.push_back(Tensor::random_normal(shape, gen));
    }
  return s;
}

/// Double-layer tensor of one site, axes (up, left, down, right), each the
/// fused (ket, bra) pair of the underlying bond. With `op`, the operator is
/// inserted between ket and bra on the physical axis; any ancilla axis is
/// traced.
inline Tensor transfer_tensor(const Tensor& site, const Tensor* op = nullptr) {
  if (site.rank() != 5 && site.rank() != 6) throw InputError("site tensor must have rank 5 or 6");
  const std::size_t d = site.extent(axis::kPhys);
  Tensor ket = site;
  if (op) {
    if (op->rank() != 2 || op->extent(0) != d || op->extent(1) != d)
      throw InputError("operator extent does not match physical extent " + std::to_string(d));
    // ket'[.., s'] = sum_s op[s', s] ket[.., s]
    ket = site.rank() == 5 ? einsum("uldrs,ts->uldrt", site, *op) : einsum("uldrsa,ts->uldrta", site, *op);
  }
  Tensor tt = site.rank() == 5 ? einsum("uldrs,ULDRs->uUlLdDrR", ket, site)
                               : einsum("uldrsa,ULDRsa->uUlLdDrR", ket, site);
  const auto& sh = site.shape();
  return std::move(tt).reshape({sh[0] * sh[0], sh[1] * sh[1], sh[2] * sh[2], sh[3] * sh[3]});
}

inline Tensor transfer_tensor(const Tensor& site, const Tensor& op) { return transfer_tensor(site, &op); }

/// P_label applied to the physical axis of one site. The physical axis keeps
/// extent d; components other than `label` become zero.
inline PepsState apply_projector(PepsState state, Site site, std::size_t label) {
  if (label >= state.d) throw InputError("projector label " + std::to_string(label) + " out of range");
  if (site.x >= state.lx || site.y >= state.ly) throw InputError("projector site out of range");
  Tensor& t = state.at(site);
  const std::size_t d = state.d;
  const std::size_t inner = state.ancilla ? d : 1;
  for (std::size_t i = 0; i < t.size(); ++i)
    if ((i / inner) % d != label) t[i] = 0.0;
  return state;
}

/// Lattice transpose (x, y) -> (y, x); rows become columns.
inline Tensor transpose_site(const Tensor& t) {
  return t.rank() == 5 ? t.permute({1, 0, 3, 2, 4}) : t.permute({1, 0, 3, 2, 4, 5});
}

inline PepsState transposed(const PepsState& s) {
  PepsState out{s.ly, s.lx, s.d, s.ancilla, {}, s.log_scale};
  out.sites.reserve(s.sites.size());
  for (std::size_t x = 0; x < out.lx; ++x)
    for (std::size_t y = 0; y < out.ly; ++y) out.sites.push_back(transpose_site(s.at(y, x)));
  return out;
}

namespace detail {

struct Labeled {
  Tensor t;
  std::vector<std::int64_t> labels;
};

inline Labeled contract_labeled(const Labeled& a, const Labeled& b) {
  AxisPairs pairs;
  Labeled out;
  std::vector<bool> b_used(b.labels.size(), false);
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    bool paired = false;
    for (std::size_t j = 0; j < b.labels.size(); ++j)
      if (a.labels[i] == b.labels[j]) {
        pairs.emplace_back(i, j);
        b_used[j] = true;
        paired = true;
      }
    if (!paired) out.labels.push_back(a.labels[i]);
  }
  for (std::size_t j = 0; j < b.labels.size(); ++j)
    if (!b_used[j]) out.labels.push_back(b.labels[j]);
  out.t = contract(a.t, b.t, pairs);
  return out;
}

}  // namespace detail

inline constexpr std::size_t kDenseSiteCap = 14;

/// Full contraction into a dense vector, scaled by exp(log_scale). Index
/// order: sites row-major, first site most significant; per site the
/// physical index, then the ancilla index if present.
inline std::vector<double> to_dense(const PepsState& s) {
  if (s.lx * s.ly > kDenseSiteCap) throw SizeCapError("to_dense limited to small lattices");
  const std::int64_t n = static_cast<std::int64_t>(s.lx * s.ly);
  const auto ly = static_cast<std::int64_t>(s.ly);
  auto hbond = [&](std::int64_t x, std::int64_t y) { return 4 * n + x * ly + y; };
  auto vbond = [&](std::int64_t x, std::int64_t y) { return 6 * n + x * ly + y; };
  std::int64_t dummy = -1;
  detail::Labeled acc{Tensor::scalar(1.0), {}};
  std::vector<std::int64_t> phys_order;
  for (std::int64_t x = 0; x < static_cast<std::int64_t>(s.lx); ++x)
    for (std::int64_t y = 0; y < ly; ++y) {
      const std::int64_t k = x * ly + y;
      detail::Labeled site{s.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)), {}};
      site.labels = {x > 0 ? vbond(x - 1, y) : dummy--, y > 0 ? hbond(x, y - 1) : dummy--,
                     x + 1 < static_cast<std::int64_t>(s.lx) ? vbond(x, y) : dummy--,
                     y + 1 < ly ? hbond(x, y) : dummy--, 2 * k};
      phys_order.push_back(2 * k);
      if (s.ancilla) {
        site.labels.push_back(2 * k + 1);
        phys_order.push_back(2 * k + 1);
      }
      acc = detail::contract_labeled(acc, site);
    }
  std::vector<std::size_t> perm;
  for (auto lbl : phys_order)
    for (std::size_t i = 0; i < acc.labels.size(); ++i)
      if (acc.labels[i] == lbl) perm.push_back(i);
  for (std::size_t i = 0; i < acc.labels.size(); ++i)
    if (acc.labels[i] < 0) perm.push_back(i);  // extent-1 edge legs go last
  Tensor v = acc.t.permute(perm);
  std::vector<double> out(v.data().begin(), v.data().end());
  const double scale = std::exp(s.log_scale);
  for (auto& a : out) a *= scale;
  return out;
}

// -- serialization --------------------------------------------------------

inline nlohmann::json peps_metadata(const PepsState& s) {
  return {{"lx", s.lx},           {"ly", s.ly},
          {"d", s.d},             {"ancilla", s.ancilla},
          {"log_scale", s.log_scale}, {"axis_convention", kAxisConvention},
          {"tensor_count", s.sites.size()}};
}

inline void save_peps(const std::filesystem::path& path, const PepsState& s, nlohmann::json extra = {}) {
  nlohmann::json meta = peps_metadata(s);
  if (!extra.is_null()) meta["extra"] = std::move(extra);
  write_checkpoint(path, s.sites, meta);
}

inline PepsState load_peps(const std::filesystem::path& path) {
  const auto meta = read_sidecar(path);
  if (meta.value("axis_convention", std::string{}) != kAxisConvention)
    throw InputError("checkpoint axis convention mismatch in " + path.string());
  PepsState s;
  s.lx = meta.at("lx").get<std::size_t>();
  s.ly = meta.at("ly").get<std::size_t>();
  s.d = meta.at("d").get<std::size_t>();
  s.ancilla = meta.at("ancilla").get<bool>();
  s.log_scale = meta.at("log_scale").get<double>();
  s.sites = read_tensors(path);
  s.validate();
  return s;
}

}  // namespace metts
