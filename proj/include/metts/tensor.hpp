#pragma once

// Dense real tensors and the handful of decompositions the rest of the
// library is written in terms of.
//
// Storage is row-major over the shape list: the last axis varies fastest.
// A rank-0 tensor has an empty shape and exactly one element.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metts/errors.hpp"

namespace metts {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_volume(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_volume(shape_))
      throw InputError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  template <class Gen>
  static Tensor random_normal(Shape shape, Gen& gen) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& x : t.data_) x = dist(gen);
    return t;
  }

  static Tensor from_matrix(const RowMatrix& m) {
    Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    std::copy(m.data(), m.data() + m.size(), t.data_.begin());
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  std::size_t rank() const { return shape_.size(); }
  const Shape& shape() const { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::span<const std::size_t> idx) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < shape_.size(); ++i) off = off * shape_[i] + idx[i];
    return off;
  }
  double& at(std::initializer_list<std::size_t> idx) {
    return data_[offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
  }
  double at(std::initializer_list<std::size_t> idx) const {
    return data_[offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
  }

  /// Scalar value of a tensor whose extents are all one.
  double item() const {
    if (data_.size() != 1) throw InputError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  Tensor reshape(Shape shape) const& {
    Tensor t(*this);
    return std::move(t).reshape(std::move(shape));
  }
  Tensor reshape(Shape shape) && {
    if (shape_volume(shape) != data_.size())
      throw InputError("cannot reshape " + shape_string(shape_) + " into " + shape_string(shape));
    shape_ = std::move(shape);
    check_extents();
    return std::move(*this);
  }

  Tensor permute(std::span<const std::size_t> perm) const;
  Tensor permute(std::initializer_list<std::size_t> perm) const {
    return permute(std::span<const std::size_t>(perm.begin(), perm.size()));
  }

  /// View as a matrix whose rows fuse the first `row_rank` axes.
  Eigen::Map<const RowMatrix> matrix(std::size_t row_rank) const {
    std::size_t rows = 1;
    for (std::size_t i = 0; i < row_rank; ++i) rows *= shape_.at(i);
    return {data_.data(), static_cast<Eigen::Index>(rows),
            static_cast<Eigen::Index>(data_.size() / rows)};
  }
  Eigen::Map<RowMatrix> matrix(std::size_t row_rank) {
    std::size_t rows = 1;
    for (std::size_t i = 0; i < row_rank; ++i) rows *= shape_.at(i);
    return {data_.data(), static_cast<Eigen::Index>(rows),
            static_cast<Eigen::Index>(data_.size() / rows)};
  }

  double norm() const {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
  }
  double max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::abs(x));
    return m;
  }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  Tensor& operator*=(double a) {
    for (auto& x : data_) x *= a;
    return *this;
  }
  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  friend Tensor operator*(double a, Tensor t) { return t *= a; }
  friend Tensor operator*(Tensor t, double a) { return t *= a; }
  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (auto e : shape_)
      if (e == 0) throw InputError("tensor extents must be positive, got " + shape_string(shape_));
  }
  void require_same_shape(const Tensor& o) const {
    if (o.shape_ != shape_)
      throw InputError("shape mismatch " + shape_string(shape_) + " vs " + shape_string(o.shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline Tensor Tensor::permute(std::span<const std::size_t> perm) const {
  const std::size_t r = rank();
  if (perm.size() != r) throw InputError("permutation length does not match rank");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw InputError("invalid permutation");
    seen[p] = true;
  }
  bool trivial = true;
  for (std::size_t i = 0; i < r; ++i) trivial = trivial && perm[i] == i;
  if (trivial) return *this;

  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = shape_[perm[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * shape_[i];
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) stride[i] = in_stride[perm[i]];

  Tensor out(out_shape);
  const std::size_t n = data_.size();
  const std::size_t inner_extent = out_shape[r - 1];
  const std::size_t inner_stride = stride[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t dst = 0; dst < n; dst += inner_extent) {
    for (std::size_t k = 0; k < inner_extent; ++k) out.data_[dst + k] = data_[src + k * inner_stride];
    // advance the outer multi-index (all axes but the last)
    for (std::size_t ax = r - 1; ax-- > 0;) {
      src += stride[ax];
      if (++idx[ax] < out_shape[ax]) break;
      src -= stride[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

using AxisPairs = std::vector<std::pair<std::size_t, std::size_t>>;

/// Sums over the paired axes. Result axes are the unpaired axes of `a` in
/// order, followed by the unpaired axes of `b` in order.
inline Tensor contract(const Tensor& a, const Tensor& b, const AxisPairs& pairs) {
  std::vector<bool> used_a(a.rank(), false), used_b(b.rank(), false);
  for (auto [ia, ib] : pairs) {
    if (ia >= a.rank() || ib >= b.rank()) throw InputError("contraction axis out of range");
    if (used_a[ia] || used_b[ib]) throw InputError("contraction axis repeated");
    if (a.extent(ia) != b.extent(ib))
      throw InputError("contraction extent mismatch: " + std::to_string(a.extent(ia)) + " vs " +
                       std::to_string(b.extent(ib)));
    used_a[ia] = used_b[ib] = true;
  }
  std::vector<std::size_t> perm_a, perm_b;
  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (!used_a[i]) {
      perm_a.push_back(i);
      out_shape.push_back(a.extent(i));
    }
  const std::size_t free_a = perm_a.size();
  for (auto [ia, ib] : pairs) {
    perm_a.push_back(ia);
    perm_b.push_back(ib);
  }
  for (std::size_t i = 0; i < b.rank(); ++i)
    if (!used_b[i]) {
      perm_b.push_back(i);
      out_shape.push_back(b.extent(i));
    }
  const Tensor ap = a.permute(perm_a);
  const Tensor bp = b.permute(perm_b);
  const auto am = ap.matrix(free_a);
  const auto bm = bp.matrix(pairs.size());
  Tensor out(out_shape);
  auto om = out.matrix(free_a);
  om.noalias() = am * bm;
  return out;
}

/// Pairwise contraction with single-character index labels, e.g.
/// `einsum("abc,cd->dab", x, y)`. Labels shared by both inputs are summed and
/// must not appear in the output; the output lists every remaining label.
inline Tensor einsum(std::string_view spec, const Tensor& a, const Tensor& b) {
  const auto comma = spec.find(',');
  const auto arrow = spec.find("->");
  if (comma == std::string_view::npos || arrow == std::string_view::npos || arrow < comma)
    throw InputError("malformed einsum spec: " + std::string(spec));
  const std::string_view la = spec.substr(0, comma);
  const std::string_view lb = spec.substr(comma + 1, arrow - comma - 1);
  const std::string_view lo = spec.substr(arrow + 2);
  if (la.size() != a.rank() || lb.size() != b.rank())
    throw InputError("einsum label count does not match rank: " + std::string(spec));
  AxisPairs pairs;
  std::string free;
  for (std::size_t i = 0; i < la.size(); ++i) {
    if (la.find(la[i], i + 1) != std::string_view::npos)
      throw InputError("einsum label repeated: " + std::string(spec));
    const auto j = lb.find(la[i]);
    if (j != std::string_view::npos) {
      if (lo.find(la[i]) != std::string_view::npos)
        throw InputError("einsum batch labels unsupported: " + std::string(spec));
      pairs.emplace_back(i, j);
    } else {
      free.push_back(la[i]);
    }
  }
  for (std::size_t i = 0; i < lb.size(); ++i) {
    if (lb.find(lb[i], i + 1) != std::string_view::npos)
      throw InputError("einsum label repeated: " + std::string(spec));
    if (la.find(lb[i]) == std::string_view::npos) free.push_back(lb[i]);
  }
  if (free.size() != lo.size()) throw InputError("einsum output labels mismatch: " + std::string(spec));
  Tensor c = contract(a, b, pairs);
  std::vector<std::size_t> perm(lo.size());
  for (std::size_t i = 0; i < lo.size(); ++i) {
    const auto p = free.find(lo[i]);
    if (p == std::string::npos) throw InputError("einsum output label unknown: " + std::string(spec));
    perm[i] = p;
  }
  return c.permute(perm);
}

/// Single-tensor relabeling, e.g. `transpose("abcd->badc", t)`.
inline Tensor transpose(std::string_view spec, const Tensor& t) {
  const auto arrow = spec.find("->");
  const std::string_view in = spec.substr(0, arrow);
  const std::string_view out = spec.substr(arrow + 2);
  if (arrow == std::string_view::npos || in.size() != t.rank() || out.size() != in.size())
    throw InputError("malformed transpose spec: " + std::string(spec));
  std::vector<std::size_t> perm(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto p = in.find(out[i]);
    if (p == std::string_view::npos) throw InputError("malformed transpose spec: " + std::string(spec));
    perm[i] = p;
  }
  return t.permute(perm);
}

inline double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw InputError("dot of tensors with different sizes");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Outer product with axes of `a` followed by axes of `b`.
inline Tensor outer(const Tensor& a, const Tensor& b) { return contract(a, b, {}); }

struct SvdResult {
  Tensor u;               ///< row axes + [rank]; orthonormal columns
  std::vector<double> s;  ///< non-increasing, non-negative
  Tensor v;               ///< [rank] + column axes; orthonormal rows
  double discarded_weight = 0.0;
  std::size_t rank() const { return s.size(); }
};

namespace detail {

struct MatrixSplit {
  Tensor permuted;
  Shape row_shape, col_shape;
  Eigen::Index rows = 1, cols = 1;
};

inline MatrixSplit split_axes(const Tensor& t, std::span<const std::size_t> row_axes) {
  if (row_axes.empty() || row_axes.size() >= t.rank())
    throw InputError("row axes must be a proper nonempty subset of the tensor axes");
  std::vector<bool> is_row(t.rank(), false);
  for (auto ax : row_axes) {
    if (ax >= t.rank() || is_row[ax]) throw InputError("invalid row axis list");
    is_row[ax] = true;
  }
  if (!t.all_finite()) throw NumericalError("decomposition input has non-finite values");
  MatrixSplit m;
  std::vector<std::size_t> perm(row_axes.begin(), row_axes.end());
  for (std::size_t i = 0; i < t.rank(); ++i)
    if (!is_row[i]) perm.push_back(i);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (i < row_axes.size()) {
      m.row_shape.push_back(t.extent(perm[i]));
      m.rows *= static_cast<Eigen::Index>(t.extent(perm[i]));
    } else {
      m.col_shape.push_back(t.extent(perm[i]));
      m.cols *= static_cast<Eigen::Index>(t.extent(perm[i]));
    }
  }
  m.permuted = t.permute(perm);
  return m;
}

inline Shape concat(Shape a, const Shape& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace detail

inline constexpr double kDefaultRelCutoff = 1e-12;

/// Truncated SVD of `t` viewed as a matrix (row_axes) x (remaining axes in order).
/// Keeps min(max_rank, #{s_i >= rel_cutoff * s_0}) singular values (at least one).
inline SvdResult svd_truncated(const Tensor& t, std::span<const std::size_t> row_axes,
                               std::size_t max_rank, double rel_cutoff = kDefaultRelCutoff) {
  if (max_rank == 0) throw InputError("max_rank must be positive");
  if (rel_cutoff < 0) throw InputError("rel_cutoff must be non-negative");
  auto split = detail::split_axes(t, row_axes);
  const Eigen::MatrixXd m = split.permuted.matrix(split.row_shape.size());
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const Eigen::Index full = sv.size();

  double total = 0.0;
  for (Eigen::Index i = 0; i < full; ++i) total += sv[i] * sv[i];
  std::size_t keep = 0;
  const double threshold = full > 0 ? rel_cutoff * sv[0] : 0.0;
  while (keep < static_cast<std::size_t>(full) && keep < max_rank && sv[keep] >= threshold) ++keep;
  keep = std::max<std::size_t>(keep, 1);
  double dropped = 0.0;
  for (Eigen::Index i = static_cast<Eigen::Index>(keep); i < full; ++i) dropped += sv[i] * sv[i];

  SvdResult out;
  out.s.assign(sv.data(), sv.data() + keep);
  out.discarded_weight = total > 0.0 ? std::clamp(dropped / total, 0.0, 1.0) : 0.0;
  const auto k = static_cast<Eigen::Index>(keep);
  const RowMatrix u = svd.matrixU().leftCols(k);
  const RowMatrix v = svd.matrixV().leftCols(k).transpose();
  out.u = Tensor::from_matrix(u).reshape(detail::concat(split.row_shape, {keep}));
  out.v = Tensor::from_matrix(v).reshape(detail::concat({keep}, split.col_shape));
  return out;
}

inline SvdResult svd_truncated(const Tensor& t, std::initializer_list<std::size_t> row_axes,
                               std::size_t max_rank, double rel_cutoff = kDefaultRelCutoff) {
  return svd_truncated(t, std::span<const std::size_t>(row_axes.begin(), row_axes.size()), max_rank,
                       rel_cutoff);
}

struct QrResult {
  Tensor q;  ///< row axes + [k]
  Tensor r;  ///< [k] + column axes, k = min(rows, cols)
};

/// Thin QR with a non-negative diagonal in r.
inline QrResult qr_split(const Tensor& t, std::span<const std::size_t> row_axes) {
  auto split = detail::split_axes(t, row_axes);
  const Eigen::MatrixXd m = split.permuted.matrix(split.row_shape.size());
  const Eigen::Index k = std::min(split.rows, split.cols);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(split.rows, k);
  Eigen::MatrixXd r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < k; ++i) {
    if (r(i, i) < 0) {
      r.row(i) *= -1.0;
      q.col(i) *= -1.0;
    }
  }
  const auto kk = static_cast<std::size_t>(k);
  return {Tensor::from_matrix(RowMatrix(q)).reshape(detail::concat(split.row_shape, {kk})),
          Tensor::from_matrix(RowMatrix(r)).reshape(detail::concat({kk}, split.col_shape))};
}

inline QrResult qr_split(const Tensor& t, std::initializer_list<std::size_t> row_axes) {
  return qr_split(t, std::span<const std::size_t>(row_axes.begin(), row_axes.size()));
}

/// Multiplies the leading axis of v by the singular values (s * v).
inline Tensor scale_leading(const std::vector<double>& s, Tensor v) {
  const std::size_t inner = v.size() / s.size();
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < inner; ++j) v[i * inner + j] *= s[i];
  return v;
}

/// Multiplies the trailing axis of u by the singular values (u * s).
inline Tensor scale_trailing(Tensor u, const std::vector<double>& s) {
  const std::size_t k = s.size();
  for (std::size_t i = 0; i < u.size(); ++i) u[i] *= s[i % k];
  return u;
}

}  // namespace metts
