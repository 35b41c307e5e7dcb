#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace symreach {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kGeomTol = 1e-7;
inline constexpr double kDetTol = 1e-9;
inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr int kMaxDim = 6;

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionMismatch : GeometryError {
  using GeometryError::GeometryError;
};
struct UnboundedRegion : GeometryError {
  using GeometryError::GeometryError;
};
struct SingularMap : GeometryError {
  using GeometryError::GeometryError;
};

inline void require_dim(long a, long b, const char* what) {
  if (a != b)
    throw DimensionMismatch(std::string(what) + ": dimension " + std::to_string(a) +
                            " vs " + std::to_string(b));
}

// Axis-aligned box [lo, hi]. Bounds may be infinite.
struct HyperRect {
  Vec lo, hi;

  HyperRect() = default;
  HyperRect(Vec l, Vec h) : lo(std::move(l)), hi(std::move(h)) {
    require_dim(lo.size(), hi.size(), "HyperRect");
  }

  // Box centred at c with full side lengths w.
  static HyperRect centered(const Vec& c, const Vec& w) {
    require_dim(c.size(), w.size(), "HyperRect::centered");
    if ((w.array() < 0).any()) throw GeometryError("negative side length");
    return {c - 0.5 * w, c + 0.5 * w};
  }

  int dim() const { return static_cast<int>(lo.size()); }
  Vec center() const { return 0.5 * (lo + hi); }
  Vec width() const { return hi - lo; }
  bool bounded() const { return lo.allFinite() && hi.allFinite(); }
  bool empty(double tol = kGeomTol) const { return ((hi - lo).array() < -tol).any(); }

  double volume() const {
    if (!bounded()) throw UnboundedRegion("volume of unbounded box");
    double v = 1.0;
    for (int i = 0; i < dim(); ++i) v *= std::max(0.0, hi[i] - lo[i]);
    return v;
  }

  bool contains(const Vec& x, double tol = kGeomTol) const {
    require_dim(dim(), x.size(), "HyperRect::contains");
    for (int i = 0; i < dim(); ++i)
      if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
    return true;
  }

  bool contains(const HyperRect& o, double tol = kGeomTol) const {
    require_dim(dim(), o.dim(), "HyperRect::contains");
    for (int i = 0; i < dim(); ++i)
      if (o.lo[i] < lo[i] - tol || o.hi[i] > hi[i] + tol) return false;
    return true;
  }

  // Closed intersection test.
  bool intersects(const HyperRect& o, double tol = kGeomTol) const {
    require_dim(dim(), o.dim(), "HyperRect::intersects");
    for (int i = 0; i < dim(); ++i)
      if (o.lo[i] > hi[i] + tol || o.hi[i] < lo[i] - tol) return false;
    return true;
  }

  HyperRect intersection(const HyperRect& o) const {
    require_dim(dim(), o.dim(), "HyperRect::intersection");
    return {lo.cwiseMax(o.lo), hi.cwiseMin(o.hi)};
  }

  HyperRect hull(const HyperRect& o) const {
    require_dim(dim(), o.dim(), "HyperRect::hull");
    return {lo.cwiseMin(o.lo), hi.cwiseMax(o.hi)};
  }

  static HyperRect everything(int n) {
    return {Vec::Constant(n, -kInf), Vec::Constant(n, kInf)};
  }
};

namespace detail {

// One inequality a.x <= b in at most kMaxDim variables.
struct Row {
  std::array<double, kMaxDim> a{};
  double b = 0;
};

inline void normalize(Row& r, int n) {
  double m = 0;
  for (int i = 0; i < n; ++i) m = std::max(m, std::abs(r.a[i]));
  if (m > 0) {
    for (int i = 0; i < n; ++i) r.a[i] /= m;
    r.b /= m;
  }
}

// Drops rows whose coefficient vectors repeat, keeping the tightest bound.
inline void dedupe(std::vector<Row>& rows, int n) {
  std::sort(rows.begin(), rows.end(), [n](const Row& x, const Row& y) {
    for (int i = 0; i < n; ++i)
      if (x.a[i] != y.a[i]) return x.a[i] < y.a[i];
    return x.b < y.b;
  });
  std::vector<Row> out;
  out.reserve(rows.size());
  for (const Row& r : rows) {
    if (!out.empty()) {
      bool same = true;
      for (int i = 0; i < n && same; ++i) same = std::abs(out.back().a[i] - r.a[i]) < 1e-12;
      if (same) continue;  // sorted by b, the earlier one is tighter
    }
    out.push_back(r);
  }
  rows.swap(out);
}

inline bool is_zero_row(const Row& r, int n) {
  for (int i = 0; i < n; ++i)
    if (std::abs(r.a[i]) > 1e-14) return false;
  return true;
}

// Fourier-Motzkin elimination of every variable except `keep` (or all when
// keep < 0). Returns false as soon as a contradiction 0 <= b < -tol appears.
inline bool fm_eliminate(std::vector<Row>& rows, int n, int keep, double tol) {
  std::vector<bool> done(n, false);
  if (keep >= 0) done[keep] = true;
  for (;;) {
    for (Row& r : rows) normalize(r, n);
    std::vector<Row> kept;
    kept.reserve(rows.size());
    for (const Row& r : rows) {
      if (is_zero_row(r, n)) {
        if (r.b < -tol) return false;
      } else {
        kept.push_back(r);
      }
    }
    rows.swap(kept);
    dedupe(rows, n);

    int best = -1;
    std::size_t best_cost = 0;
    for (int k = 0; k < n; ++k) {
      if (done[k]) continue;
      std::size_t pos = 0, neg = 0;
      for (const Row& r : rows) {
        if (r.a[k] > 1e-14) ++pos;
        else if (r.a[k] < -1e-14) ++neg;
      }
      std::size_t cost = pos * neg;
      if (best < 0 || cost < best_cost) {
        best = k;
        best_cost = cost;
      }
    }
    if (best < 0) return true;
    done[best] = true;

    std::vector<Row> pos, neg, next;
    for (const Row& r : rows) {
      if (r.a[best] > 1e-14) pos.push_back(r);
      else if (r.a[best] < -1e-14) neg.push_back(r);
      else next.push_back(r);
    }
    for (const Row& p : pos) {
      for (const Row& q : neg) {
        Row c;
        double sp = 1.0 / p.a[best], sq = -1.0 / q.a[best];
        for (int i = 0; i < n; ++i) c.a[i] = p.a[i] * sp + q.a[i] * sq;
        c.a[best] = 0;
        c.b = p.b * sp + q.b * sq;
        next.push_back(c);
      }
    }
    rows.swap(next);
  }
}

}  // namespace detail

// H-polytope {x : A x <= b}. May be unbounded.
class ConvexPolytope {
 public:
  ConvexPolytope() = default;
  ConvexPolytope(Mat A, Vec b) : A_(std::move(A)), b_(std::move(b)) {
    if (A_.rows() != b_.size()) throw DimensionMismatch("polytope: rows of A vs size of b");
    n_ = static_cast<int>(A_.cols());
    if (n_ > kMaxDim) throw DimensionMismatch("polytope dimension above supported maximum");
  }

  // Box with possibly infinite bounds; infinite sides produce no constraint.
  static ConvexPolytope from_box(const HyperRect& r) {
    int n = r.dim();
    std::vector<std::pair<Vec, double>> rows;
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(r.hi[i])) rows.push_back({Vec::Unit(n, i), r.hi[i]});
      if (std::isfinite(r.lo[i])) rows.push_back({-Vec::Unit(n, i), -r.lo[i]});
    }
    Mat A(rows.size(), n);
    Vec b(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      A.row(k) = rows[k].first.transpose();
      b[k] = rows[k].second;
    }
    ConvexPolytope p(A, b);
    p.n_ = n;
    p.box_ = r;
    p.bbox_ = r;
    return p;
  }

  int dim() const { return n_; }
  const Mat& A() const { return A_; }
  const Vec& b() const { return b_; }
  bool is_box() const { return box_.has_value(); }
  const std::optional<HyperRect>& as_box() const { return box_; }

  bool contains(const Vec& x, double tol = kGeomTol) const {
    require_dim(n_, x.size(), "ConvexPolytope::contains");
    if (A_.rows() == 0) return true;
    return ((A_ * x - b_).array() <= tol).all();
  }

  bool is_empty(double tol = 1e-9) const {
    if (box_) return box_->empty(tol);
    auto r = rows();
    return !detail::fm_eliminate(r, n_, -1, tol);
  }

  // Exact bounds per coordinate by projection; infinite where unbounded.
  HyperRect bounds() const {
    if (bbox_) return *bbox_;
    Vec lo = Vec::Constant(n_, -kInf), hi = Vec::Constant(n_, kInf);
    for (int k = 0; k < n_; ++k) {
      auto rs = rows();
      if (!detail::fm_eliminate(rs, n_, k, 1e-9)) {
        // empty set: report an inverted box
        bbox_ = HyperRect(Vec::Constant(n_, kInf), Vec::Constant(n_, -kInf));
        return *bbox_;
      }
      for (const auto& r : rs) {
        if (r.a[k] > 1e-14) hi[k] = std::min(hi[k], r.b / r.a[k]);
        else if (r.a[k] < -1e-14) lo[k] = std::max(lo[k], r.b / r.a[k]);
      }
    }
    bbox_ = HyperRect(lo, hi);
    return *bbox_;
  }

  HyperRect bounding_box() const {
    HyperRect r = bounds();
    if (!r.bounded()) throw UnboundedRegion("bounding box of an unbounded polytope");
    return r;
  }

  // Over-approximating bounds supplied by the caller (kept only if tighter
  // information is not already cached).
  void set_bounds_hint(const HyperRect& r) const {
    if (!bbox_) hint_ = r;
  }
  HyperRect cheap_bounds() const {
    if (bbox_) return *bbox_;
    if (hint_) return *hint_;
    return bounds();
  }

  ConvexPolytope intersect(const ConvexPolytope& o) const {
    require_dim(n_, o.n_, "ConvexPolytope::intersect");
    if (box_ && o.box_) return from_box(box_->intersection(*o.box_));
    Mat A(A_.rows() + o.A_.rows(), n_);
    Vec b(b_.size() + o.b_.size());
    A << A_, o.A_;
    b << b_, o.b_;
    ConvexPolytope p(A, b);
    HyperRect h1 = cheap_bounds(), h2 = o.cheap_bounds();
    p.hint_ = h1.intersection(h2);
    return p;
  }

  bool intersects(const HyperRect& r, double tol = 1e-9) const {
    if (box_) return box_->intersects(r, tol);
    if (!cheap_bounds().intersects(r, tol)) return false;
    if (r.bounded() && contains(r.center(), 0)) return true;
    auto rs = rows();
    append_box(rs, r);
    return detail::fm_eliminate(rs, n_, -1, tol);
  }

  bool intersects(const ConvexPolytope& o, double tol = 1e-9) const {
    require_dim(n_, o.n_, "ConvexPolytope::intersects");
    if (o.box_) return intersects(*o.box_, tol);
    if (box_) return o.intersects(*box_, tol);
    if (!cheap_bounds().intersects(o.cheap_bounds(), tol)) return false;
    auto rs = rows();
    auto rs2 = o.rows();
    rs.insert(rs.end(), rs2.begin(), rs2.end());
    return detail::fm_eliminate(rs, n_, -1, tol);
  }

  // True when this polytope lies inside o (within tol).
  bool subset_of(const ConvexPolytope& o, double tol = kGeomTol) const {
    require_dim(n_, o.n_, "ConvexPolytope::subset_of");
    if (box_ && o.box_) return o.box_->contains(*box_, tol) || box_->empty(1e-12);
    if (is_empty()) return true;
    auto base = rows();
    for (int i = 0; i < o.A_.rows(); ++i) {
      // any point of this with o.a_i . x >= o.b_i + tol?
      auto rs = base;
      detail::Row r;
      for (int k = 0; k < n_; ++k) r.a[k] = -o.A_(i, k);
      r.b = -(o.b_[i] + tol);
      rs.push_back(r);
      if (detail::fm_eliminate(rs, n_, -1, 0.0)) return false;
    }
    return true;
  }

  std::vector<detail::Row> rows() const {
    std::vector<detail::Row> rs(A_.rows());
    for (int i = 0; i < A_.rows(); ++i) {
      for (int k = 0; k < n_; ++k) rs[i].a[k] = A_(i, k);
      rs[i].b = b_[i];
    }
    return rs;
  }

  static void append_box(std::vector<detail::Row>& rs, const HyperRect& r) {
    int n = r.dim();
    for (int k = 0; k < n; ++k) {
      if (std::isfinite(r.hi[k])) {
        detail::Row u;
        u.a[k] = 1;
        u.b = r.hi[k];
        rs.push_back(u);
      }
      if (std::isfinite(r.lo[k])) {
        detail::Row l;
        l.a[k] = -1;
        l.b = -r.lo[k];
        rs.push_back(l);
      }
    }
  }

 private:
  Mat A_;
  Vec b_;
  int n_ = 0;
  std::optional<HyperRect> box_;
  mutable std::optional<HyperRect> bbox_;
  mutable std::optional<HyperRect> hint_;
};

// Finite union of convex polytopes of a common dimension.
class Region {
 public:
  Region() = default;
  explicit Region(int n) : n_(n) {}
  Region(const HyperRect& r) : n_(r.dim()) { parts_.push_back(ConvexPolytope::from_box(r)); }
  Region(const ConvexPolytope& p) : n_(p.dim()) { parts_.push_back(p); }

  int dim() const { return n_; }
  const std::vector<ConvexPolytope>& parts() const { return parts_; }
  std::size_t size() const { return parts_.size(); }

  void add(const ConvexPolytope& p) {
    if (n_ == 0 && parts_.empty()) n_ = p.dim();
    require_dim(n_, p.dim(), "Region::add");
    parts_.push_back(p);
  }
  void add(const Region& r) {
    for (const auto& p : r.parts_) add(p);
  }

  bool is_empty() const {
    return std::all_of(parts_.begin(), parts_.end(), [](const auto& p) { return p.is_empty(); });
  }

  bool contains(const Vec& x, double tol = kGeomTol) const {
    return std::any_of(parts_.begin(), parts_.end(),
                       [&](const auto& p) { return p.contains(x, tol); });
  }

  HyperRect bounds() const {
    HyperRect out(Vec::Constant(n_, kInf), Vec::Constant(n_, -kInf));
    for (const auto& p : parts_) {
      HyperRect b = p.bounds();
      if (b.empty(0)) continue;
      out = out.hull(b);
    }
    return out;
  }

  HyperRect bounding_box() const {
    HyperRect b = bounds();
    if (!b.bounded() && !parts_.empty() && !is_empty())
      throw UnboundedRegion("bounding box of an unbounded region");
    return b;
  }

  bool all_boxes() const {
    return std::all_of(parts_.begin(), parts_.end(), [](const auto& p) { return p.is_box(); });
  }

  // Drops members contained in another member.
  void prune_subsumed() {
    std::vector<ConvexPolytope> out;
    std::vector<bool> drop(parts_.size(), false);
    for (std::size_t i = 0; i < parts_.size(); ++i) {
      if (parts_[i].is_empty()) {
        drop[i] = true;
        continue;
      }
      for (std::size_t j = 0; j < parts_.size() && !drop[i]; ++j) {
        if (i == j || drop[j]) continue;
        if (parts_[i].subset_of(parts_[j], 1e-9)) {
          // keep the first of two equal sets
          if (!parts_[j].subset_of(parts_[i], 1e-9) || j < i) drop[i] = true;
        }
      }
    }
    for (std::size_t i = 0; i < parts_.size(); ++i)
      if (!drop[i]) out.push_back(parts_[i]);
    parts_.swap(out);
  }

 private:
  int n_ = 0;
  std::vector<ConvexPolytope> parts_;
};

inline Region intersect(const Region& a, const Region& b) {
  require_dim(a.dim(), b.dim(), "intersect");
  Region out(a.dim());
  for (const auto& p : a.parts())
    for (const auto& q : b.parts()) {
      ConvexPolytope r = p.intersect(q);
      if (!r.is_empty()) out.add(r);
    }
  return out;
}

inline bool intersects(const Region& a, const Region& b) {
  require_dim(a.dim(), b.dim(), "intersects");
  for (const auto& p : a.parts())
    for (const auto& q : b.parts())
      if (p.intersects(q)) return true;
  return false;
}

// Sufficient test for b inside a: every member of b fits in one member of a.
inline bool contains(const Region& a, const Region& b, double tol = kGeomTol) {
  require_dim(a.dim(), b.dim(), "contains");
  for (const auto& q : b.parts()) {
    if (q.is_empty()) continue;
    bool ok = std::any_of(a.parts().begin(), a.parts().end(),
                          [&](const auto& p) { return q.subset_of(p, tol); });
    if (!ok) return false;
  }
  return true;
}

// y = M x + c
class AffineMap {
 public:
  AffineMap() = default;
  AffineMap(Mat M, Vec c) : M_(std::move(M)), c_(std::move(c)) {
    if (M_.rows() != M_.cols()) throw DimensionMismatch("affine map must be square");
    require_dim(M_.rows(), c_.size(), "AffineMap");
  }
  static AffineMap identity(int n) { return {Mat::Identity(n, n), Vec::Zero(n)}; }
  static AffineMap translation(const Vec& c) {
    return {Mat::Identity(c.size(), c.size()), c};
  }

  int dim() const { return static_cast<int>(c_.size()); }
  const Mat& M() const { return M_; }
  const Vec& c() const { return c_; }

  Vec operator()(const Vec& x) const {
    require_dim(dim(), x.size(), "AffineMap apply");
    return M_ * x + c_;
  }

  bool invertible() const { return std::abs(M_.determinant()) > kDetTol; }

  AffineMap inverse() const {
    if (!invertible()) throw SingularMap("affine map is not invertible");
    Mat Mi = M_.inverse();
    return {Mi, -Mi * c_};
  }

  // (this o g)(x) = this(g(x))
  AffineMap after(const AffineMap& g) const {
    require_dim(dim(), g.dim(), "AffineMap compose");
    return {M_ * g.M_, M_ * g.c_ + c_};
  }

  bool approx_equal(const AffineMap& o, double tol = 1e-9) const {
    return dim() == o.dim() && (M_ - o.M_).cwiseAbs().maxCoeff() <= tol &&
           (c_ - o.c_).cwiseAbs().maxCoeff() <= tol;
  }

  // Maps axis-aligned boxes to axis-aligned boxes.
  bool is_signed_permutation(double tol = 1e-12) const {
    for (int i = 0; i < M_.rows(); ++i) {
      int nz = 0;
      for (int j = 0; j < M_.cols(); ++j) {
        double a = std::abs(M_(i, j));
        if (a > tol) {
          if (std::abs(a - 1.0) > tol) return false;
          ++nz;
        }
      }
      if (nz != 1) return false;
    }
    return true;
  }

  // Image of a possibly unbounded box under a signed permutation.
  HyperRect permuted_box(const HyperRect& r) const {
    int n = dim();
    Vec lo(n), hi(n);
    for (int i = 0; i < n; ++i) {
      int j = 0;
      while (std::abs(M_(i, j)) < 0.5) ++j;
      double a = M_(i, j) > 0 ? r.lo[j] : -r.hi[j];
      double b = M_(i, j) > 0 ? r.hi[j] : -r.lo[j];
      lo[i] = a + c_[i];
      hi[i] = b + c_[i];
    }
    return {lo, hi};
  }

  HyperRect image_bounds(const HyperRect& r) const {
    Vec c = (*this)(r.center());
    Vec h = M_.cwiseAbs() * (0.5 * r.width());
    return {c - h, c + h};
  }

  ConvexPolytope apply(const ConvexPolytope& p) const {
    require_dim(dim(), p.dim(), "AffineMap apply polytope");
    if (p.is_box() && is_signed_permutation()) return ConvexPolytope::from_box(permuted_box(*p.as_box()));
    AffineMap inv = inverse();
    // {y : A (Mi y + ci) <= b}
    Mat A = p.A() * inv.M_;
    Vec b = p.b() - p.A() * inv.c_;
    ConvexPolytope out(A, b);
    HyperRect hb = p.cheap_bounds();
    if (hb.bounded()) out.set_bounds_hint(image_bounds(hb));
    return out;
  }

  Region apply(const Region& r) const {
    Region out(r.dim());
    for (const auto& p : r.parts()) out.add(apply(p));
    return out;
  }

 private:
  Mat M_;
  Vec c_;
};

inline Region transform_region(const Region& r, const AffineMap& m) { return m.apply(r); }

// Integer cell index of a grid.
struct CellId {
  std::array<std::int32_t, kMaxDim> idx{};
  std::uint8_t n = 0;

  bool operator==(const CellId& o) const {
    if (n != o.n) return false;
    for (int i = 0; i < n; ++i)
      if (idx[i] != o.idx[i]) return false;
    return true;
  }
  bool operator<(const CellId& o) const {
    if (n != o.n) return n < o.n;
    for (int i = 0; i < n; ++i)
      if (idx[i] != o.idx[i]) return idx[i] < o.idx[i];
    return false;
  }
};

struct CellIdHash {
  std::size_t operator()(const CellId& c) const {
    std::uint64_t h = 1469598103934665603ull;
    for (int i = 0; i < c.n; ++i) {
      h ^= static_cast<std::uint32_t>(c.idx[i]);
      h *= 1099511628211ull;
      h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
  }
};

using CellSet = std::unordered_set<CellId, CellIdHash>;

inline std::vector<CellId> sorted(const CellSet& s) {
  std::vector<CellId> v(s.begin(), s.end());
  std::sort(v.begin(), v.end());
  return v;
}

inline bool subset(const CellSet& a, const CellSet& b) {
  for (const auto& c : a)
    if (!b.count(c)) return false;
  return true;
}

// Cell c covers [origin + c*w, origin + (c+1)*w). A coordinate with a
// positive period is an angle; cells in it are folded into one turn.
struct Grid {
  Vec origin;
  Vec width;
  Vec period;

  Grid() = default;
  Grid(Vec o, Vec w, Vec per = Vec()) : origin(std::move(o)), width(std::move(w)), period(std::move(per)) {
    require_dim(origin.size(), width.size(), "Grid");
    if (period.size() == 0) period = Vec::Zero(origin.size());
    require_dim(origin.size(), period.size(), "Grid period");
    if (origin.size() > kMaxDim) throw DimensionMismatch("grid dimension above supported maximum");
    if ((width.array() <= 0).any()) throw GeometryError("grid cell width must be positive");
    for (int i = 0; i < dim(); ++i) {
      if (period[i] > 0) {
        double m = period[i] / width[i];
        if (std::abs(m - std::round(m)) > 1e-9)
          throw GeometryError("period must be a whole number of cells");
      }
    }
  }

  int dim() const { return static_cast<int>(origin.size()); }
  double cell_volume() const { return width.prod(); }

  HyperRect cell_box(const CellId& c) const {
    Vec lo(dim()), hi(dim());
    for (int i = 0; i < dim(); ++i) {
      lo[i] = origin[i] + c.idx[i] * width[i];
      hi[i] = lo[i] + width[i];
    }
    return {lo, hi};
  }

  Vec cell_center(const CellId& c) const { return cell_box(c).center(); }

  CellId cell_of(const Vec& x) const {
    require_dim(dim(), x.size(), "Grid::cell_of");
    CellId c;
    c.n = static_cast<std::uint8_t>(dim());
    for (int i = 0; i < dim(); ++i)
      c.idx[i] = static_cast<std::int32_t>(std::floor((x[i] - origin[i]) / width[i]));
    return canonical(c);
  }

  // Folds periodic coordinates into the turn [-period/2, period/2).
  CellId canonical(CellId c) const {
    for (int i = 0; i < dim(); ++i) {
      if (period[i] <= 0) continue;
      int m = static_cast<int>(std::lround(period[i] / width[i]));
      int k0 = static_cast<int>(std::floor((-0.5 * period[i] - origin[i]) / width[i] + 1e-9));
      int r = (c.idx[i] - k0) % m;
      if (r < 0) r += m;
      c.idx[i] = k0 + r;
    }
    return c;
  }

  // Cells whose interior meets the open box (lo, hi), before folding.
  template <class F>
  void for_each_overlapping(const HyperRect& r, F&& f, double tol = kGeomTol) const {
    std::array<int, kMaxDim> a{}, b{};
    int n = dim();
    for (int i = 0; i < n; ++i) {
      a[i] = static_cast<int>(std::floor((r.lo[i] + tol - origin[i]) / width[i]));
      b[i] = static_cast<int>(std::ceil((r.hi[i] - tol - origin[i]) / width[i])) - 1;
      if (b[i] < a[i]) return;
    }
    CellId c;
    c.n = static_cast<std::uint8_t>(n);
    for (int i = 0; i < n; ++i) c.idx[i] = a[i];
    for (;;) {
      f(c);
      int i = 0;
      for (; i < n; ++i) {
        if (++c.idx[i] <= b[i]) break;
        c.idx[i] = a[i];
      }
      if (i == n) return;
    }
  }

  // Cells whose closed box meets the closed box r, before folding.
  template <class F>
  void for_each_touching(const HyperRect& r, F&& f, double tol = kGeomTol) const {
    HyperRect g(r.lo.array() - 2 * tol, r.hi.array() + 2 * tol);
    std::array<int, kMaxDim> a{}, b{};
    int n = dim();
    for (int i = 0; i < n; ++i) {
      a[i] = static_cast<int>(std::floor((g.lo[i] - origin[i]) / width[i]));
      b[i] = static_cast<int>(std::floor((g.hi[i] - origin[i]) / width[i]));
    }
    CellId c;
    c.n = static_cast<std::uint8_t>(n);
    for (int i = 0; i < n; ++i) c.idx[i] = a[i];
    for (;;) {
      f(c);
      int i = 0;
      for (; i < n; ++i) {
        if (++c.idx[i] <= b[i]) break;
        c.idx[i] = a[i];
      }
      if (i == n) return;
    }
  }
};

// Cells whose interior meets the polytope. A member with empty interior
// (a point or a face) falls back to every cell its closed box touches.
inline void add_occupied_cells(const ConvexPolytope& p, const Grid& g, CellSet& out) {
  require_dim(p.dim(), g.dim(), "occupied_cells");
  HyperRect bb = p.is_box() ? *p.as_box() : p.cheap_bounds();
  if (bb.empty(1e-9)) return;
  if (!bb.bounded()) throw UnboundedRegion("occupied_cells needs a bounded region");
  bool found = false;
  if (p.is_box()) {
    g.for_each_overlapping(bb, [&](const CellId& c) {
      out.insert(g.canonical(c));
      found = true;
    });
  } else {
    g.for_each_overlapping(bb, [&](const CellId& c) {
      HyperRect cb = g.cell_box(c);
      HyperRect inner(cb.lo.array() + kGeomTol, cb.hi.array() - kGeomTol);
      if (p.intersects(inner, 0.0)) {
        out.insert(g.canonical(c));
        found = true;
      }
    });
  }
  if (found || p.is_empty()) return;
  g.for_each_touching(bb, [&](const CellId& c) {
    if (p.intersects(g.cell_box(c), kGeomTol)) out.insert(g.canonical(c));
  });
}

inline CellSet occupied_cells(const Region& r, const Grid& g) {
  CellSet out;
  for (const auto& p : r.parts()) add_occupied_cells(p, g, out);
  return out;
}

inline Region cells_region(const CellSet& cells, const Grid& g) {
  Region r(g.dim());
  for (const auto& c : sorted(cells)) r.add(ConvexPolytope::from_box(g.cell_box(c)));
  return r;
}

// Exact volume of a union of boxes by coordinate compression.
inline double boxes_union_volume(const std::vector<HyperRect>& boxes) {
  if (boxes.empty()) return 0.0;
  int n = boxes.front().dim();
  std::vector<std::vector<double>> cuts(n);
  for (const auto& b : boxes) {
    if (!b.bounded()) throw UnboundedRegion("volume of unbounded region");
    if (b.empty(0)) continue;
    for (int i = 0; i < n; ++i) {
      cuts[i].push_back(b.lo[i]);
      cuts[i].push_back(b.hi[i]);
    }
  }
  for (auto& c : cuts) {
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
  }
  if (cuts[0].empty()) return 0.0;
  std::size_t total = 1;
  for (auto& c : cuts) total *= c.size() > 1 ? c.size() - 1 : 0;
  if (total == 0) return 0.0;
  if (total > 50'000'000) throw GeometryError("box union too fragmented for exact volume");
  std::vector<char> mark(total, 0);
  for (const auto& b : boxes) {
    if (b.empty(0)) continue;
    std::array<std::size_t, kMaxDim> a{}, e{};
    for (int i = 0; i < n; ++i) {
      a[i] = std::lower_bound(cuts[i].begin(), cuts[i].end(), b.lo[i]) - cuts[i].begin();
      e[i] = std::lower_bound(cuts[i].begin(), cuts[i].end(), b.hi[i]) - cuts[i].begin();
      if (e[i] <= a[i]) goto next;
    }
    {
      std::array<std::size_t, kMaxDim> k = a;
      for (;;) {
        std::size_t off = 0;
        for (int i = n - 1; i >= 0; --i) off = off * (cuts[i].size() - 1) + k[i];
        mark[off] = 1;
        int i = 0;
        for (; i < n; ++i) {
          if (++k[i] < e[i]) break;
          k[i] = a[i];
        }
        if (i == n) break;
      }
    }
  next:;
  }
  double vol = 0;
  std::array<std::size_t, kMaxDim> k{};
  for (std::size_t off = 0; off < total; ++off) {
    std::size_t rem = off;
    double v = 1;
    for (int i = 0; i < n; ++i) {
      std::size_t m = cuts[i].size() - 1;
      k[i] = rem % m;
      rem /= m;
      v *= cuts[i][k[i] + 1] - cuts[i][k[i]];
    }
    if (mark[off]) vol += v;
  }
  return vol;
}

// Box unions are measured exactly. Regions with general polytopes are
// measured by the cells they occupy on the supplied grid.
inline double region_volume(const Region& r, const Grid* g = nullptr) {
  if (r.all_boxes()) {
    std::vector<HyperRect> boxes;
    for (const auto& p : r.parts()) boxes.push_back(*p.as_box());
    return boxes_union_volume(boxes);
  }
  if (!g) throw GeometryError("volume of a non-box region needs a grid");
  return static_cast<double>(occupied_cells(r, *g).size()) * g->cell_volume();
}

inline double cells_volume(const CellSet& s, const Grid& g) {
  return static_cast<double>(s.size()) * g.cell_volume();
}

}  // namespace symreach
