#pragma once

#include "symreach/abstraction.hpp"
#include "symreach/tube.hpp"

#include <chrono>
#include <deque>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace symreach {

struct NoFixedPoint : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UncoveredMode : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateBaseline : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Method { NS, SC, SV };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::NS: return "NS";
    case Method::SC: return "SC";
    case Method::SV: return "SV";
  }
  return "?";
}

struct Metrics {
  long co = 0;
  long re = 0;
  long cp = 0;
  double wall_time = 0;
  double error_pct = std::numeric_limits<double>::quiet_NaN();
  long tot() const { return co + re + cp; }
};

// ---------------------------------------------------------------------------
// Box tests against a region, with angle coordinates handled modulo a turn.

// Overlaps thinner than this count as contact along a face.
inline constexpr double kFaceTol = 1e-9;

class BoxTester {
 public:
  BoxTester() = default;
  BoxTester(const Region& r, const Vec& periods) : n_(r.dim()) {
    bounds_.n = n_;
    for (int i = 0; i < n_; ++i) {
      bounds_.lo[i] = kInf;
      bounds_.hi[i] = -kInf;
    }
    for (const auto& p : r.parts()) {
      if (p.is_empty()) continue;
      Part part;
      part.is_box = p.is_box();
      HyperRect b = p.bounds();
      part.bounds = RawBox::of(b);
      if (!part.is_box) part.rows = p.rows();
      for (int i = 0; i < n_; ++i) {
        bounds_.lo[i] = std::min(bounds_.lo[i], b.lo[i]);
        bounds_.hi[i] = std::max(bounds_.hi[i], b.hi[i]);
      }
      parts_.push_back(std::move(part));
    }
    for (int i = 0; i < n_ && i < periods.size(); ++i)
      if (periods[i] > 0 && std::isfinite(bounds_.lo[i]) && std::isfinite(bounds_.hi[i])) {
        periodic_dim_ = i;
        period_ = periods[i];
      }
  }

  bool empty() const { return parts_.empty(); }
  const RawBox& bounds() const { return bounds_; }

  bool intersects(const RawBox& b, double tol = 1e-9) const {
    if (periodic_dim_ < 0) return intersects_plain(b, tol);
    int i = periodic_dim_;
    // shift the box by whole turns towards the region
    double mid = 0.5 * (b.lo[i] + b.hi[i]);
    double rmid = 0.5 * (bounds_.lo[i] + bounds_.hi[i]);
    long k0 = std::lround((rmid - mid) / period_);
    for (long k = k0 - 2; k <= k0 + 2; ++k) {
      RawBox s = b;
      s.lo[i] += k * period_;
      s.hi[i] += k * period_;
      if (intersects_plain(s, tol)) return true;
    }
    return false;
  }

  bool may_intersect(const RawBox& b, double tol = 1e-9) const {
    if (periodic_dim_ >= 0) return true;
    return bounds_.overlaps(b, tol);
  }

 private:
  struct Part {
    bool is_box = false;
    RawBox bounds;
    std::vector<detail::Row> rows;
  };

  bool intersects_plain(const RawBox& b, double tol) const {
    for (const auto& p : parts_) {
      if (!p.bounds.overlaps(b, tol)) continue;
      if (p.is_box) return true;
      // centre inside the polytope settles most cases without elimination
      bool inside = true;
      for (const auto& r : p.rows) {
        double s = 0;
        for (int i = 0; i < n_; ++i) s += r.a[i] * 0.5 * (b.lo[i] + b.hi[i]);
        if (s > r.b) {
          inside = false;
          break;
        }
      }
      if (inside) return true;
      auto rows = p.rows;
      for (int i = 0; i < n_; ++i) {
        detail::Row u, l;
        u.a[i] = 1;
        u.b = b.hi[i];
        l.a[i] = -1;
        l.b = -b.lo[i];
        rows.push_back(u);
        rows.push_back(l);
      }
      if (detail::fm_eliminate(rows, n_, -1, tol)) return true;
    }
    return false;
  }

  int n_ = 0;
  RawBox bounds_;
  std::vector<Part> parts_;
  int periodic_dim_ = -1;
  double period_ = 0;
};

namespace detail {

// Cells whose interior meets the open box, before folding.
template <class F>
void raw_overlapping_cells(const Grid& g, const RawBox& r, F&& f) {
  int n = g.dim();
  std::array<int, kMaxDim> a{}, b{};
  for (int i = 0; i < n; ++i) {
    a[i] = static_cast<int>(std::floor((r.lo[i] + kGeomTol - g.origin[i]) / g.width[i]));
    b[i] = static_cast<int>(std::ceil((r.hi[i] - kGeomTol - g.origin[i]) / g.width[i])) - 1;
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

inline RawBox raw_cell_box(const Grid& g, const CellId& c) {
  RawBox b;
  b.n = g.dim();
  for (int i = 0; i < b.n; ++i) {
    b.lo[i] = g.origin[i] + c.idx[i] * g.width[i];
    b.hi[i] = b.lo[i] + g.width[i];
  }
  return b;
}

inline RawBox raw_intersection(const RawBox& a, const RawBox& b) {
  RawBox r;
  r.n = a.n;
  for (int i = 0; i < a.n; ++i) {
    r.lo[i] = std::max(a.lo[i], b.lo[i]);
    r.hi[i] = std::min(a.hi[i], b.hi[i]);
  }
  return r;
}

// Image of a box under a signed-permutation map, as a box.
inline RawBox perm_image(const AffineMap& m, const RawBox& b) {
  RawBox r;
  r.n = b.n;
  const Mat& M = m.M();
  for (int i = 0; i < b.n; ++i) {
    double lo = m.c()[i], hi = m.c()[i];
    for (int j = 0; j < b.n; ++j) {
      double a = M(i, j);
      if (a > 0.5) {
        lo += b.lo[j];
        hi += b.hi[j];
      } else if (a < -0.5) {
        lo -= b.hi[j];
        hi -= b.lo[j];
      }
    }
    r.lo[i] = lo;
    r.hi[i] = hi;
  }
  return r;
}

}  // namespace detail

// Cells of a tube's boxes that meet a guard, in the tube's own grid and
// without folding periodic coordinates.
inline void tube_exit_cells(const CellTube& t, const BoxTester& guard, const Grid& g, CellSet& out) {
  if (guard.empty()) return;
  if (!guard.may_intersect(t.bounds)) return;
  for (long k = 0; k < t.count; ++k) {
    RawBox B = t.box(k);
    if (!guard.may_intersect(B)) continue;
    detail::raw_overlapping_cells(g, B, [&](const CellId& c) {
      if (out.count(c)) return;
      // Contact along a face does not count; otherwise rounding decides
      // whether a guard edge lying on a grid line lets the cell out.
      RawBox X = detail::raw_intersection(B, detail::raw_cell_box(g, c));
      for (int i = 0; i < X.n; ++i) {
        X.lo[i] += kFaceTol;
        X.hi[i] -= kFaceTol;
        if (X.lo[i] > X.hi[i]) return;
      }
      if (guard.intersects(X, 0.0)) out.insert(c);
    });
  }
}

// A transition between frames: the guard in the source frame and the maps
// carrying guard states into the target frame. Exit cells and their images
// are memoised because the fixed-point check revisits them.
class Transition {
 public:
  Transition(const Grid& g, Region guard, std::vector<AffineMap> maps, const Vec& periods)
      : grid_(g), guard_(std::move(guard)), tester_(guard_, periods), maps_(std::move(maps)) {
    for (const auto& m : maps_) perm_.push_back(m.is_signed_permutation(1e-12));
  }

  const CellSet& exits(const CellTubePtr& t) {
    auto it = exit_memo_.find(t.get());
    if (it != exit_memo_.end()) return it->second.second;
    CellSet s;
    tube_exit_cells(*t, tester_, grid_, s);
    auto& slot = exit_memo_[t.get()];
    slot.first = t;  // keep the tube alive while memoised
    slot.second = std::move(s);
    return slot.second;
  }

  // Target-frame cells covered by the reset images of (cell box ∩ guard).
  const std::vector<CellId>& image(const CellId& c) {
    auto it = image_memo_.find(c);
    if (it != image_memo_.end()) return it->second;
    CellSet out;
    HyperRect cb = grid_.cell_box(c);
    for (const auto& part : guard_.parts()) {
      ConvexPolytope piece;
      if (part.is_box()) {
        HyperRect x = cb.intersection(*part.as_box());
        if (x.empty(0.0) || (x.width().array() < 2 * kFaceTol).any()) continue;
        piece = ConvexPolytope::from_box(x);
      } else if (box_inside(cb, part)) {
        piece = ConvexPolytope::from_box(cb);
      } else {
        piece = ConvexPolytope::from_box(cb).intersect(part);
        if (piece.is_empty()) continue;
      }
      for (std::size_t m = 0; m < maps_.size(); ++m) {
        if (perm_[m] && piece.is_box()) {
          add_occupied_cells(ConvexPolytope::from_box(detail::perm_image(maps_[m], RawBox::of(*piece.as_box())).rect()),
                             grid_, out);
        } else {
          add_occupied_cells(maps_[m].apply(piece), grid_, out);
        }
      }
    }
    auto& v = image_memo_[c];
    v.assign(out.begin(), out.end());
    return v;
  }

  CellSet next_cells(const std::vector<CellTubePtr>& tubes) {
    CellSet ex;
    for (const auto& t : tubes) {
      const CellSet& s = exits(t);
      ex.insert(s.begin(), s.end());
    }
    CellSet out;
    for (const auto& c : ex)
      for (const auto& d : image(c)) out.insert(d);
    return out;
  }

  Region exit_region(const CellSet& exit_cells) const {
    Region r(grid_.dim());
    for (const auto& c : sorted(exit_cells)) {
      ConvexPolytope cb = ConvexPolytope::from_box(grid_.cell_box(c));
      for (const auto& part : guard_.parts()) {
        ConvexPolytope piece = cb.intersect(part);
        if (piece.is_empty()) continue;
        for (const auto& m : maps_) r.add(m.apply(piece));
      }
    }
    return r;
  }

  const Region& guard() const { return guard_; }

 private:
  static bool box_inside(const HyperRect& b, const ConvexPolytope& p) {
    int n = b.dim();
    for (int v = 0; v < (1 << n); ++v) {
      Vec x(n);
      for (int i = 0; i < n; ++i) x[i] = (v >> i) & 1 ? b.hi[i] : b.lo[i];
      if (!p.contains(x, 0)) return false;
    }
    return true;
  }

  Grid grid_;
  Region guard_;
  BoxTester tester_;
  std::vector<AffineMap> maps_;
  std::vector<bool> perm_;
  std::unordered_map<const CellTube*, std::pair<CellTubePtr, CellSet>> exit_memo_;
  std::unordered_map<CellId, std::vector<CellId>, CellIdHash> image_memo_;
};

// ---------------------------------------------------------------------------
// Per-virtual-mode accumulation.

struct ModeEntry {
  CellSet K;
  std::vector<CellTubePtr> R;
};

struct PerModeDict {
  std::map<int, ModeEntry> entries;
  bool fixed_point = false;

  bool has(int pv) const { return entries.count(pv) > 0; }
  const ModeEntry& at(int pv) const { return entries.at(pv); }

  // Adds initial cells with their tubes; cells already present are skipped.
  void add(int pv, const std::vector<CellId>& cells, const std::vector<CellTubePtr>& tubes) {
    ModeEntry& e = entries[pv];
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (e.K.insert(cells[i]).second) e.R.push_back(tubes[i]);
  }
};

// Transitions for every virtual edge, indexed like the edges.
inline std::vector<Transition> virtual_transitions(const VirtualAutomaton& va, const Grid& g) {
  std::vector<Transition> out;
  Vec per = va.autom.dynamics.periods();
  for (int e = 0; e < va.num_edges(); ++e) out.emplace_back(g, va.autom.guards[e], va.autom.resets[e], per);
  return out;
}

inline bool check_fixed_point(const PerModeDict& dict, const VirtualAutomaton& va, const Grid& g,
                              std::vector<Transition>& trans) {
  if (dict.entries.empty()) return false;
  for (int q = 0; q < va.num_modes(); ++q)
    if (!dict.has(q)) return false;
  CellSet theta = occupied_cells(va.autom.init_set, g);
  if (!subset(theta, dict.at(va.autom.init_mode).K)) return false;
  for (int e = 0; e < va.num_edges(); ++e) {
    const Edge& ed = va.autom.edges[e];
    CellSet img = trans[e].next_cells(dict.at(ed.src).R);
    if (!subset(img, dict.at(ed.dst).K)) return false;
  }
  return true;
}

inline bool check_fixed_point(const PerModeDict& dict, const VirtualAutomaton& va, const Grid& g) {
  auto trans = virtual_transitions(va, g);
  return check_fixed_point(dict, va, g, trans);
}

// ---------------------------------------------------------------------------
// Reach computation.

struct ReachSettings {
  Grid grid;
  double dt = 0.01;
  bool collect_cells = false;  // occupied concrete cells per segment
  bool collect_boxes = false;  // per-time-step bounding boxes per segment
  long segment_budget = 0;     // for an unbounded horizon; 0 selects 10·|P_v|·|E_v|
  // Grid of the virtual coordinates; unset selects aligned_virtual_grid.
  std::optional<Grid> virtual_grid;
};

// The concrete grid shifted so that every box-preserving γ_p sends concrete
// cells exactly onto virtual cells. Falls back to the concrete grid when the
// maps disagree about the shift or permute cells of different widths.
inline Grid aligned_virtual_grid(const Grid& g, const VirtualAutomaton& va) {
  std::optional<Vec> shift;
  for (const auto& pr : va.pairs) {
    const AffineMap& m = pr.gamma;
    if (!m.is_signed_permutation(1e-12)) continue;
    if ((m.M().cwiseAbs() * g.width - g.width).cwiseAbs().maxCoeff() > 1e-12) return g;
    Vec o = m(g.origin);
    for (int i = 0; i < o.size(); ++i) {
      o[i] -= std::floor(o[i] / g.width[i]) * g.width[i];
      if (g.width[i] - o[i] < 1e-9) o[i] = 0;
    }
    if (!shift) {
      shift = o;
    } else {
      for (int i = 0; i < o.size(); ++i) {
        double d = std::abs(o[i] - (*shift)[i]);
        if (std::min(d, g.width[i] - d) > 1e-9) return g;
      }
    }
  }
  if (!shift) return g;
  return Grid(*shift, g.width, g.period);
}

struct TimeBox {
  double t_lo, t_hi;
  HyperRect box;
  Provenance prov;
};

struct SegmentRecord {
  int path_index = 0;
  int concrete_mode = 0;
  int virtual_mode = -1;
  Provenance kind = Provenance::Computed;
  long init_cells = 0;
  double init_volume = 0;
  long co = 0;
  long re = 0;
  bool reboxed = false;  // output boxes are bounding boxes of rotated boxes
  CellSet cells;
  std::vector<TimeBox> boxes;
};

struct VirtualSegment {
  int virtual_mode = 0;
  long depth = 0;  // transitions from the virtual initial mode
  long new_cells = 0;
  long co = 0;
  long re = 0;
};

struct ReachResult {
  Method method = Method::NS;
  std::vector<int> path;
  std::vector<SegmentRecord> segments;
  Metrics metrics;
  std::optional<PerModeDict> dict;
  bool fixed_point = false;
  int computed_segments = 0;
  std::vector<VirtualSegment> virtual_segments;  // SV only, in computation order
  Grid virtual_grid;                             // cells of K and of the dictionary
};

struct TransformedTube {
  std::vector<CellTubePtr> tubes;
  AffineMap to_concrete;
};

namespace detail {

inline std::vector<CellTubePtr> fetch_tubes(const std::vector<CellId>& cells, const Dynamics& d, const Grid& g,
                                            TubeCache& cache, int key, const Vec& target, double T, long& co, long& re,
                                            std::vector<Provenance>* prov = nullptr) {
  std::vector<CellTubePtr> out;
  out.reserve(cells.size());
  for (const auto& c : cells) {
    auto l = cache.get_or_compute(d, g, key, target, c, T);
    (l.hit ? re : co) += 1;
    if (prov) prov->push_back(l.hit ? Provenance::Retrieved : Provenance::Computed);
    out.push_back(std::move(l.tube));
  }
  return out;
}

// Occupied concrete cells and per-step bounding boxes of transformed tubes.
inline void collect_output(SegmentRecord& rec, const std::vector<CellTubePtr>& tubes,
                           const std::vector<Provenance>& prov, const AffineMap& to_concrete,
                           const ReachSettings& s) {
  if (!s.collect_cells && !s.collect_boxes) return;
  const Grid& g = s.grid;
  bool perm = to_concrete.is_signed_permutation(1e-12);
  rec.reboxed = !perm;
  std::map<std::pair<int, long>, TimeBox> boxes;
  for (std::size_t ti = 0; ti < tubes.size(); ++ti) {
    const CellTube& t = *tubes[ti];
    for (long k = 0; k < t.count; ++k) {
      RawBox B = t.box(k);
      RawBox img = perm ? perm_image(to_concrete, B) : RawBox::of(to_concrete.image_bounds(B.rect()));
      if (s.collect_boxes) {
        auto key = std::make_pair(static_cast<int>(prov[ti]), k);
        auto it = boxes.find(key);
        if (it == boxes.end()) {
          boxes.emplace(key, TimeBox{t.t_lo(k), t.t_hi(k), img.rect(), prov[ti]});
        } else {
          for (int i = 0; i < img.n; ++i) {
            it->second.box.lo[i] = std::min(it->second.box.lo[i], img.lo[i]);
            it->second.box.hi[i] = std::max(it->second.box.hi[i], img.hi[i]);
          }
        }
      }
      if (s.collect_cells) {
        bool fresh = false;
        raw_overlapping_cells(g, img, [&](const CellId& c) { fresh = fresh || !rec.cells.count(g.canonical(c)); });
        if (!fresh) continue;
        if (perm) {
          raw_overlapping_cells(g, img, [&](const CellId& c) { rec.cells.insert(g.canonical(c)); });
        } else {
          add_occupied_cells(to_concrete.apply(ConvexPolytope::from_box(B.rect())), g, rec.cells);
        }
      }
    }
  }
  for (auto& [key, tb] : boxes) rec.boxes.push_back(std::move(tb));
  std::stable_sort(rec.boxes.begin(), rec.boxes.end(),
                   [](const TimeBox& a, const TimeBox& b) { return a.t_hi < b.t_hi; });
}

inline std::vector<CellId> sorted_cells(const CellSet& s) { return sorted(s); }

}  // namespace detail

// Number of path segments covered by a horizon of J transitions (nullopt = unbounded).
inline std::size_t horizon_length(const std::vector<int>& path, std::optional<long> J) {
  if (!J) return path.size();
  if (*J < 0) throw std::invalid_argument("J must be non-negative");
  return std::min<std::size_t>(path.size(), static_cast<std::size_t>(*J) + 1);
}

inline ReachResult compute_reachset(const HybridAutomaton& a, const std::vector<int>& path, Method method,
                                    const VirtualAutomaton* va, const ReachSettings& s, std::optional<long> J,
                                    TubeCache* shared_cache = nullptr) {
  if (path.empty()) throw std::invalid_argument("empty path");
  if (path.front() != a.init_mode) throw std::invalid_argument("path must start at the initial mode");
  if (!is_path(a, path)) throw DisconnectedPath("path uses a missing edge");
  if (method != Method::NS && !va) throw std::invalid_argument("symmetry methods need a virtual automaton");
  if (!J && method != Method::SV) throw std::invalid_argument("unbounded horizon needs the SV method");

  auto start = std::chrono::steady_clock::now();
  const Grid& g = s.grid;
  const Grid vg = method == Method::NS ? g : s.virtual_grid ? *s.virtual_grid : aligned_virtual_grid(g, *va);
  const Dynamics& dyn = a.dynamics;
  Vec per = dyn.periods();
  TubeCache local;
  TubeCache& cache = shared_cache ? *shared_cache : local;
  cache.bind(vg, s.dt);

  ReachResult res;
  res.method = method;
  res.path = path;
  res.virtual_grid = vg;
  std::size_t L = horizon_length(path, J);

  auto edge_between = [&](int p, int q) {
    auto e = a.find_edge(p, q);
    return *e;
  };

  auto record = [&](std::size_t i, int pv, const CellSet& K, const std::vector<CellTubePtr>& tubes,
                    const std::vector<Provenance>& prov, long co, long re, const AffineMap& back) {
    SegmentRecord rec;
    rec.path_index = static_cast<int>(i);
    rec.concrete_mode = path[i];
    rec.virtual_mode = pv;
    rec.kind = Provenance::Computed;
    rec.init_cells = static_cast<long>(K.size());
    rec.init_volume = cells_volume(K, vg);
    rec.co = co;
    rec.re = re;
    detail::collect_output(rec, tubes, prov, back, s);
    res.segments.push_back(std::move(rec));
    res.metrics.co += co;
    res.metrics.re += re;
    ++res.computed_segments;
  };

  if (method == Method::NS || method == Method::SC) {
    bool ns = method == Method::NS;
    std::map<int, Transition> trans;
    auto frame_pair = [&](int p) -> const SymmetryPair* { return ns ? nullptr : &va->pairs[p]; };
    CellSet K = ns ? occupied_cells(a.init_set, g) : occupied_cells(va->pairs[path[0]].gamma.apply(a.init_set), vg);
    for (std::size_t i = 0; i < L; ++i) {
      int p = path[i];
      Vec mode = ns ? a.modes[p] : va->autom.modes[va->mode_of[p]];
      int key = cache.key_for(mode, vg);
      long co = 0, re = 0;
      std::vector<Provenance> prov;
      auto cells = detail::sorted_cells(K);
      auto tubes = detail::fetch_tubes(cells, dyn, vg, cache, key, dyn.target_of(mode), a.time_bounds[p], co, re, &prov);
      AffineMap back = ns ? AffineMap::identity(a.n) : frame_pair(p)->gamma_inv;
      record(i, ns ? -1 : va->mode_of[p], K, tubes, prov, co, re, back);
      if (i + 1 == L) break;
      int q = path[i + 1];
      int e = edge_between(p, q);
      auto it = trans.find(e);
      if (it == trans.end()) {
        Region guard = a.guards[e];
        std::vector<AffineMap> maps = a.resets[e];
        if (!ns) {
          guard = frame_pair(p)->gamma.apply(guard);
          for (auto& m : maps) m = frame_pair(q)->gamma.after(m.after(frame_pair(p)->gamma_inv));
        }
        it = trans.emplace(e, Transition(vg, guard, maps, per)).first;
      }
      K = it->second.next_cells(tubes);
    }
  } else {
    // Breadth-first over the virtual automaton, one depth level at a time.
    // Level j holds, per virtual mode, the cells entering it after j
    // transitions; it plays the part of path segment j, and each mode in it
    // is grown by the cells it has not seen yet.
    auto trans = virtual_transitions(*va, vg);
    PerModeDict dict;
    std::map<int, CellSet> level;
    level[va->autom.init_mode] = occupied_cells(va->autom.init_set, vg);
    long max_depth = J ? *J : std::numeric_limits<long>::max();
    long budget = s.segment_budget > 0 ? s.segment_budget
                                       : std::max<long>(10, 10L * va->num_modes() * va->num_edges());
    bool fixed = false;
    for (long depth = 0; !level.empty(); ++depth) {
      std::map<int, CellSet> next;
      bool grew = false;
      for (auto& [pv, cells] : level) {
        std::vector<CellId> fresh;
        const CellSet* have = dict.has(pv) ? &dict.at(pv).K : nullptr;
        for (const auto& c : cells)
          if (!have || !have->count(c)) fresh.push_back(c);
        if (fresh.empty()) continue;
        std::sort(fresh.begin(), fresh.end());
        const Vec& mode = va->autom.modes[pv];
        VirtualSegment vs;
        vs.virtual_mode = pv;
        vs.depth = depth;
        vs.new_cells = static_cast<long>(fresh.size());
        auto tubes = detail::fetch_tubes(fresh, dyn, vg, cache, cache.key_for(mode, vg), dyn.target_of(mode),
                                         va->autom.time_bounds[pv], vs.co, vs.re);
        res.metrics.co += vs.co;
        res.metrics.re += vs.re;
        dict.add(pv, fresh, tubes);
        res.virtual_segments.push_back(vs);
        grew = true;
        if (depth >= max_depth) continue;
        for (int e : va->autom.out_edges(pv)) {
          CellSet img = trans[e].next_cells(tubes);
          next[va->autom.edges[e].dst].insert(img.begin(), img.end());
        }
      }
      if (!grew) break;
      ++res.computed_segments;
      if (check_fixed_point(dict, *va, vg, trans)) {
        fixed = true;
        break;
      }
      if (!J && res.computed_segments >= budget)
        throw NoFixedPoint("segment budget of " + std::to_string(budget) + " exhausted");
      level = std::move(next);
    }
    if (!fixed && !J) throw NoFixedPoint("virtual reach saturated without covering every virtual mode");
    dict.fixed_point = fixed;

    // Concrete segments come from the accumulated virtual reachsets. Only
    // as many as were computed count as computed; the rest are copies. The
    // initial set reported for segment i is what the reachset of segment
    // i-1 lets through the guard, seen in the frame of path[i].
    CellSet theta_v = occupied_cells(va->autom.init_set, vg);
    for (std::size_t i = 0; i < L; ++i) {
      int p = path[i];
      int pv = va->mode_of[p];
      if (!dict.has(pv)) {
        if (fixed) throw UncoveredMode("virtual mode " + std::to_string(pv) + " has no reachset");
        continue;
      }
      bool copied = fixed && static_cast<long>(i) >= res.computed_segments;
      if (!fixed && static_cast<long>(i) >= res.computed_segments) break;
      const ModeEntry& me = dict.at(pv);
      SegmentRecord rec;
      rec.path_index = static_cast<int>(i);
      rec.concrete_mode = p;
      rec.virtual_mode = pv;
      rec.kind = copied ? Provenance::Copied : Provenance::Computed;
      if (i == 0) {
        rec.init_cells = static_cast<long>(theta_v.size());
        rec.init_volume = cells_volume(theta_v, vg);
      } else if (int pprev = va->mode_of[path[i - 1]]; dict.has(pprev)) {
        int e = va->edge_of[edge_between(path[i - 1], p)];
        CellSet in = trans[e].next_cells(dict.at(pprev).R);
        rec.init_cells = static_cast<long>(in.size());
        rec.init_volume = cells_volume(in, vg);
      }
      std::vector<Provenance> prov(me.R.size(), rec.kind);
      detail::collect_output(rec, me.R, prov, va->pairs[p].gamma_inv, s);
      res.segments.push_back(std::move(rec));
      if (copied) ++res.metrics.cp;
    }
    res.fixed_point = fixed;
    res.dict = std::move(dict);
  }
  res.metrics.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

// i-th output: the accumulated virtual reachset of path[i]'s virtual mode,
// carried back into concrete coordinates.
inline std::vector<TransformedTube> transform_back(const PerModeDict& dict, const VirtualAutomaton& va,
                                                   const std::vector<int>& path) {
  std::vector<TransformedTube> out;
  for (int p : path) {
    int pv = va.mode_of[p];
    if (!dict.has(pv)) throw UncoveredMode("virtual mode " + std::to_string(pv) + " has no reachset");
    out.push_back({dict.at(pv).R, va.pairs[p].gamma_inv});
  }
  return out;
}

// Occupied concrete cells of a transformed tube collection.
inline CellSet concrete_cells(const TransformedTube& t, const Grid& g) {
  SegmentRecord rec;
  ReachSettings s;
  s.grid = g;
  s.collect_cells = true;
  std::vector<Provenance> prov(t.tubes.size(), Provenance::Copied);
  detail::collect_output(rec, t.tubes, prov, t.to_concrete, s);
  return std::move(rec.cells);
}

inline bool tube_intersects(const CellTube& t, const BoxTester& U) {
  if (U.empty() || !U.may_intersect(t.bounds)) return false;
  for (long k = 0; k < t.count; ++k)
    if (U.intersects(t.box(k))) return true;
  return false;
}

struct ModeReach {
  Reachtube tube;
  std::vector<std::pair<int, Region>> exits;  // (edge, exit region)
  CellSet cells;
};

// One mode from an arbitrary initial region, in concrete coordinates.
inline ModeReach mode_reach(const Region& init, int p, const HybridAutomaton& a, const Grid& g, double dt,
                            TubeCache* cache, Metrics& metrics) {
  TubeCache local;
  TubeCache& c = cache ? *cache : local;
  c.bind(g, dt);
  ModeReach out;
  out.cells = occupied_cells(init, g);
  auto cells = sorted(out.cells);
  out.tube.tubes = detail::fetch_tubes(cells, a.dynamics, g, c, c.key_for(a.modes[p], g), a.dynamics.target_of(a.modes[p]),
                                       a.time_bounds[p], metrics.co, metrics.re);
  for (int e : a.out_edges(p)) {
    Transition tr(g, a.guards[e], a.resets[e], a.dynamics.periods());
    CellSet ex;
    for (const auto& t : out.tube.tubes) {
      const CellSet& s = tr.exits(t);
      ex.insert(s.begin(), s.end());
    }
    out.exits.emplace_back(e, tr.exit_region(ex));
  }
  return out;
}

enum class Verdict { Safe, Unknown, NotApplicable };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Safe: return "Safe";
    case Verdict::Unknown: return "Unknown";
    case Verdict::NotApplicable: return "n/a";
  }
  return "?";
}

struct VerifResult {
  Verdict verdict = Verdict::Unknown;
  std::string reason;
  std::optional<ReachResult> reach;
};

// Safe when the virtual reachsets reach a fixed point and none of them, moved
// into any reachable concrete mode, meets U.
inline VerifResult unbounded_verif(const HybridAutomaton& a, const VirtualAutomaton& va, const Region& U,
                                   const std::vector<int>& path, const ReachSettings& s, std::optional<long> J,
                                   TubeCache* cache = nullptr) {
  require_dim(U.dim(), a.n, "unsafe set");
  VerifResult out;
  try {
    out.reach = compute_reachset(a, path, Method::SV, &va, s, J, cache);
  } catch (const NoFixedPoint& e) {
    out.verdict = Verdict::Unknown;
    out.reason = std::string("no fixed point: ") + e.what();
    return out;
  }
  if (!out.reach->fixed_point) {
    out.verdict = Verdict::Unknown;
    out.reason = "no fixed point within the horizon";
    return out;
  }
  const PerModeDict& dict = *out.reach->dict;
  auto reach = reachable_modes(a, a.init_mode);
  Vec per = a.dynamics.periods();
  for (int p = 0; p < a.num_modes(); ++p) {
    if (!reach[p]) continue;
    int pv = va.mode_of[p];
    if (!dict.has(pv)) {
      out.verdict = Verdict::Unknown;
      out.reason = "virtual mode " + std::to_string(pv) + " has no reachset";
      return out;
    }
    BoxTester Uv(va.pairs[p].gamma.apply(U), per);
    for (const auto& t : dict.at(pv).R) {
      if (tube_intersects(*t, Uv)) {
        out.verdict = Verdict::Unknown;
        out.reason = "reachset of mode " + std::to_string(p) + " meets the unsafe set";
        return out;
      }
    }
  }
  out.verdict = Verdict::Safe;
  out.reason = "fixed point reached and every reachable mode avoids the unsafe set";
  return out;
}

// Safety of mode p from K over [0, T] against U, answered in the virtual
// frame of p and shared across modes through both caches.
inline bool sym_safety(const Region& K, const Vec& p, double T, const Region& U, const VirtualMap& phi,
                       SafetyCache& scache, TubeCache& tcache, const Dynamics& dyn, const Grid& g, double dt,
                       Metrics& metrics) {
  tcache.bind(g, dt);
  SymmetryPair pr = phi(p);
  Region Kv = pr.gamma.apply(K);
  Region Uv = pr.gamma.apply(U);
  Vec pv = pr.rho(p);
  int key = tcache.key_for(pv, g);
  if (auto hit = scache.get(key, Kv, T, Uv)) return *hit;
  auto cells = sorted(occupied_cells(Kv, g));
  auto tubes = detail::fetch_tubes(cells, dyn, g, tcache, key, dyn.target_of(pv), T, metrics.co, metrics.re);
  BoxTester tester(Uv, dyn.periods());
  bool safe = true;
  for (const auto& t : tubes)
    if (tube_intersects(*t, tester)) {
      safe = false;
      break;
    }
  scache.store(key, Kv, T, Uv, safe);
  return safe;
}

// Mean relative excess volume of per-segment initial sets, in percent.
inline double overapprox_error(const std::vector<double>& ns_volumes, const std::vector<double>& other_volumes) {
  if (ns_volumes.size() != other_volumes.size()) throw std::invalid_argument("path lengths differ");
  if (ns_volumes.empty()) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < ns_volumes.size(); ++i) {
    if (!(ns_volumes[i] > 0)) throw DegenerateBaseline("baseline initial set " + std::to_string(i) + " has zero volume");
    sum += (other_volumes[i] - ns_volumes[i]) / ns_volumes[i];
  }
  return 100.0 * sum / static_cast<double>(ns_volumes.size());
}

inline double overapprox_error(const std::vector<Region>& ns_inits, const std::vector<Region>& other_inits,
                               const Grid* g = nullptr) {
  std::vector<double> a, b;
  for (const auto& r : ns_inits) a.push_back(region_volume(r, g));
  for (const auto& r : other_inits) b.push_back(region_volume(r, g));
  return overapprox_error(a, b);
}

inline std::vector<double> init_volumes(const ReachResult& r) {
  std::vector<double> v;
  for (const auto& s : r.segments) v.push_back(s.init_volume);
  return v;
}

}  // namespace symreach
