#pragma once

#include "symreach/dynamics.hpp"
#include "symreach/geom.hpp"

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace symreach {

enum class Provenance { Computed, Retrieved, Copied };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::Computed: return "co";
    case Provenance::Retrieved: return "re";
    case Provenance::Copied: return "cp";
  }
  return "?";
}

// Raw fixed-capacity box used in the inner loops.
struct RawBox {
  std::array<double, kMaxDim> lo{}, hi{};
  int n = 0;

  HyperRect rect() const {
    HyperRect r{Vec(n), Vec(n)};
    for (int i = 0; i < n; ++i) {
      r.lo[i] = lo[i];
      r.hi[i] = hi[i];
    }
    return r;
  }
  static RawBox of(const HyperRect& r) {
    RawBox b;
    b.n = r.dim();
    for (int i = 0; i < b.n; ++i) {
      b.lo[i] = r.lo[i];
      b.hi[i] = r.hi[i];
    }
    return b;
  }
  bool overlaps(const RawBox& o, double tol) const {
    for (int i = 0; i < n; ++i)
      if (o.lo[i] > hi[i] + tol || o.hi[i] < lo[i] - tol) return false;
    return true;
  }
};

// Simulation of one cell centre; box k is the cell-sized box around state k.
struct CellTube {
  CellId cell;
  double T = 0;
  double dt = 0;
  long count = 0;
  std::vector<double> states;
  std::array<double, kMaxDim> half{};
  RawBox bounds;

  static constexpr int n = 3;

  RawBox box(long k) const {
    RawBox b;
    b.n = n;
    const double* s = &states[k * n];
    for (int i = 0; i < n; ++i) {
      b.lo[i] = s[i] - half[i];
      b.hi[i] = s[i] + half[i];
    }
    return b;
  }
  double t_hi(long k) const { return std::min(static_cast<double>(k) * dt, T); }
  double t_lo(long k) const { return k == 0 ? 0.0 : t_hi(k - 1); }
  Vec state(long k) const { return Eigen::Map<const Vec>(&states[k * n], n); }
};

using CellTubePtr = std::shared_ptr<const CellTube>;

inline void finish_tube(CellTube& t) {
  t.bounds.n = CellTube::n;
  for (int i = 0; i < CellTube::n; ++i) {
    t.bounds.lo[i] = kInf;
    t.bounds.hi[i] = -kInf;
  }
  for (long k = 0; k < t.count; ++k)
    for (int i = 0; i < CellTube::n; ++i) {
      double s = t.states[k * CellTube::n + i];
      t.bounds.lo[i] = std::min(t.bounds.lo[i], s - t.half[i]);
      t.bounds.hi[i] = std::max(t.bounds.hi[i], s + t.half[i]);
    }
}

inline CellTubePtr compute_cell_tube(const Dynamics& d, const Grid& g, const CellId& c, const Vec& target, double T,
                                     double dt) {
  if (!(T > 0)) throw std::invalid_argument("cell reachtube needs a positive horizon");
  auto t = std::make_shared<CellTube>();
  t->cell = c;
  t->T = T;
  t->dt = dt;
  Vec x0 = g.cell_center(c);
  t->count = rk4_flat(d, x0.data(), target.data(), T, dt, t->states);
  for (int i = 0; i < CellTube::n; ++i) t->half[i] = 0.5 * g.width[i];
  finish_tube(*t);
  return t;
}

// Continues a tube to a longer horizon from its last whole step.
inline CellTubePtr extend_cell_tube(const Dynamics& d, const CellTube& old, const Vec& target, double T) {
  auto [steps, partial] = step_plan(old.T, old.dt);
  (void)partial;
  auto t = std::make_shared<CellTube>(old);
  t->T = T;
  std::vector<double> rest;
  double t0 = steps * old.dt;
  rk4_flat(d, &old.states[steps * CellTube::n], target.data(), T - t0, old.dt, rest);
  t->states.resize((steps + 1) * CellTube::n);
  t->states.insert(t->states.end(), rest.begin() + CellTube::n, rest.end());
  t->count = static_cast<long>(t->states.size() / CellTube::n);
  finish_tube(*t);
  return t;
}

// Only horizons on the step grid can be cut from a longer run.
inline CellTubePtr truncate_cell_tube(const CellTube& old, double T) {
  auto [steps, partial] = step_plan(T, old.dt);
  if (partial || T > old.T) throw std::logic_error("truncation needs a whole number of steps below the stored horizon");
  auto t = std::make_shared<CellTube>(old);
  t->T = T;
  t->states.resize((steps + 1) * CellTube::n);
  t->count = steps + 1;
  finish_tube(*t);
  return t;
}

// A reachtube: union of cell tubes sharing a grid and time step.
struct Reachtube {
  std::vector<CellTubePtr> tubes;

  struct Segment {
    HyperRect box;
    double t_lo, t_hi;
  };

  std::vector<Segment> segments() const {
    std::vector<Segment> out;
    for (const auto& t : tubes)
      for (long k = 0; k < t->count; ++k) out.push_back({t->box(k).rect(), t->t_lo(k), t->t_hi(k)});
    return out;
  }

  HyperRect bounds() const {
    HyperRect r(Vec::Constant(3, kInf), Vec::Constant(3, -kInf));
    for (const auto& t : tubes) r = r.hull(t->bounds.rect());
    return r;
  }
};

inline Reachtube cell_reachtube(const Dynamics& d, const CellId& c, const Grid& g, const Vec& p, double T, double dt) {
  return Reachtube{{compute_cell_tube(d, g, c, d.target_of(p), T, dt)}};
}

// Stored cell tubes keyed by (mode vector, cell). Mode vectors are interned
// with the same tolerance used to merge virtual modes.
class TubeCache {
 public:
  struct Lookup {
    CellTubePtr tube;
    bool hit = false;
  };

  // Tubes start at cell centres, so the same mode on a shifted grid gets
  // its own key.
  int key_for(const Vec& mode, const Grid& g) {
    Vec k(mode.size() + g.origin.size());
    k << mode, g.origin;
    for (std::size_t i = 0; i < modes_.size(); ++i)
      if (modes_[i].size() == k.size() && (modes_[i] - k).cwiseAbs().maxCoeff() <= 1e-9)
        return static_cast<int>(i);
    modes_.push_back(k);
    return static_cast<int>(modes_.size() - 1);
  }

  // Tubes are only comparable for one cell size and time step.
  void bind(const Grid& g, double dt) {
    if (!bound_) {
      width_ = g.width;
      dt_ = dt;
      bound_ = true;
      return;
    }
    if (width_.size() != g.width.size() || (width_ - g.width).cwiseAbs().maxCoeff() > 0 || dt_ != dt)
      throw std::invalid_argument("tube cache used with a different cell size or time step");
  }

  std::optional<CellTubePtr> get(int key, const CellId& c, double T) const {
    auto it = store_.find(Key{key, c});
    if (it == store_.end()) return std::nullopt;
    const CellTubePtr& t = it->second;
    if (std::abs(t->T - T) <= 1e-12) return t;
    if (t->T > T && !step_plan(T, t->dt).second) return truncate_cell_tube(*t, T);
    return std::nullopt;
  }

  // Returns the stored tube or a fresh one; a shorter stored tube is
  // extended and replaces the old entry.
  Lookup get_or_compute(const Dynamics& d, const Grid& g, int key, const Vec& target, const CellId& c, double T) {
    auto it = store_.find(Key{key, c});
    if (it != store_.end()) {
      const CellTubePtr& t = it->second;
      if (std::abs(t->T - T) <= 1e-12) return {t, true};
      if (t->T > T) {
        auto [steps, partial] = step_plan(T, t->dt);
        if (!partial) return {truncate_cell_tube(*t, T), true};
        return {compute_cell_tube(d, g, c, target, T, dt_), false};
      }
      CellTubePtr ext = extend_cell_tube(d, *t, target, T);
      it->second = ext;
      return {ext, false};
    }
    CellTubePtr t = compute_cell_tube(d, g, c, target, T, dt_);
    store_.emplace(Key{key, c}, t);
    return {t, false};
  }

  void store(int key, const CellTubePtr& t) {
    auto it = store_.find(Key{key, t->cell});
    if (it == store_.end() || it->second->T < t->T) store_[Key{key, t->cell}] = t;
  }

  std::size_t size() const { return store_.size(); }
  double dt() const { return dt_; }

 private:
  struct Key {
    int mode;
    CellId cell;
    bool operator==(const Key& o) const { return mode == o.mode && cell == o.cell; }
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const { return CellIdHash{}(k.cell) * 31u + static_cast<std::size_t>(k.mode); }
  };
  std::vector<Vec> modes_;
  std::unordered_map<Key, CellTubePtr, KeyHash> store_;
  Vec width_;
  double dt_ = 0;
  bool bound_ = false;
};

// Results of intersecting virtual reachtubes with unsafe sets. Lookups
// answer only when a stored query subsumes the new one.
class SafetyCache {
 public:
  struct Entry {
    int mode;
    Region K;
    double T;
    Region U;
    bool safe;
  };

  // true = safe, false = unsafe, nullopt = not decided by stored entries.
  std::optional<bool> get(int mode, const Region& K, double T, const Region& U) {
    for (const auto& e : entries_) {
      if (e.mode != mode || e.safe) continue;
      if (T >= e.T - 1e-12 && contains(K, e.K) && contains(U, e.U)) {
        ++hits_;
        return false;
      }
    }
    for (const auto& e : entries_) {
      if (e.mode != mode || !e.safe) continue;
      if (T <= e.T + 1e-12 && contains(e.K, K) && contains(e.U, U)) {
        ++hits_;
        return true;
      }
    }
    ++misses_;
    return std::nullopt;
  }

  void store(int mode, const Region& K, double T, const Region& U, bool safe) {
    entries_.push_back({mode, K, T, U, safe});
  }

  std::size_t size() const { return entries_.size(); }
  long hits() const { return hits_; }
  long misses() const { return misses_; }

 private:
  std::vector<Entry> entries_;
  long hits_ = 0;
  long misses_ = 0;
};

}  // namespace symreach
