#pragma once

#include "symreach/dynamics.hpp"
#include "symreach/geom.hpp"

#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace symreach {

struct DisconnectedPath : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GuardNotSatisfied : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidAutomaton : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ModeStyle { Waypoint, Road };

struct Edge {
  int src = 0;
  int dst = 0;
};

struct HybridAutomaton {
  int n = 3;
  std::vector<Vec> modes;
  Region init_set;
  int init_mode = 0;
  std::vector<Edge> edges;
  std::vector<Region> guards;
  std::vector<std::vector<AffineMap>> resets;
  Dynamics dynamics;
  std::vector<double> time_bounds;
  ModeStyle style = ModeStyle::Road;

  int num_modes() const { return static_cast<int>(modes.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }

  std::vector<int> out_edges(int p) const {
    std::vector<int> out;
    for (int e = 0; e < num_edges(); ++e)
      if (edges[e].src == p) out.push_back(e);
    return out;
  }

  std::optional<int> find_edge(int src, int dst) const {
    for (int e = 0; e < num_edges(); ++e)
      if (edges[e].src == src && edges[e].dst == dst) return e;
    return std::nullopt;
  }

  void validate() const {
    if (modes.empty()) throw InvalidAutomaton("automaton has no modes");
    if (init_mode < 0 || init_mode >= num_modes()) throw InvalidAutomaton("initial mode out of range");
    if (init_set.dim() != n || init_set.is_empty()) throw InvalidAutomaton("initial set empty or of wrong dimension");
    if (guards.size() != edges.size() || resets.size() != edges.size())
      throw InvalidAutomaton("guards/resets must be given for every edge");
    for (int e = 0; e < num_edges(); ++e) {
      const Edge& ed = edges[e];
      if (ed.src < 0 || ed.src >= num_modes() || ed.dst < 0 || ed.dst >= num_modes())
        throw InvalidAutomaton("edge endpoint out of range");
      if (guards[e].dim() != n) throw InvalidAutomaton("guard of wrong dimension");
      for (const auto& r : resets[e])
        if (r.dim() != n) throw InvalidAutomaton("reset of wrong dimension");
    }
    if (time_bounds.size() != modes.size()) throw InvalidAutomaton("time bound missing for a mode");
    for (double t : time_bounds)
      if (!(t > 0)) throw InvalidAutomaton("time bounds must be positive");
    for (const auto& p : modes) dynamics.target_of(p);
  }
};

// Box B(c, eps) in the first two coordinates, unconstrained in the rest.
inline ConvexPolytope planar_box(const Vec& c2, const Vec& eps, int n) {
  HyperRect r = HyperRect::everything(n);
  for (int i = 0; i < 2; ++i) {
    r.lo[i] = c2[i] - 0.5 * eps[i];
    r.hi[i] = c2[i] + 0.5 * eps[i];
  }
  return ConvexPolytope::from_box(r);
}

struct BuildOptions {
  Region init_set;
  Dynamics dynamics;
  double time_bound = 10.0;
  // When positive, each mode's bound is this many seconds per unit length of
  // the leg leading to its target instead of time_bound. A robot kept running
  // long after it reaches its target flies straight through it and then away,
  // which is an unstable motion; a length-scaled bound avoids that regime.
  double time_per_length = 0.0;
};

namespace detail {
inline double leg_bound(const BuildOptions& opt, double len) {
  return opt.time_per_length > 0 ? opt.time_per_length * len : opt.time_bound;
}
}  // namespace detail

// Default initial set of the robot examples.
inline Region default_robot_init() {
  Vec c(3), w(3);
  c << -4.5, -0.5, -std::numbers::pi / 4;
  w << 0.8, 0.8, std::numbers::pi / 2;
  return Region(HyperRect::centered(c, w));
}

inline Vec lift_point(const Vec& w2, const Dynamics& d) {
  Vec p = Vec::Zero(d.target_dim());
  p.head(2) = w2.head(2);
  return p;
}

// Modes are the waypoints; edge i goes from waypoint i to its successor and
// fires around waypoint i. With loops == 0 the last waypoint is terminal.
inline HybridAutomaton build_waypoint_automaton(const std::vector<Vec>& waypoints, const Vec& eps0,
                                                const Vec& eps1, const BuildOptions& opt,
                                                bool cyclic = true) {
  if (waypoints.size() < 2) throw InvalidAutomaton("need at least two waypoints");
  HybridAutomaton a;
  a.n = 3;
  a.style = ModeStyle::Waypoint;
  a.dynamics = opt.dynamics;
  a.init_set = opt.init_set;
  a.init_mode = 0;
  int k = static_cast<int>(waypoints.size());
  for (const auto& w : waypoints) a.modes.push_back(lift_point(w, opt.dynamics));
  int m = cyclic ? k : k - 1;
  for (int i = 0; i < m; ++i) {
    a.edges.push_back({i, (i + 1) % k});
    Region g(3);
    if (i == 0) g.add(planar_box(waypoints[i], eps0, 3));
    g.add(planar_box(waypoints[i], eps1, 3));
    a.guards.push_back(g);
    a.resets.push_back({AffineMap::identity(3)});
  }
  if (opt.time_per_length > 0) {
    // A waypoint is approached from the initial region or from its predecessor.
    a.time_bounds.assign(a.modes.size(), 0.0);
    for (int i = 0; i < k; ++i) {
      double len = 0;
      if (i > 0 || cyclic) len = (waypoints[i] - waypoints[(i + k - 1) % k]).head(2).norm();
      if (i == 0) len = std::max(len, (waypoints[0].head(2) - opt.init_set.bounding_box().center().head(2)).norm());
      a.time_bounds[i] = detail::leg_bound(opt, len);
    }
  } else {
    a.time_bounds.assign(a.modes.size(), opt.time_bound);
  }
  a.validate();
  return a;
}

struct Road {
  Vec src, dst;
};

// Modes are roads [src, dst]; consecutive roads are linked, and when the last
// road ends where a later-than-first road starts, a closing edge loops back.
inline HybridAutomaton build_road_automaton(const std::vector<Road>& roads, const Vec& eps0,
                                            const Vec& eps1, const BuildOptions& opt) {
  if (roads.empty()) throw InvalidAutomaton("need at least one road");
  const Dynamics& d = opt.dynamics;
  for (std::size_t i = 0; i + 1 < roads.size(); ++i)
    if ((roads[i].dst.head(2) - roads[i + 1].src.head(2)).cwiseAbs().maxCoeff() > 1e-9)
      throw DisconnectedPath("road " + std::to_string(i) + " does not end where road " +
                             std::to_string(i + 1) + " starts");
  HybridAutomaton a;
  a.n = 3;
  a.style = ModeStyle::Road;
  a.dynamics = d;
  a.init_set = opt.init_set;
  a.init_mode = 0;
  int k = d.target_dim();
  for (const auto& r : roads) {
    Vec p(2 * k);
    p << lift_point(r.src, d), lift_point(r.dst, d);
    a.modes.push_back(p);
  }
  int nr = static_cast<int>(roads.size());
  auto add_edge = [&](int i, int j) {
    a.edges.push_back({i, j});
    Region g(3);
    g.add(planar_box(roads[i].dst, a.edges.size() == 1 ? eps0 : eps1, 3));
    a.guards.push_back(g);
    a.resets.push_back({AffineMap::identity(3)});
  };
  for (int i = 0; i + 1 < nr; ++i) add_edge(i, i + 1);
  for (int j = 1; j < nr - 1; ++j) {
    if ((roads.back().dst.head(2) - roads[j].src.head(2)).cwiseAbs().maxCoeff() <= 1e-9) {
      add_edge(nr - 1, j);
      break;
    }
  }
  for (const auto& r : roads) a.time_bounds.push_back(detail::leg_bound(opt, (r.dst - r.src).head(2).norm()));
  a.validate();
  return a;
}

// Follows the first outgoing edge from the initial mode; stops early at a
// mode without successors.
inline std::vector<int> unroll(const HybridAutomaton& a, int length) {
  std::vector<int> path;
  int p = a.init_mode;
  for (int i = 0; i < length; ++i) {
    path.push_back(p);
    auto out = a.out_edges(p);
    if (out.empty()) break;
    p = a.edges[out.front()].dst;
  }
  return path;
}

inline bool is_path(const HybridAutomaton& a, const std::vector<int>& path) {
  for (std::size_t i = 0; i + 1 < path.size(); ++i)
    if (!a.find_edge(path[i], path[i + 1])) return false;
  return true;
}

inline std::vector<bool> reachable_modes(const HybridAutomaton& a, int from) {
  std::vector<bool> seen(a.num_modes(), false);
  std::vector<int> stack{from};
  seen[from] = true;
  while (!stack.empty()) {
    int p = stack.back();
    stack.pop_back();
    for (int e : a.out_edges(p)) {
      int q = a.edges[e].dst;
      if (!seen[q]) {
        seen[q] = true;
        stack.push_back(q);
      }
    }
  }
  return seen;
}

inline Region step_discrete(const HybridAutomaton& a, const Vec& x, int p, int e) {
  if (e < 0 || e >= a.num_edges() || a.edges[e].src != p)
    throw std::invalid_argument("edge does not leave the given mode");
  if (!a.guards[e].contains(x)) throw GuardNotSatisfied("state outside guard of edge " + std::to_string(e));
  Region out(a.n);
  for (const auto& r : a.resets[e]) {
    Vec y = r(x);
    out.add(ConvexPolytope::from_box(HyperRect(y, y)));
  }
  return out;
}

struct ExecutionPiece {
  Trajectory traj;
  int mode = 0;
  int edge = -1;  // edge taken at the end of this piece, -1 for the last
};

struct Execution {
  std::vector<ExecutionPiece> pieces;
  std::size_t transitions() const { return pieces.empty() ? 0 : pieces.size() - 1; }
};

// Checks the execution invariants; returns an empty string when they hold.
inline std::string execution_violation(const HybridAutomaton& a, const Execution& ex, double tol = kGeomTol) {
  for (std::size_t i = 0; i < ex.pieces.size(); ++i) {
    const auto& pc = ex.pieces[i];
    if (pc.traj.duration() > a.time_bounds[pc.mode] + 1e-9) return "piece " + std::to_string(i) + " exceeds its time bound";
    if (i + 1 == ex.pieces.size()) break;
    const auto& nx = ex.pieces[i + 1];
    int e = pc.edge;
    if (e < 0 || a.edges[e].src != pc.mode || a.edges[e].dst != nx.mode)
      return "piece " + std::to_string(i) + " has no matching edge";
    if (!a.guards[e].contains(pc.traj.last(), tol)) return "piece " + std::to_string(i) + " ends outside the guard";
    bool hit = false;
    for (const auto& r : a.resets[e])
      if ((r(pc.traj.last()) - nx.traj.x.front()).cwiseAbs().maxCoeff() <= tol) hit = true;
    if (!hit) return "piece " + std::to_string(i + 1) + " does not start at a reset image";
  }
  return {};
}

// Uniform sample from a region: pick a member, then rejection-sample its
// bounding box.
inline Vec sample_region(const Region& r, std::mt19937_64& rng) {
  if (r.parts().empty()) throw std::invalid_argument("cannot sample an empty region");
  std::uniform_int_distribution<std::size_t> pick(0, r.parts().size() - 1);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const auto& p = r.parts()[pick(rng)];
    HyperRect b = p.bounding_box();
    Vec x(b.dim());
    for (int i = 0; i < b.dim(); ++i) x[i] = std::uniform_real_distribution<double>(b.lo[i], b.hi[i])(rng);
    if (p.contains(x, 0)) return x;
  }
  throw std::runtime_error("rejection sampling failed");
}

// Each piece is simulated up to its mode's time bound; the switch happens at a
// uniformly chosen step where some outgoing guard holds, and the run ends
// when no guard is ever met.
inline Execution sample_execution(const HybridAutomaton& a, const Vec& x0, int max_transitions, std::uint64_t seed,
                                  double dt = 0.01) {
  if (max_transitions < 0) throw std::invalid_argument("J must be non-negative");
  std::mt19937_64 rng(seed);
  Execution ex;
  Vec x = x0;
  int p = a.init_mode;
  for (int j = 0;; ++j) {
    ExecutionPiece pc;
    pc.mode = p;
    pc.traj = simulate(a.dynamics, x, a.modes[p], a.time_bounds[p], dt);
    if (j == max_transitions) {
      ex.pieces.push_back(std::move(pc));
      break;
    }
    std::vector<std::pair<std::size_t, int>> enabled;  // (step, edge)
    for (std::size_t s = 0; s < pc.traj.size(); ++s)
      for (int e : a.out_edges(p))
        if (a.guards[e].contains(pc.traj.x[s])) enabled.emplace_back(s, e);
    if (enabled.empty()) {
      ex.pieces.push_back(std::move(pc));
      break;
    }
    auto [s, e] = enabled[std::uniform_int_distribution<std::size_t>(0, enabled.size() - 1)(rng)];
    pc.traj.t.resize(s + 1);
    pc.traj.x.resize(s + 1);
    const auto& rs = a.resets[e];
    const AffineMap& r = rs[std::uniform_int_distribution<std::size_t>(0, rs.size() - 1)(rng)];
    x = r(pc.traj.last());
    pc.edge = e;
    ex.pieces.push_back(std::move(pc));
    p = a.edges[e].dst;
  }
  return ex;
}

inline Execution sample_execution(const HybridAutomaton& a, int max_transitions, std::uint64_t seed, double dt = 0.01) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  Vec x0 = sample_region(a.init_set, rng);
  return sample_execution(a, x0, max_transitions, seed, dt);
}

}  // namespace symreach
