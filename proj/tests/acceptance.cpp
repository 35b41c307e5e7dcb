// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include "symreach/scenario.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

using namespace symreach;

namespace {

const std::string kDir = SYMREACH_SCENARIO_DIR;

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<long>(xs.size()));
  long i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Dynamics robot() {
  Dynamics d;
  d.id = DynamicsId::Robot;
  d.params.v = 1.0;
  d.params.L = 0.25;
  return d;
}

Dynamics linear() {
  Dynamics d;
  d.id = DynamicsId::Linear3D;
  return d;
}

VirtualMap map_for(MapKind k, const Dynamics& d) {
  return k == MapKind::T ? make_translation_map(d) : make_tr_map(d);
}

struct Loaded {
  Scenario s;
  HybridAutomaton a;
  VirtualAutomaton va;
  std::vector<int> path;
  ReachSettings rs;
};

Loaded load(const std::string& file, std::optional<MapKind> k) {
  Loaded u;
  u.s = load_scenario(kDir + "/" + file);
  if (k) u.s.map = *k;
  u.a = build_automaton(u.s);
  u.va = construct_virtual_model(u.a, build_map(u.s));
  u.path = unroll(u.a, u.s.path_length);
  u.rs.grid = u.s.grid;
  u.rs.dt = u.s.dt;
  return u;
}

std::vector<Vec> random_road_modes(const Dynamics& d, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-10, 10);
  int k = d.target_dim();
  std::vector<Vec> out;
  for (int i = 0; i < count; ++i) {
    Vec p(2 * k);
    for (int j = 0; j < 2 * k; ++j) p[j] = u(rng);
    out.push_back(p);
  }
  return out;
}

// Collects failed checks for one criterion.
struct Check {
  std::vector<std::string> failures;
  std::ostringstream info;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

// ---- 1 ------------------------------------------------------------------

void structure(Check& c) {
  struct Case {
    const char* file;
    MapKind map;
    int modes, edges;
  };
  for (const auto& k : {Case{"rectangle_waypoint.json", MapKind::T, 1, 1}, Case{"rectangle_road.json", MapKind::TR, 3, 3},
                        Case{"rectangle_road.json", MapKind::T, 5, 5}, Case{"s_shaped.json", MapKind::T, 3, 4},
                        Case{"s_shaped.json", MapKind::TR, 2, 2}, Case{"koch.json", MapKind::T, 6, 8},
                        Case{"koch.json", MapKind::TR, 2, 2}}) {
    auto t0 = std::chrono::steady_clock::now();
    Loaded u = load(k.file, k.map);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string tag = std::string(k.file) + "/" + to_string(k.map);
    c.expect(u.va.num_modes() == k.modes && u.va.num_edges() == k.edges,
             tag + " gave " + std::to_string(u.va.num_modes()) + "/" + std::to_string(u.va.num_edges()));
    c.expect(secs < 1.0, tag + " took " + std::to_string(secs) + " s");
    c.info << tag << "=" << u.va.num_modes() << "/" << u.va.num_edges() << " ";

    if (k.map == MapKind::TR && std::string(k.file) == "rectangle_road.json") {
      std::vector<Vec> want{vec({-std::sqrt(5.0), 0, 0, 0}), vec({-3, 0, 0, 0}), vec({-5, 0, 0, 0})};
      for (const auto& w : want) {
        bool found = false;
        for (const auto& m : u.va.autom.modes) found = found || (m - w).cwiseAbs().maxCoeff() < 1e-9;
        c.expect(found, "virtual mode [" + std::to_string(w[0]) + ",0,0,0] missing");
      }
    }
  }
}

// ---- 2 ------------------------------------------------------------------

void equivariance(Check& c) {
  double worst = 0;
  for (const Dynamics& d : {robot(), linear()})
    for (MapKind k : {MapKind::T, MapKind::TR}) {
      VirtualMap phi = map_for(k, d);
      std::uint64_t seed = 1;
      for (const auto& p : random_road_modes(d, 5, 21)) {
        auto rep = check_equivariance(d, phi(p), p, 1000, seed++, 1e-9);
        worst = std::max(worst, rep.max_residual);
        c.expect(rep.pass, to_string(d.id) + "/" + to_string(k) + " residual " + std::to_string(rep.max_residual));
      }
    }
  Dynamics d = robot();
  Vec w = point2(3, -2);
  SymmetryPair broken(make_translation_map(d)(w).gamma, AffineMap::identity(2));
  double control = check_equivariance(d, broken, w, 1000, 1, 1e-9).max_residual;
  c.expect(control > 1e-2, "broken control residual only " + std::to_string(control));
  c.info << "max residual " << worst << ", broken control " << control;
}

// ---- 3 ------------------------------------------------------------------

void transport(Check& c) {
  double worst = 0;
  for (const Dynamics& d : {robot(), linear()})
    for (MapKind k : {MapKind::T, MapKind::TR}) {
      VirtualMap phi = map_for(k, d);
      std::mt19937_64 rng(30 + static_cast<int>(k));
      std::uniform_real_distribution<double> u(-5, 5), h(-std::numbers::pi, std::numbers::pi);
      int tgt = d.target_dim();
      for (const auto& p : random_road_modes(d, 20, 40)) {
        Vec x0 = vec({u(rng), u(rng), d.id == DynamicsId::Robot ? h(rng) : u(rng)});
        x0.head(2) += p.tail(tgt).head(2);
        // the robot is stopped short of its target, where heading is still well conditioned
        double T = d.id == DynamicsId::Robot ? 0.5 * (x0.head(2) - p.tail(tgt).head(2)).norm() : 2.0;
        worst = std::max(worst, solution_transport_error(d, phi(p), x0, p, T, 0.01));
      }
    }
  c.expect(worst < 1e-5, "sup deviation " + std::to_string(worst));
  c.info << "sup deviation " << worst;
}

// ---- 4 ------------------------------------------------------------------

void fsr(Check& c) {
  int transitions = 0;
  for (const char* file : {"rectangle_road.json", "s_shaped.json", "koch.json", "random.json"})
    for (MapKind k : {MapKind::T, MapKind::TR}) {
      Loaded u = load(file, k);
      FsrReport rep = check_fsr(u.a, u.va, 50, 8, 4);
      transitions += rep.transitions;
      std::string tag = std::string(file) + "/" + to_string(k);
      c.expect(rep.violations == 0, tag + ": " + (rep.details.empty() ? "" : rep.details.front()));
      c.expect(rep.transitions > 0, tag + ": no transitions exercised");
    }
  Loaded w = load("rectangle_waypoint.json", MapKind::T);
  FsrReport neg = check_fsr(w.a, shrink_guards(w.va, 0.5), 50, 8, 4);
  c.expect(neg.violations >= 1, "corrupted guards not detected");
  c.info << transitions << " transitions checked, control violations " << neg.violations;
}

// ---- 5 ------------------------------------------------------------------

void soundness(Check& c) {
  struct Case {
    const char* file;
    MapKind map;
  };
  for (const auto& k : {Case{"rectangle_waypoint.json", MapKind::T}, Case{"rectangle_road.json", MapKind::T},
                        Case{"s_shaped.json", MapKind::T}, Case{"s_shaped.json", MapKind::TR}}) {
    Loaded u = load(k.file, k.map);
    u.rs.collect_cells = true;
    long J = static_cast<long>(u.path.size()) - 1;
    ReachResult ns = compute_reachset(u.a, u.path, Method::NS, nullptr, u.rs, J);
    ReachResult sv = compute_reachset(u.a, u.path, Method::SV, &u.va, u.rs, J);
    std::string tag = std::string(k.file) + "/" + to_string(k.map);
    c.expect(ns.segments.size() == sv.segments.size(), tag + ": segment counts differ");
    int bad = 0;
    for (std::size_t i = 0; i < std::min(ns.segments.size(), sv.segments.size()); ++i)
      if (!subset(ns.segments[i].cells, sv.segments[i].cells)) ++bad;
    c.expect(bad == 0, tag + ": " + std::to_string(bad) + " segments not contained");
    c.info << tag << " " << ns.segments.size() << " segments ";
  }
}

// ---- 6 ------------------------------------------------------------------

void copies(Check& c) {
  for (auto [k, want] : {std::pair{MapKind::T, 11L}, std::pair{MapKind::TR, 13L}}) {
    Loaded u = load("s_shaped.json", k);
    ReachResult r = compute_reachset(u.a, u.path, Method::SV, &u.va, u.rs, 15);
    c.expect(r.fixed_point, to_string(k) + ": no fixed point");
    c.expect(r.metrics.cp == want, to_string(k) + ": copied " + std::to_string(r.metrics.cp) + ", want " +
                                       std::to_string(want));
    c.info << to_string(k) << " copied " << r.metrics.cp << "/16 ";
  }
}

// ---- 7 ------------------------------------------------------------------

ReachResult fastest(const Loaded& u, Method m, int repeats) {
  ReachResult best;
  best.metrics.wall_time = INFINITY;
  for (int i = 0; i < repeats; ++i) {
    ReachResult r = compute_reachset(u.a, u.path, m, m == Method::NS ? nullptr : &u.va, u.rs, 15);
    if (r.metrics.wall_time < best.metrics.wall_time) best = std::move(r);
  }
  return best;
}

void orderings(Check& c) {
  struct Band {
    MapKind map;
    double lo, hi;
  };
  for (const auto& b : {Band{MapKind::T, 23.4 / 3, 23.4 * 3}, Band{MapKind::TR, 140.8 / 3, 140.8 * 3}}) {
    Loaded u = load("s_shaped.json", b.map);
    ReachResult ns = fastest(u, Method::NS, 3);
    ReachResult sc = fastest(u, Method::SC, 1);
    ReachResult sv = fastest(u, Method::SV, 3);
    auto base = init_volumes(ns);
    double sc_err = overapprox_error(base, init_volumes(sc));
    ReachSettings trunc = u.rs;
    ReachResult ns_sv = compute_reachset(u.a, u.path, Method::NS, nullptr, trunc,
                                         static_cast<long>(sv.segments.size()) - 1);
    double sv_err = overapprox_error(init_volumes(ns_sv), init_volumes(sv));
    std::string m = to_string(b.map);
    c.expect(sv.metrics.tot() < sc.metrics.tot(), m + ": SV.tot " + std::to_string(sv.metrics.tot()) +
                                                       " !< SC.tot " + std::to_string(sc.metrics.tot()));
    c.expect(sc.metrics.tot() < ns.metrics.tot(), m + ": SC.tot " + std::to_string(sc.metrics.tot()) +
                                                       " !< NS.tot " + std::to_string(ns.metrics.tot()));
    c.expect(sv.metrics.wall_time < ns.metrics.wall_time, m + ": SV time " + std::to_string(sv.metrics.wall_time) +
                                                              " !< NS time " + std::to_string(ns.metrics.wall_time));
    if (b.map == MapKind::T) c.expect(std::abs(sc_err) <= 1e-9, "SC/T error " + std::to_string(sc_err));
    c.expect(sv_err >= sc_err, m + ": SV error " + std::to_string(sv_err) + " < SC error " + std::to_string(sc_err));
    c.expect(sv_err >= b.lo && sv_err <= b.hi, m + ": SV error " + std::to_string(sv_err) + " outside [" +
                                                   std::to_string(b.lo) + ", " + std::to_string(b.hi) + "]");
    c.info << m << ": tot NS/SC/SV " << ns.metrics.tot() << "/" << sc.metrics.tot() << "/" << sv.metrics.tot()
           << ", err SC/SV " << sc_err << "/" << sv_err << ", time NS/SV " << ns.metrics.wall_time << "/"
           << sv.metrics.wall_time << "; ";
  }
}

// ---- 8 ------------------------------------------------------------------

void unbounded(Check& c) {
  Loaded u = load("infinite_s.json", std::nullopt);
  Region U(3);
  for (const auto& b : u.s.unsafe) U.add(ConvexPolytope::from_box(b));
  c.expect(!u.s.J.has_value(), "scenario horizon is not unbounded");
  VerifResult v = unbounded_verif(u.a, u.va, U, u.path, u.rs, u.s.J);
  c.expect(v.verdict == Verdict::Safe, "verdict " + std::string(to_string(v.verdict)) + ": " + v.reason);
  if (!v.reach) return;
  const auto& segs = v.reach->segments;
  c.expect(segs.size() >= 100, "only " + std::to_string(segs.size()) + " segments");
  c.expect(v.reach->metrics.cp >= 94, "copied " + std::to_string(v.reach->metrics.cp));
  for (std::size_t i = 5; i < std::min<std::size_t>(segs.size(), 100); ++i)
    if (segs[i].kind != Provenance::Copied) c.expect(false, "segment " + std::to_string(i) + " was computed");
  c.info << segs.size() << " segments, cp " << v.reach->metrics.cp << ", computed " << v.reach->computed_segments;
}

// ---- 9 ------------------------------------------------------------------

HyperRect slab(double lo, double hi) { return HyperRect(vec({lo, 0, 0}), vec({hi, 1, 1})); }

void cache(Check& c) {
  struct Query {
    int mode;
    HyperRect K;
    double T;
    HyperRect U;
    bool truth;
  };
  const bool S = true, X = false;
  // expected answers: 0 miss, 1 hit safe, 2 hit unsafe
  std::vector<std::pair<Query, int>> script{
      {{0, slab(0, 2), 5, slab(10, 12), S}, 0},     {{0, slab(0, 2), 5, slab(10, 12), S}, 1},
      {{0, slab(0.5, 1), 4, slab(10, 11), S}, 1},   {{0, slab(0, 3), 5, slab(10, 12), S}, 0},
      {{0, slab(0, 2), 6, slab(10, 12), S}, 0},     {{0, slab(0, 2), 5, slab(9, 12), S}, 0},
      {{1, slab(0, 2), 5, slab(10, 12), S}, 0},     {{0, slab(0, 1), 5, slab(1, 2), X}, 0},
      {{0, slab(0, 1), 5, slab(1, 2), X}, 2},       {{0, slab(0, 3), 7, slab(0, 4), X}, 2},
      {{0, slab(0, 0.5), 5, slab(1, 2), X}, 0},     {{0, slab(0, 1), 4, slab(1, 2), X}, 0},
      {{0, slab(0, 1), 5, slab(1, 1.5), X}, 0},     {{1, slab(0, 3), 7, slab(0, 4), X}, 0},
      {{0, slab(0, 2.5), 5, slab(9.5, 12), S}, 0},  {{0, slab(0.1, 2.9), 5, slab(10, 12), S}, 1},
      {{0, slab(0, 2), 5.5, slab(10, 11), S}, 1},   {{0, slab(0, 1), 6, slab(0.5, 2.5), X}, 2},
      {{1, slab(0, 3), 8, slab(0, 4), X}, 2},       {{1, slab(0, 1), 5, slab(10, 12), S}, 1},
  };
  SafetyCache sc;
  for (std::size_t i = 0; i < script.size(); ++i) {
    const auto& [q, want] = script[i];
    auto got = sc.get(q.mode, Region(q.K), q.T, Region(q.U));
    int code = !got ? 0 : (*got ? 1 : 2);
    c.expect(code == want, "query " + std::to_string(i + 1) + " answered " + std::to_string(code));
    if (!got) sc.store(q.mode, Region(q.K), q.T, Region(q.U), q.truth);
  }
  c.expect(sc.hits() == 9 && sc.misses() == 11,
           "hits/misses " + std::to_string(sc.hits()) + "/" + std::to_string(sc.misses()));

  Loaded u = load("s_shaped.json", MapKind::T);
  TubeCache tc;
  for (Method m : {Method::NS, Method::SC, Method::SV}) {
    compute_reachset(u.a, u.path, m, &u.va, u.rs, 15, &tc);
    long co = compute_reachset(u.a, u.path, m, &u.va, u.rs, 15, &tc).metrics.co;
    c.expect(co == 0, "repeated " + to_string(m) + " query computed " + std::to_string(co) + " tubes");
  }
  c.info << "hits " << sc.hits() << ", misses " << sc.misses();
}

// ---- 10 -----------------------------------------------------------------

void numerics(Check& c) {
  auto endpoint_error = [](const Dynamics& d, const Vec& x0, const Vec& p, double dt) {
    Vec ref = simulate(d, x0, p, 1.0, dt / 100).last();
    return (simulate(d, x0, p, 1.0, dt).last() - ref).norm();
  };
  Dynamics r = robot();
  r.params.L = 1.0;
  for (auto [d, x0, p] : {std::tuple{r, vec({0, 0, 0.3}), vec({6, 4})}, std::tuple{linear(), vec({2, -1, 1}), vec({0, 0, 0})}}) {
    double ratio = endpoint_error(d, x0, p, 0.1) / endpoint_error(d, x0, p, 0.05);
    c.expect(ratio >= 8 && ratio <= 32, to_string(d.id) + " ratio " + std::to_string(ratio));
    c.info << to_string(d.id) << " ratio " << ratio << " ";
  }

  Vec x0 = vec({1.5, -0.5, 2.0}), p = vec({-1, 2, 0.5});
  Trajectory t = simulate(linear(), x0, p, 1.0, 1e-3);
  double worst = 0;
  double rate[3] = {-3, -3, -1};
  for (std::size_t k = 0; k < t.size(); ++k)
    for (int i = 0; i < 3; ++i)
      worst = std::max(worst, std::abs(t.x[k][i] - (p[i] + std::exp(rate[i] * t.t[k]) * (x0[i] - p[i]))));
  c.expect(worst < 1e-6, "closed-form deviation " + std::to_string(worst));
  c.info << "closed form " << worst << " ";

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2, 2);
  double rt = 0;
  for (int k = 0; k < 200; ++k) {
    Vec lo = vec({u(rng), u(rng), u(rng)});
    Vec hi = lo + vec({0.1 + std::abs(u(rng)), 0.1 + std::abs(u(rng)), 0.1 + std::abs(u(rng))});
    Mat M(3, 3);
    do {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) M(i, j) = u(rng);
    } while (std::abs(M.determinant()) < 0.2);
    AffineMap m(M, vec({u(rng), u(rng), u(rng)}));
    HyperRect bb = transform_region(transform_region(Region(HyperRect(lo, hi)), m), m.inverse()).bounds();
    rt = std::max({rt, (bb.lo - lo).cwiseAbs().maxCoeff(), (bb.hi - hi).cwiseAbs().maxCoeff()});
  }
  c.expect(rt < 1e-7, "round-trip deviation " + std::to_string(rt));
  c.info << "round trip " << rt;
}

}  // namespace

int main() {
  std::vector<std::pair<const char*, std::function<void(Check&)>>> criteria{
      {"virtual automaton structure", structure},
      {"equivariance", equivariance},
      {"solution transport", transport},
      {"forward simulation relation", fsr},
      {"SV contains NS", soundness},
      {"fixed-point copy counts", copies},
      {"method orderings", orderings},
      {"unbounded verification", unbounded},
      {"cache algebra", cache},
      {"numerical substrate", numerics},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = c.failures.empty();
    failed += !ok;
    std::printf("criterion %zu %s: %s (%.1f s) %s\n", i + 1, criteria[i].first, ok ? "PASS" : "FAIL", secs,
                c.info.str().c_str());
    for (const auto& f : c.failures) std::printf("    %s\n", f.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
