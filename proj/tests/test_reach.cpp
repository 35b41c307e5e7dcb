#include "symreach/scenario.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace symreach;

#ifndef SYMREACH_SCENARIO_DIR
#define SYMREACH_SCENARIO_DIR "scenarios"
#endif

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<long>(xs.size()));
  long i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Scenario scenario(const std::string& name) { return load_scenario(std::string(SYMREACH_SCENARIO_DIR) + "/" + name); }

struct Loaded {
  Scenario s;
  HybridAutomaton a;
  VirtualAutomaton va;
  std::vector<int> path;
  ReachSettings rs;
};

Loaded setup(const std::string& file, std::optional<MapKind> map = std::nullopt) {
  Loaded u;
  u.s = scenario(file);
  if (map) u.s.map = *map;
  u.a = build_automaton(u.s);
  u.va = construct_virtual_model(u.a, build_map(u.s));
  u.path = unroll(u.a, u.s.path_length);
  u.rs.grid = u.s.grid;
  u.rs.dt = u.s.dt;
  return u;
}

Grid robot_grid() {
  return Grid(Vec::Zero(3), vec({0.2, 0.2, std::numbers::pi / 16}), vec({0, 0, 2 * std::numbers::pi}));
}

Dynamics linear() {
  Dynamics d;
  d.id = DynamicsId::Linear3D;
  return d;
}

// One Linear3D mode attracted to the origin with a self-loop whose guard
// is a box around the origin.
HybridAutomaton contracting_self_loop() {
  HybridAutomaton a;
  a.n = 3;
  a.dynamics = linear();
  a.modes = {Vec::Zero(3)};
  a.init_set = Region(HyperRect::centered(vec({1.5, 1.5, 1.5}), vec({0.4, 0.4, 0.4})));
  a.edges = {{0, 0}};
  a.guards = {Region(HyperRect::centered(Vec::Zero(3), vec({0.8, 0.8, 0.8})))};
  a.resets = {{AffineMap::identity(3)}};
  a.time_bounds = {4.0};
  a.validate();
  return a;
}

}  // namespace

TEST(CellReachtube, EquilibriumCellStaysPut) {
  Grid g(Vec::Zero(3), Vec::Constant(3, 0.5));
  CellId c = g.cell_of(vec({0.1, 0.1, 0.1}));
  Vec centre = g.cell_center(c);
  Reachtube t = cell_reachtube(linear(), c, g, centre, 1.0, 0.1);
  auto segs = t.segments();
  ASSERT_EQ(segs.size(), 11u);
  for (const auto& s : segs) {
    EXPECT_LT((s.box.lo - g.cell_box(c).lo).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((s.box.hi - g.cell_box(c).hi).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_DOUBLE_EQ(segs.front().t_lo, 0.0);
  for (std::size_t k = 1; k < segs.size(); ++k) EXPECT_DOUBLE_EQ(segs[k].t_lo, segs[k - 1].t_hi);
}

TEST(CellReachtube, SingleStepHasTwoBoxes) {
  Grid g = robot_grid();
  Reachtube t = cell_reachtube(linear(), g.cell_of(vec({1, 1, 1})), g, Vec::Zero(3), 0.01, 0.01);
  EXPECT_EQ(t.segments().size(), 2u);
  EXPECT_THROW(cell_reachtube(linear(), g.cell_of(vec({1, 1, 1})), g, Vec::Zero(3), 0.0, 0.01), std::invalid_argument);
}

TEST(CellReachtube, AlignedRobotMovesStraight) {
  Dynamics d;
  d.id = DynamicsId::Robot;
  d.params.v = 1.0;
  d.params.L = 0.25;
  Grid g(Vec::Zero(3), vec({0.2, 0.2, std::numbers::pi / 16}), vec({0, 0, 2 * std::numbers::pi}));
  CellId c = g.cell_of(vec({0, 0, 0}));
  Vec centre = g.cell_center(c);
  // target straight ahead along the centre's heading
  Vec target = centre.head(2) + 50.0 * vec({std::cos(centre[2]), std::sin(centre[2])});
  Reachtube t = cell_reachtube(d, c, g, target, 2.0, 0.01);
  double worst = 0;
  for (const auto& s : t.segments()) {
    Vec mid = s.box.center();
    Vec expect = centre;
    expect[0] += s.t_hi * std::cos(centre[2]);
    expect[1] += s.t_hi * std::sin(centre[2]);
    worst = std::max(worst, (mid - expect).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(ModeReach, ExitRegionCoversSampledExits) {
  Loaded u = setup("rectangle_waypoint.json");
  Metrics m;
  ModeReach r = mode_reach(u.a.init_set, 0, u.a, u.s.grid, u.s.dt, nullptr, m);
  ASSERT_EQ(r.exits.size(), 1u);
  const Region& exit = r.exits[0].second;
  ASSERT_FALSE(exit.is_empty());
  EXPECT_TRUE(contains(u.a.guards[0], exit));

  std::mt19937_64 rng(21);
  int checked = 0;
  for (int k = 0; k < 100; ++k) {
    Vec x0 = sample_region(u.a.init_set, rng);
    Trajectory tr = simulate(u.a.dynamics, x0, u.a.modes[0], u.a.time_bounds[0], u.s.dt);
    for (const auto& x : tr.x)
      if (u.a.guards[0].contains(x)) {
        ++checked;
        EXPECT_TRUE(exit.contains(x, 1e-9)) << x.transpose();
      }
  }
  EXPECT_GT(checked, 100);
}

TEST(ModeReach, CachedInitialSetIsRetrieved) {
  Loaded u = setup("rectangle_waypoint.json");
  TubeCache cache;
  Metrics m1, m2;
  ModeReach first = mode_reach(u.a.init_set, 0, u.a, u.s.grid, u.s.dt, &cache, m1);
  ModeReach second = mode_reach(u.a.init_set, 0, u.a, u.s.grid, u.s.dt, &cache, m2);
  EXPECT_EQ(m1.co, static_cast<long>(first.cells.size()));
  EXPECT_EQ(m1.re, 0);
  EXPECT_EQ(m2.co, 0);
  EXPECT_EQ(m2.re, static_cast<long>(second.cells.size()));
}

TEST(ModeReach, MissedGuardGivesEmptyExit) {
  Loaded u = setup("rectangle_waypoint.json");
  HybridAutomaton a = u.a;
  a.guards[0] = Region(HyperRect::centered(vec({40, 40, 0}), vec({1, 1, 1})));
  Metrics m;
  ModeReach r = mode_reach(a.init_set, 0, a, u.s.grid, u.s.dt, nullptr, m);
  EXPECT_TRUE(r.exits[0].second.is_empty());
}

TEST(ModeReach, UnboundedInitialSetRejected) {
  Loaded u = setup("rectangle_waypoint.json");
  Metrics m;
  Region half(ConvexPolytope(vec({1, 0, 0}).transpose(), vec({0})));
  EXPECT_THROW(mode_reach(half, 0, u.a, u.s.grid, u.s.dt, nullptr, m), UnboundedRegion);
}

TEST(ModeReach, TranslatedQueriesGiveTranslatedTubes) {
  // translations by whole cells keep the grid, so the tubes agree exactly up
  // to the shift; the comparison allows one cell width
  Loaded u = setup("rectangle_waypoint.json");
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> cells(-20, 20);
  Vec w = u.s.grid.width;
  for (int k = 0; k < 10; ++k) {
    Vec shift = vec({cells(rng) * w[0], cells(rng) * w[1], 0});
    Vec c = u.a.init_set.bounding_box().center() + vec({cells(rng) * 0.1, cells(rng) * 0.1, 0});
    Region K(HyperRect::centered(c, vec({0.4, 0.4, 0.3})));
    HybridAutomaton b = u.a;
    for (auto& p : b.modes) p += shift.head(2);
    AffineMap gamma = AffineMap::translation(shift);
    Metrics m;
    HyperRect r1 = mode_reach(K, 0, u.a, u.s.grid, u.s.dt, nullptr, m).tube.bounds();
    HyperRect r2 = mode_reach(gamma.apply(K), 0, b, u.s.grid, u.s.dt, nullptr, m).tube.bounds();
    EXPECT_LE((r1.lo + shift - r2.lo).cwiseAbs().maxCoeff(), w.maxCoeff()) << k;
    EXPECT_LE((r1.hi + shift - r2.hi).cwiseAbs().maxCoeff(), w.maxCoeff()) << k;
  }
}

TEST(FixedPoint, EmptyDictionaryIsNotFixed) {
  Loaded u = setup("s_shaped.json");
  EXPECT_FALSE(check_fixed_point(PerModeDict{}, u.va, u.s.grid));
}

TEST(FixedPoint, SShapedTranslationTrace) {
  Loaded u = setup("s_shaped.json", MapKind::T);
  ReachResult early = compute_reachset(u.a, u.path, Method::SV, &u.va, u.rs, 1);
  EXPECT_FALSE(early.fixed_point);
  EXPECT_FALSE(check_fixed_point(*early.dict, u.va, early.virtual_grid));

  ReachResult full = compute_reachset(u.a, u.path, Method::SV, &u.va, u.rs, 15);
  ASSERT_TRUE(full.fixed_point);
  EXPECT_EQ(full.computed_segments, 5);
  EXPECT_EQ(full.metrics.cp, 11);
  EXPECT_TRUE(check_fixed_point(*full.dict, u.va, full.virtual_grid));

  // adding tubes for cells already present leaves the verdict unchanged
  PerModeDict again = *full.dict;
  for (auto& [pv, e] : full.dict->entries) again.add(pv, sorted(e.K), e.R);
  EXPECT_TRUE(check_fixed_point(again, u.va, full.virtual_grid));
}

TEST(FixedPoint, SShapedTrCopies) {
  Loaded u = setup("s_shaped.json", MapKind::TR);
  ReachResult r = compute_reachset(u.a, u.path, Method::SV, &u.va, u.rs, 15);
  ASSERT_TRUE(r.fixed_point);
  EXPECT_EQ(r.metrics.cp, 13);
  EXPECT_EQ(r.metrics.cp + r.computed_segments, 16);
}

TEST(FixedPoint, ContractingSelfLoop) {
  HybridAutomaton a = contracting_self_loop();
  VirtualAutomaton va = construct_virtual_model(a, make_identity_map(3));
  ReachSettings rs;
  rs.grid = Grid(Vec::Zero(3), Vec::Constant(3, 0.2));
  auto path = unroll(a, 12);
  ReachResult r = compute_reachset(a, path, Method::SV, &va, rs, 11);
  ASSERT_TRUE(r.fixed_point);
  EXPECT_LE(r.computed_segments, 3);
  EXPECT_EQ(r.metrics.cp, 12 - r.computed_segments);

  // direct containment: every cell the loop can re-enter is already in K
  const ModeEntry& e = r.dict->at(0);
  Transition tr(rs.grid, a.guards[0], a.resets[0], a.dynamics.periods());
  EXPECT_TRUE(subset(tr.next_cells(e.R), e.K));
  EXPECT_TRUE(subset(occupied_cells(a.init_set, rs.grid), e.K));
}

TEST(TransformBack, IdentityMapReturnsDictionary) {
  HybridAutomaton a = contracting_self_loop();
  VirtualAutomaton va = construct_virtual_model(a, make_identity_map(3));
  ReachSettings rs;
  rs.grid = Grid(Vec::Zero(3), Vec::Constant(3, 0.2));
  auto path = unroll(a, 5);
  ReachResult r = compute_reachset(a, path, Method::SV, &va, rs, 4);
  auto back = transform_back(*r.dict, va, path);
  ASSERT_EQ(back.size(), 5u);
  for (const auto& t : back) {
    EXPECT_TRUE(t.to_concrete.approx_equal(AffineMap::identity(3), 0));
    EXPECT_EQ(t.tubes.size(), r.dict->at(0).R.size());
  }
  EXPECT_THROW(transform_back(PerModeDict{}, va, path), UncoveredMode);
}

TEST(Soundness, SShapedNsInsideSv) {
  for (MapKind k : {MapKind::T, MapKind::TR}) {
    Loaded u = setup("s_shaped.json", k);
    u.rs.collect_cells = true;
    ReachResult ns = compute_reachset(u.a, u.path, Method::NS, nullptr, u.rs, 15);
    ReachResult sv = compute_reachset(u.a, u.path, Method::SV, &u.va, u.rs, 15);
    ASSERT_EQ(ns.segments.size(), sv.segments.size());
    for (std::size_t i = 0; i < ns.segments.size(); ++i)
      EXPECT_TRUE(subset(ns.segments[i].cells, sv.segments[i].cells)) << to_string(k) << " segment " << i;
  }
}

TEST(Metrics, SymmetryReusesTubes) {
  Loaded u = setup("s_shaped.json", MapKind::T);
  ReachResult ns = compute_reachset(u.a, u.path, Method::NS, nullptr, u.rs, 15);
  ReachResult ns2 = compute_reachset(u.a, u.path, Method::NS, nullptr, u.rs, 15);
  ReachResult sc = compute_reachset(u.a, u.path, Method::SC, &u.va, u.rs, 15);
  ReachResult sv = compute_reachset(u.a, u.path, Method::SV, &u.va, u.rs, 15);
  EXPECT_EQ(ns.metrics.tot(), ns2.metrics.tot());
  EXPECT_EQ(ns.metrics.co, ns2.metrics.co);
  EXPECT_LE(sc.metrics.co, ns.metrics.co);
  EXPECT_LE(sv.metrics.co, ns.metrics.co);
  EXPECT_GT(sc.metrics.re, 0);
  EXPECT_EQ(ns.metrics.cp, 0);
}

TEST(Metrics, ScTranslationAddsNoError) {
  Loaded u = setup("s_shaped.json", MapKind::T);
  ReachResult ns = compute_reachset(u.a, u.path, Method::NS, nullptr, u.rs, 15);
  ReachResult sc = compute_reachset(u.a, u.path, Method::SC, &u.va, u.rs, 15);
  EXPECT_NEAR(overapprox_error(init_volumes(ns), init_volumes(sc)), 0.0, 1e-9);
}

TEST(OverapproxError, ClosedForms) {
  EXPECT_DOUBLE_EQ(overapprox_error(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(overapprox_error(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}), 100.0);
  EXPECT_THROW(overapprox_error(std::vector<double>{1, 0}, std::vector<double>{1, 1}), DegenerateBaseline);
  EXPECT_THROW(overapprox_error(std::vector<double>{1}, std::vector<double>{1, 1}), std::invalid_argument);
  std::vector<Region> a{Region(HyperRect(vec({0, 0}), vec({1, 1})))};
  std::vector<Region> b{Region(HyperRect(vec({0, 0}), vec({1, 2})))};
  EXPECT_DOUBLE_EQ(overapprox_error(a, b), 100.0);
}

TEST(AffineIntersection, ImagesPreserveEmptiness) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-3, 3), w(0.2, 2.5);
  int meets = 0;
  for (int k = 0; k < 50; ++k) {
    auto box = [&] {
      Vec lo = vec({u(rng), u(rng), u(rng)});
      return HyperRect(lo, lo + vec({w(rng), w(rng), w(rng)}));
    };
    Region tube(box()), U(box());
    tube.add(ConvexPolytope::from_box(box()));
    Mat M(3, 3);
    do {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) M(i, j) = u(rng);
    } while (std::abs(M.determinant()) < 0.5);
    AffineMap g(M, vec({u(rng), u(rng), u(rng)}));
    bool before = intersects(tube, U);
    meets += before;
    EXPECT_EQ(before, intersects(g.apply(tube), g.apply(U))) << k;
  }
  EXPECT_GT(meets, 0);
  EXPECT_LT(meets, 50);
}

TEST(UnboundedVerif, FarObstacleIsSafe) {
  Loaded u = setup("s_shaped.json", MapKind::T);
  Region far(HyperRect(vec({500, 500, -1e6}), vec({501, 501, 1e6})));
  VerifResult v = unbounded_verif(u.a, u.va, far, u.path, u.rs, std::nullopt);
  EXPECT_EQ(v.verdict, Verdict::Safe) << v.reason;
}

TEST(UnboundedVerif, ObstacleOnInitialSetIsUnknown) {
  Loaded u = setup("s_shaped.json", MapKind::T);
  VerifResult v = unbounded_verif(u.a, u.va, u.a.init_set, u.path, u.rs, std::nullopt);
  EXPECT_EQ(v.verdict, Verdict::Unknown);
}

TEST(UnboundedVerif, InfiniteSProducesLateSegmentsByCopy) {
  Loaded u = setup("infinite_s.json");
  Region U(3);
  for (const auto& b : u.s.unsafe) U.add(ConvexPolytope::from_box(b));
  VerifResult v = unbounded_verif(u.a, u.va, U, u.path, u.rs, std::nullopt);
  ASSERT_EQ(v.verdict, Verdict::Safe) << v.reason;
  ASSERT_EQ(v.reach->segments.size(), 100u);
  EXPECT_GE(v.reach->metrics.cp, 94);
  EXPECT_EQ(v.reach->segments[99].kind, Provenance::Copied);
  for (std::size_t i = 5; i < 100; ++i) EXPECT_EQ(v.reach->segments[i].kind, Provenance::Copied) << i;
}

TEST(ComputeReachset, RejectsBadArguments) {
  Loaded u = setup("s_shaped.json", MapKind::T);
  EXPECT_THROW(compute_reachset(u.a, {}, Method::NS, nullptr, u.rs, 3), std::invalid_argument);
  EXPECT_THROW(compute_reachset(u.a, {1, 2}, Method::NS, nullptr, u.rs, 3), std::invalid_argument);
  EXPECT_THROW(compute_reachset(u.a, {0, 2}, Method::NS, nullptr, u.rs, 3), DisconnectedPath);
  EXPECT_THROW(compute_reachset(u.a, u.path, Method::SC, nullptr, u.rs, 3), std::invalid_argument);
  EXPECT_THROW(compute_reachset(u.a, u.path, Method::NS, nullptr, u.rs, std::nullopt), std::invalid_argument);
}
