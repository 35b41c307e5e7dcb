#pragma once

#include "symreach/abstraction.hpp"
#include "symreach/paths.hpp"
#include "symreach/reach.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace symreach {

// Bad scenario input. The message starts with the offending field path.
struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kScenarioSchemaVersion = 1;

enum class PathKind { Rectangle, SShaped, Koch, Random, Custom };

inline std::string to_string(PathKind k) {
  switch (k) {
    case PathKind::Rectangle: return "rectangle";
    case PathKind::SShaped: return "s_shaped";
    case PathKind::Koch: return "koch";
    case PathKind::Random: return "random";
    case PathKind::Custom: return "custom";
  }
  return "?";
}

struct Scenario {
  std::string name;
  Dynamics dynamics;
  ModeStyle style = ModeStyle::Road;
  PathKind path_kind = PathKind::SShaped;
  RectangleGeometry rectangle;
  SGeometry s_shaped;
  KochGeometry koch;
  RandomGeometry random;
  std::vector<Vec> points;  // custom paths: waypoints, or the chain of road endpoints
  Vec eps0, eps1;
  HyperRect init;
  std::vector<HyperRect> unsafe;
  std::optional<HyperRect> domain;
  Grid grid;
  double dt = 0.01;
  double time_bound = 10.0;
  double time_per_length = 0.0;
  std::optional<long> J;  // nullopt: unbounded
  int path_length = 16;
  MapKind map = MapKind::T;
  std::vector<std::pair<Vec, SymmetryPair>> custom_map;
  Method method = Method::SV;
};

namespace detail {

using json = nlohmann::json;

[[noreturn]] inline void bad(const std::string& path, const std::string& why) {
  throw ScenarioError(path + ": " + why);
}

inline std::string child(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) bad(path, "expected a number");
  double v = j.get<double>();
  if (!std::isfinite(v)) bad(path, "must be finite");
  return v;
}

inline Vec as_vec(const json& j, const std::string& path, long n = -1) {
  if (!j.is_array()) bad(path, "expected an array of numbers");
  if (n >= 0 && static_cast<long>(j.size()) != n) bad(path, "expected " + std::to_string(n) + " entries");
  Vec v(static_cast<long>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<long>(i)] = as_number(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

inline Mat as_mat(const json& j, const std::string& path, long n) {
  if (!j.is_array() || static_cast<long>(j.size()) != n) bad(path, "expected " + std::to_string(n) + " rows");
  Mat m(n, n);
  for (long r = 0; r < n; ++r) m.row(r) = as_vec(j[r], path + "[" + std::to_string(r) + "]", n).transpose();
  return m;
}

inline std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) bad(path, "expected a string");
  return j.get<std::string>();
}

inline const json* find(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline double number_or(const json& obj, const std::string& path, const std::string& key, double dflt) {
  const json* j = find(obj, key);
  return j ? as_number(*j, child(path, key)) : dflt;
}

inline double positive_or(const json& obj, const std::string& path, const std::string& key, double dflt) {
  double v = number_or(obj, path, key, dflt);
  if (!(v > 0)) bad(child(path, key), "must be positive");
  return v;
}

// {"lo": [...], "hi": [...]} or {"center": [...], "width": [...]}; an
// optional "heading": [lo, hi] replaces the third coordinate.
inline HyperRect as_box(const json& j, const std::string& path, long n) {
  if (!j.is_object()) bad(path, "expected an object");
  HyperRect b;
  if (find(j, "lo") || find(j, "hi")) {
    if (!find(j, "lo") || !find(j, "hi")) bad(path, "needs both lo and hi");
    b = HyperRect(as_vec(j["lo"], child(path, "lo"), n), as_vec(j["hi"], child(path, "hi"), n));
  } else if (find(j, "center") && find(j, "width")) {
    Vec w = as_vec(j["width"], child(path, "width"), n);
    if ((w.array() < 0).any()) bad(child(path, "width"), "must be non-negative");
    b = HyperRect::centered(as_vec(j["center"], child(path, "center"), n), w);
  } else {
    bad(path, "needs lo/hi or center/width");
  }
  if (const json* h = find(j, "heading")) {
    Vec r = as_vec(*h, child(path, "heading"), 2);
    b.lo[2] = r[0];
    b.hi[2] = r[1];
  }
  for (long i = 0; i < n; ++i)
    if (b.lo[i] > b.hi[i]) bad(path, "lower bound above upper bound in coordinate " + std::to_string(i));
  return b;
}

inline AffineMap as_affine(const json& j, const std::string& path, long n) {
  if (!j.is_object() || !find(j, "matrix") || !find(j, "offset")) bad(path, "needs matrix and offset");
  return AffineMap(as_mat(j["matrix"], child(path, "matrix"), n), as_vec(j["offset"], child(path, "offset"), n));
}

inline void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) bad(child(path, k), "unknown field");
  }
}

inline void read_constants(const json& j, const std::string& path, DynamicsParams& p) {
  if (!j.is_object()) bad(path, "expected an object");
  check_keys(j, path, {"v", "L", "rates"});
  p.v = positive_or(j, path, "v", p.v);
  p.L = positive_or(j, path, "L", p.L);
  if (const json* r = find(j, "rates")) {
    Vec v = as_vec(*r, child(path, "rates"), 3);
    for (int i = 0; i < 3; ++i) p.rates[i] = v[i];
  }
}

inline std::vector<Vec> read_points(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() < 2) bad(path, "expected at least two points");
  std::vector<Vec> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_vec(j[i], path + "[" + std::to_string(i) + "]", 2));
  return out;
}

inline void read_path(const json& j, const std::string& path, Scenario& s) {
  if (!j.is_object()) bad(path, "expected an object");
  std::string kind = as_string(j.value("kind", json()), child(path, "kind"));
  auto start = [&](Vec dflt) { return find(j, "start") ? as_vec(j["start"], child(path, "start"), 2) : dflt; };
  if (kind == "rectangle") {
    check_keys(j, path, {"kind", "start", "width", "height", "center"});
    s.path_kind = PathKind::Rectangle;
    auto& g = s.rectangle;
    g.start = start(g.start);
    g.width = positive_or(j, path, "width", g.width);
    g.height = positive_or(j, path, "height", g.height);
    if (const json* c = find(j, "center")) g.center = as_vec(*c, child(path, "center"), 2);
  } else if (kind == "s_shaped") {
    check_keys(j, path, {"kind", "start", "long_leg", "short_leg", "roads"});
    s.path_kind = PathKind::SShaped;
    auto& g = s.s_shaped;
    g.start = start(g.start);
    g.long_leg = positive_or(j, path, "long_leg", g.long_leg);
    g.short_leg = positive_or(j, path, "short_leg", g.short_leg);
    g.roads = static_cast<int>(positive_or(j, path, "roads", g.roads));
  } else if (kind == "koch") {
    check_keys(j, path, {"kind", "start", "origin", "segment"});
    s.path_kind = PathKind::Koch;
    auto& g = s.koch;
    g.start = start(g.start);
    if (const json* o = find(j, "origin")) g.origin = as_vec(*o, child(path, "origin"), 2);
    g.segment = positive_or(j, path, "segment", g.segment);
  } else if (kind == "random") {
    check_keys(j, path, {"kind", "start", "roads", "min_length", "max_length", "seed"});
    s.path_kind = PathKind::Random;
    auto& g = s.random;
    g.start = start(g.start);
    g.roads = static_cast<int>(positive_or(j, path, "roads", g.roads));
    g.min_length = static_cast<int>(positive_or(j, path, "min_length", g.min_length));
    g.max_length = static_cast<int>(positive_or(j, path, "max_length", g.max_length));
    if (g.max_length < g.min_length) bad(child(path, "max_length"), "below min_length");
    if (const json* sd = find(j, "seed")) {
      if (!sd->is_number_unsigned()) bad(child(path, "seed"), "expected a non-negative integer");
      g.seed = sd->get<std::uint64_t>();
    }
  } else if (kind == "custom") {
    check_keys(j, path, {"kind", "points"});
    s.path_kind = PathKind::Custom;
    if (!find(j, "points")) bad(child(path, "points"), "required for a custom path");
    s.points = read_points(j["points"], child(path, "points"));
  } else {
    bad(child(path, "kind"), "unknown path kind '" + kind + "'");
  }
}

inline bool box_within(const HyperRect& inner, const HyperRect& outer, double tol = 1e-9) {
  for (int i = 0; i < inner.dim(); ++i)
    if (inner.lo[i] < outer.lo[i] - tol || inner.hi[i] > outer.hi[i] + tol) return false;
  return true;
}

}  // namespace detail

inline Method method_from_string(const std::string& m) {
  if (m == "ns") return Method::NS;
  if (m == "sc") return Method::SC;
  if (m == "sv") return Method::SV;
  throw std::invalid_argument("unknown method: " + m);
}

inline MapKind map_from_string(const std::string& m) {
  if (m == "t") return MapKind::T;
  if (m == "tr") return MapKind::TR;
  if (m == "custom") return MapKind::Custom;
  throw std::invalid_argument("unknown map: " + m);
}

// J as a string: a non-negative integer or "inf".
inline std::optional<long> parse_horizon(const std::string& s) {
  if (s == "inf") return std::nullopt;
  std::size_t used = 0;
  long v = -1;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || v < 0) throw std::invalid_argument("J must be a non-negative integer or 'inf'");
  return v;
}

// Roads of the scenario path (road style) in visiting order.
inline std::vector<Road> scenario_roads(const Scenario& s) {
  switch (s.path_kind) {
    case PathKind::Rectangle: return rectangle_roads(s.rectangle);
    case PathKind::SShaped: return s_shaped_roads(s.s_shaped);
    case PathKind::Koch: return koch_roads(s.koch);
    case PathKind::Random: return random_roads(s.random);
    case PathKind::Custom: return chain_roads(s.points);
  }
  return {};
}

inline std::vector<Vec> scenario_waypoints(const Scenario& s) {
  if (s.path_kind == PathKind::Rectangle) return rectangle_waypoints(s.rectangle);
  if (s.path_kind == PathKind::Custom) return s.points;
  std::vector<Vec> pts;
  for (const auto& r : scenario_roads(s)) pts.push_back(r.dst);
  return pts;
}

inline HybridAutomaton build_automaton(const Scenario& s) {
  BuildOptions opt;
  opt.init_set = Region(s.init);
  opt.dynamics = s.dynamics;
  opt.time_bound = s.time_bound;
  opt.time_per_length = s.time_per_length;
  if (s.style == ModeStyle::Waypoint) return build_waypoint_automaton(scenario_waypoints(s), s.eps0, s.eps1, opt);
  return build_road_automaton(scenario_roads(s), s.eps0, s.eps1, opt);
}

inline VirtualMap build_map(const Scenario& s) {
  switch (s.map) {
    case MapKind::T: return make_translation_map(s.dynamics);
    case MapKind::TR: return make_tr_map(s.dynamics);
    case MapKind::Custom: return make_custom_map(s.custom_map);
    case MapKind::Identity: return make_identity_map(3);
  }
  return make_identity_map(3);
}

// Domain containment of Θ and of the bounded coordinates of every guard.
inline void check_domain(const Scenario& s, const HybridAutomaton& a) {
  if (!s.domain) return;
  if (!detail::box_within(s.init, *s.domain)) detail::bad("init", "not inside the domain box");
  for (std::size_t e = 0; e < a.guards.size(); ++e)
    for (const auto& part : a.guards[e].parts()) {
      HyperRect b = part.bounds();
      for (int i = 0; i < b.dim(); ++i) {
        if (!std::isfinite(b.lo[i])) b.lo[i] = s.domain->lo[i];
        if (!std::isfinite(b.hi[i])) b.hi[i] = s.domain->hi[i];
      }
      if (!detail::box_within(b, *s.domain))
        detail::bad("domain", "does not contain the guard of edge " + std::to_string(e));
    }
}

// base_dir resolves a relative constants_file.
inline Scenario parse_scenario(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using json = nlohmann::json;
  using detail::bad;
  using detail::find;
  if (!j.is_object()) bad("(root)", "expected an object");
  detail::check_keys(j, "", {"schema_version", "name", "dynamics", "constants", "constants_file", "mode_style", "path",
                            "eps0", "eps1", "init", "unsafe", "domain", "grid", "dt", "time_bound",
                            "time_per_length", "J", "path_length", "map", "custom_map", "method"});
  const json* ver = find(j, "schema_version");
  if (!ver) bad("schema_version", "required");
  if (!ver->is_number_integer() || ver->get<long>() != kScenarioSchemaVersion)
    bad("schema_version", "unsupported version (expected " + std::to_string(kScenarioSchemaVersion) + ")");

  Scenario s;
  s.name = find(j, "name") ? detail::as_string(j["name"], "name") : "scenario";
  if (const json* d = find(j, "dynamics")) {
    try {
      s.dynamics.id = dynamics_from_string(detail::as_string(*d, "dynamics"));
    } catch (const std::invalid_argument& e) {
      bad("dynamics", e.what());
    }
  }
  s.dynamics.params.L = 1.0;
  if (const json* f = find(j, "constants_file")) {
    std::filesystem::path p = detail::as_string(*f, "constants_file");
    if (p.is_relative()) p = base_dir / p;
    std::ifstream in(p);
    if (!in) bad("constants_file", "cannot open " + p.string());
    json c;
    try {
      c = json::parse(in);
    } catch (const json::parse_error& e) {
      bad("constants_file", e.what());
    }
    detail::read_constants(c, "constants_file", s.dynamics.params);
  }
  if (const json* c = find(j, "constants")) detail::read_constants(*c, "constants", s.dynamics.params);

  if (!find(j, "path")) bad("path", "required");
  detail::read_path(j["path"], "path", s);
  s.style = s.path_kind == PathKind::Rectangle ? ModeStyle::Waypoint : ModeStyle::Road;
  if (const json* m = find(j, "mode_style")) {
    std::string v = detail::as_string(*m, "mode_style");
    if (v == "waypoint") s.style = ModeStyle::Waypoint;
    else if (v == "road") s.style = ModeStyle::Road;
    else bad("mode_style", "expected 'waypoint' or 'road'");
  }

  s.eps0 = find(j, "eps0") ? detail::as_vec(j["eps0"], "eps0", 2) : point2(1.0, 1.4);
  s.eps1 = find(j, "eps1") ? detail::as_vec(j["eps1"], "eps1", 2) : point2(0.6, 1.0);
  for (auto [v, key] : {std::pair{&s.eps0, "eps0"}, std::pair{&s.eps1, "eps1"}})
    if ((v->array() <= 0).any()) bad(key, "entries must be positive");

  if (!find(j, "init")) bad("init", "required");
  s.init = detail::as_box(j["init"], "init", 3);
  if (const json* u = find(j, "unsafe")) {
    if (!u->is_array()) bad("unsafe", "expected an array of boxes");
    for (std::size_t i = 0; i < u->size(); ++i) {
      std::string p = "unsafe[" + std::to_string(i) + "]";
      s.unsafe.push_back(detail::as_box((*u)[i], p, 3));
    }
  }
  if (const json* d = find(j, "domain")) s.domain = detail::as_box(*d, "domain", 3);

  Vec width(3), origin = Vec::Zero(3);
  width << 0.2, 0.2, std::numbers::pi / 16;
  if (const json* g = find(j, "grid")) {
    if (!g->is_object()) bad("grid", "expected an object");
    detail::check_keys(*g, "grid", {"cell_width", "origin"});
    if (const json* w = find(*g, "cell_width")) width = detail::as_vec(*w, "grid.cell_width", 3);
    for (int i = 0; i < 3; ++i)
      if (!(width[i] > 0)) bad("grid.cell_width[" + std::to_string(i) + "]", "must be positive");
    if (const json* o = find(*g, "origin")) origin = detail::as_vec(*o, "grid.origin", 3);
  }
  try {
    s.grid = Grid(origin, width, s.dynamics.periods());
  } catch (const GeometryError& e) {
    bad("grid.cell_width", e.what());
  }
  s.dt = detail::positive_or(j, "", "dt", s.dt);
  s.time_bound = detail::positive_or(j, "", "time_bound", s.time_bound);
  s.time_per_length = detail::number_or(j, "", "time_per_length", 0.0);
  if (s.time_per_length < 0) bad("time_per_length", "must be non-negative");

  if (const json* pl = find(j, "path_length")) {
    if (!pl->is_number_integer() || pl->get<long>() < 1) bad("path_length", "expected a positive integer");
    s.path_length = pl->get<int>();
  } else if (s.path_kind == PathKind::SShaped) {
    s.path_length = s.s_shaped.roads;
  } else if (s.path_kind == PathKind::Random) {
    s.path_length = s.random.roads;
  } else if (s.path_kind == PathKind::Koch) {
    s.path_length = static_cast<int>(koch_headings().size()) + 1;
  }
  s.J = s.path_length - 1;
  if (const json* jj = find(j, "J")) {
    if (jj->is_string()) {
      if (jj->get<std::string>() != "inf") bad("J", "expected an integer or \"inf\"");
      s.J = std::nullopt;
    } else if (jj->is_number_integer() && jj->get<long>() >= 0) {
      s.J = jj->get<long>();
      if (*s.J + 1 < s.path_length) bad("J", "shorter than the path (needs at least path_length - 1)");
    } else {
      bad("J", "expected a non-negative integer or \"inf\"");
    }
  }

  if (const json* m = find(j, "map")) {
    try {
      s.map = map_from_string(detail::as_string(*m, "map"));
    } catch (const std::invalid_argument& e) {
      bad("map", e.what());
    }
  }
  if (s.map == MapKind::TR && s.style != ModeStyle::Road) bad("map", "the rotation map needs road modes");
  if (const json* cm = find(j, "custom_map")) {
    if (!cm->is_array()) bad("custom_map", "expected an array");
    for (std::size_t i = 0; i < cm->size(); ++i) {
      std::string p = "custom_map[" + std::to_string(i) + "]";
      const json& e = (*cm)[i];
      if (!e.is_object() || !find(e, "mode") || !find(e, "gamma") || !find(e, "rho")) bad(p, "needs mode, gamma and rho");
      Vec mode = detail::as_vec(e["mode"], p + ".mode");
      AffineMap g = detail::as_affine(e["gamma"], p + ".gamma", 3);
      AffineMap r = detail::as_affine(e["rho"], p + ".rho", mode.size());
      if (!g.invertible()) bad(p + ".gamma", "not invertible");
      s.custom_map.emplace_back(mode, SymmetryPair(g, r));
    }
  }
  if (s.map == MapKind::Custom && s.custom_map.empty()) bad("custom_map", "required when map is custom");
  if (const json* m = find(j, "method")) {
    try {
      s.method = method_from_string(detail::as_string(*m, "method"));
    } catch (const std::invalid_argument& e) {
      bad("method", e.what());
    }
  }
  if (!s.J && s.method != Method::SV) bad("J", "an unbounded horizon needs method sv");
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ScenarioError(file.string() + ": cannot open");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ScenarioError(file.string() + ": " + e.what());
  }
  return parse_scenario(j, file.parent_path());
}

struct RunReport {
  std::string scenario;
  std::string map;  // "-" for NS
  Method method = Method::NS;
  int modes = 0;
  int edges = 0;
  Metrics metrics;
  int computed_segments = 0;
  bool fixed_point = false;
  Verdict verdict = Verdict::NotApplicable;
  std::string note;
  bool failed = false;
};

inline std::string report_header() {
  return "path\tPhi\tsym\t#m/e\t#co\t#re\t#cp\t#tot.\ttime\terror\tverdict";
}

inline std::string format_row(const RunReport& r) {
  std::ostringstream os;
  os << r.scenario << '\t' << r.map << '\t' << to_string(r.method) << '\t';
  if (r.failed) {
    os << "-\t-\t-\t-\t-\t-\t-\tfailed: " << r.note;
    return os.str();
  }
  os << r.modes << '/' << r.edges << '\t' << r.metrics.co << '\t' << r.metrics.re << '\t' << r.metrics.cp << '\t'
     << r.metrics.tot() << '\t' << std::fixed << std::setprecision(3) << r.metrics.wall_time << '\t';
  if (std::isnan(r.metrics.error_pct)) os << '-';
  else os << std::setprecision(1) << r.metrics.error_pct;
  os << '\t' << to_string(r.verdict);
  return os.str();
}

namespace detail {

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_csv(const ReachResult& r, std::ostream& os) {
  os << "path_index,virtual_mode_index,t_lo,t_hi,lo0,lo1,lo2,hi0,hi1,hi2,provenance\n";
  for (const auto& seg : r.segments)
    for (const auto& tb : seg.boxes) {
      os << seg.path_index << ',' << seg.virtual_mode << ',' << fmt_num(tb.t_lo) << ',' << fmt_num(tb.t_hi);
      for (int i = 0; i < 3; ++i) os << ',' << fmt_num(tb.box.lo[i]);
      for (int i = 0; i < 3; ++i) os << ',' << fmt_num(tb.box.hi[i]);
      os << ',' << to_string(tb.prov) << '\n';
    }
}

// Unsafe-set test for NS and SC: occupied concrete cells against U.
inline bool cells_meet(const ReachResult& r, const Region& U, const Grid& g) {
  BoxTester tester(U, g.period);
  for (const auto& seg : r.segments)
    for (const auto& c : seg.cells)
      if (tester.intersects(RawBox::of(g.cell_box(c)))) return true;
  return false;
}

inline void write_geometry(const Scenario& s, const HybridAutomaton& a, std::ostream& os) {
  os << "dynamics: " << to_string(s.dynamics.id) << " (v=" << s.dynamics.params.v << ", L=" << s.dynamics.params.L
     << ")\npath: " << to_string(s.path_kind) << ", " << (s.style == ModeStyle::Road ? "road" : "waypoint")
     << " modes\nmodes:\n";
  for (int p = 0; p < a.num_modes(); ++p)
    os << "  " << p << ": " << fmt_vec(a.modes[p]) << "  T=" << a.time_bounds[p] << '\n';
  os << "grid: width " << fmt_vec(s.grid.width) << " origin " << fmt_vec(s.grid.origin) << ", dt " << s.dt << '\n';
  os << "eps0 " << fmt_vec(s.eps0) << "  eps1 " << fmt_vec(s.eps1) << '\n';
}

}  // namespace detail

// Builds the automaton and virtual model, runs the scenario's method and,
// when out_dir is non-empty, writes virtual_automaton.yaml, reachtube.csv,
// metrics.json and report.txt there. The error column needs an NS baseline
// over the same path, which is run for SC and SV unless with_baseline is off.
inline RunReport run(const Scenario& s, const std::filesystem::path& out_dir = {}, bool with_baseline = true) {
  HybridAutomaton a = build_automaton(s);
  check_domain(s, a);
  RunReport rep;
  rep.scenario = s.name;
  rep.method = s.method;
  rep.map = s.method == Method::NS ? "-" : to_string(s.map);

  std::optional<VirtualAutomaton> va;
  if (s.method != Method::NS) {
    va = construct_virtual_model(a, build_map(s));
    rep.modes = va->num_modes();
    rep.edges = va->num_edges();
  } else {
    rep.modes = a.num_modes();
    rep.edges = a.num_edges();
  }
  auto path = unroll(a, s.path_length);
  ReachSettings rs{s.grid};
  rs.dt = s.dt;
  rs.collect_boxes = !out_dir.empty();
  rs.collect_cells = !s.unsafe.empty() && s.method != Method::SV;
  Region U(3);
  for (const auto& b : s.unsafe) U.add(ConvexPolytope::from_box(b));

  ReachResult res;
  if (s.method == Method::SV) {
    VerifResult v = unbounded_verif(a, *va, U, path, rs, s.J);
    rep.note = v.reason;
    if (!v.reach) {
      rep.verdict = Verdict::Unknown;
    } else {
      res = std::move(*v.reach);
      rep.verdict = s.unsafe.empty() ? (res.fixed_point ? Verdict::NotApplicable : Verdict::Unknown) : v.verdict;
      if (s.unsafe.empty() && !res.fixed_point) rep.note = "no fixed point within the horizon";
      if (s.unsafe.empty() && res.fixed_point) rep.note = "fixed point reached";
    }
  } else {
    res = compute_reachset(a, path, s.method, va ? &*va : nullptr, rs, s.J);
    if (!s.unsafe.empty()) {
      bool hit = detail::cells_meet(res, U, s.grid);
      rep.verdict = hit ? Verdict::Unknown : Verdict::Safe;
      rep.note = hit ? "reachset meets the unsafe set" : "bounded horizon avoids the unsafe set";
    }
  }
  rep.metrics = res.metrics;
  rep.computed_segments = res.computed_segments;
  rep.fixed_point = res.fixed_point;
  if (s.method != Method::NS && with_baseline && !res.segments.empty()) {
    ReachSettings bs{s.grid};
    bs.dt = s.dt;
    auto base = compute_reachset(a, path, Method::NS, nullptr, bs, static_cast<long>(res.segments.size()) - 1);
    rep.metrics.error_pct = overapprox_error(init_volumes(base), init_volumes(res));
  } else if (s.method == Method::NS) {
    rep.metrics.error_pct = 0.0;
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    if (va) std::ofstream(out_dir / "virtual_automaton.yaml") << dump_virtual_automaton(*va);
    {
      std::ofstream csv(out_dir / "reachtube.csv");
      detail::write_csv(res, csv);
    }
    nlohmann::ordered_json m;
    m["scenario"] = s.name;
    m["method"] = to_string(s.method);
    m["map"] = rep.map;
    m["modes"] = rep.modes;
    m["edges"] = rep.edges;
    m["co"] = rep.metrics.co;
    m["re"] = rep.metrics.re;
    m["cp"] = rep.metrics.cp;
    m["tot"] = rep.metrics.tot();
    m["computed_segments"] = rep.computed_segments;
    m["fixed_point"] = rep.fixed_point;
    m["error_pct"] = std::isnan(rep.metrics.error_pct) ? nlohmann::ordered_json() : nlohmann::ordered_json(rep.metrics.error_pct);
    m["verdict"] = to_string(rep.verdict);
    std::ofstream(out_dir / "metrics.json") << m.dump(2) << '\n';
    std::ofstream r(out_dir / "report.txt");
    r << report_header() << '\n' << format_row(rep) << '\n' << "note: " << rep.note << "\n\n";
    detail::write_geometry(s, a, r);
  }
  return rep;
}

// Cross product of scenarios, methods and maps. NS ignores the map and runs
// once per scenario; a failing run becomes a failed row.
inline std::vector<RunReport> run_matrix(const std::vector<Scenario>& scenarios, const std::vector<Method>& methods,
                                         const std::vector<MapKind>& maps, const std::filesystem::path& out_dir = {}) {
  std::vector<RunReport> rows;
  for (const auto& base : scenarios)
    for (Method m : methods) {
      std::vector<std::optional<MapKind>> ks;
      if (m == Method::NS) ks.push_back(std::nullopt);
      else for (MapKind k : maps) ks.push_back(k);
      for (const auto& k : ks) {
        Scenario s = base;
        s.method = m;
        if (k) s.map = *k;
        if (m != Method::SV && !s.J) s.J = s.path_length - 1;
        std::filesystem::path dir;
        if (!out_dir.empty()) dir = out_dir / (s.name + "_" + to_string(m) + (k ? "_" + to_string(*k) : ""));
        try {
          if (k == MapKind::TR && s.style != ModeStyle::Road) throw ScenarioError("map: the rotation map needs road modes");
          rows.push_back(run(s, dir));
        } catch (const std::exception& e) {
          RunReport r;
          r.scenario = s.name;
          r.method = m;
          r.map = k ? to_string(*k) : "-";
          r.failed = true;
          r.note = e.what();
          rows.push_back(r);
        }
      }
    }
  return rows;
}

}  // namespace symreach
