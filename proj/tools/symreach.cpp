// Command-line driver: scenario runs, method/map matrices and the sampled
// abstraction checks.

#include "symreach/scenario.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <sstream>

namespace {

using namespace symreach;

enum Exit { kOk = 0, kUnknown = 2, kInputError = 3, kNumericalFailure = 4 };

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct RunOptions {
  std::string scenario;
  std::string method, map, grid, dt, jmax, out;
};

Scenario apply_overrides(Scenario s, const RunOptions& o) {
  if (!o.method.empty()) s.method = method_from_string(o.method);
  if (!o.map.empty()) s.map = map_from_string(o.map);
  if (!o.grid.empty()) {
    double w = std::stod(o.grid);
    if (!(w > 0)) throw ScenarioError("--grid: must be positive");
    Vec width = s.grid.width;
    width[0] = width[1] = w;
    s.grid = Grid(s.grid.origin, width, s.grid.period);
  }
  if (!o.dt.empty()) {
    s.dt = std::stod(o.dt);
    if (!(s.dt > 0)) throw ScenarioError("--dt: must be positive");
  }
  if (!o.jmax.empty()) {
    s.J = parse_horizon(o.jmax);
    if (s.J) s.path_length = std::min<long>(s.path_length, *s.J + 1);
  }
  if (!s.J && s.method != Method::SV) throw ScenarioError("--jmax: an unbounded horizon needs --method sv");
  if (s.map == MapKind::TR && s.style != ModeStyle::Road) throw ScenarioError("--map: the rotation map needs road modes");
  return s;
}

int exit_for(Verdict v) { return v == Verdict::Unknown ? kUnknown : kOk; }

int cmd_run(const RunOptions& o) {
  Scenario s = apply_overrides(load_scenario(o.scenario), o);
  RunReport r = run(s, o.out);
  std::cout << report_header() << '\n' << format_row(r) << '\n';
  if (!r.note.empty()) std::cout << "note: " << r.note << '\n';
  return exit_for(r.verdict);
}

int cmd_matrix(const std::string& dir, const std::string& methods, const std::string& maps, const std::string& out) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Scenario> scenarios;
  for (const auto& f : files) {
    std::ifstream in(f);
    auto j = nlohmann::json::parse(in, nullptr, false);
    // constants files and other helpers carry no schema version
    if (j.is_discarded() || !j.is_object() || !j.contains("schema_version")) continue;
    scenarios.push_back(parse_scenario(j, f.parent_path()));
  }
  std::vector<Method> ms;
  for (const auto& m : split_list(methods)) ms.push_back(method_from_string(m));
  std::vector<MapKind> ks;
  for (const auto& k : split_list(maps)) ks.push_back(map_from_string(k));
  auto rows = run_matrix(scenarios, ms, ks, out);
  std::cout << report_header() << '\n';
  for (const auto& r : rows) std::cout << format_row(r) << '\n';
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream t(std::filesystem::path(out) / "table.tsv");
    t << report_header() << '\n';
    for (const auto& r : rows) t << format_row(r) << '\n';
  }
  bool any_failed = std::any_of(rows.begin(), rows.end(), [](const RunReport& r) { return r.failed; });
  return any_failed ? kUnknown : kOk;
}

int cmd_check_fsr(const std::string& file, int samples, std::uint64_t seed, const std::string& map, int jmax) {
  Scenario s = load_scenario(file);
  if (!map.empty()) s.map = map_from_string(map);
  HybridAutomaton a = build_automaton(s);
  VirtualAutomaton va = construct_virtual_model(a, build_map(s));
  FsrReport rep = check_fsr(a, va, samples, jmax, seed, 1e-6, s.dt);
  std::cout << "executions " << rep.executions << ", transitions " << rep.transitions << ", violations "
            << rep.violations << '\n';
  for (const auto& d : rep.details) std::cout << "  " << d << '\n';
  return rep.violations == 0 ? kOk : kUnknown;
}

int cmd_check_equivariance(const std::string& file, int samples, std::uint64_t seed, const std::string& map) {
  Scenario s = load_scenario(file);
  if (!map.empty()) s.map = map_from_string(map);
  HybridAutomaton a = build_automaton(s);
  VirtualMap phi = build_map(s);
  double worst = 0;
  for (int p = 0; p < a.num_modes(); ++p) {
    auto rep = check_equivariance(a.dynamics, phi(a.modes[p]), a.modes[p], samples, seed + p, 1e-9);
    worst = std::max(worst, rep.max_residual);
  }
  bool ok = worst < 1e-9;
  std::cout << "map " << to_string(s.map) << ", modes " << a.num_modes() << ", max residual " << worst
            << (ok ? " (ok)" : " (FAILED)") << '\n';
  return ok ? kOk : kUnknown;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reachability of hybrid automata through symmetry abstractions"};
  app.require_subcommand(1);

  RunOptions ro;
  auto* run_cmd = app.add_subcommand("run", "Run one scenario");
  run_cmd->add_option("scenario", ro.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--method", ro.method, "ns, sc or sv");
  run_cmd->add_option("--map", ro.map, "t, tr or custom");
  run_cmd->add_option("--grid", ro.grid, "Cell width of the position coordinates");
  run_cmd->add_option("--dt", ro.dt, "Integration step");
  run_cmd->add_option("--jmax", ro.jmax, "Transition horizon, or inf");
  run_cmd->add_option("--out", ro.out, "Output directory");

  std::string mdir, mmethods = "ns,sc,sv", mmaps = "t,tr", mout;
  auto* matrix_cmd = app.add_subcommand("matrix", "Run every scenario of a directory under several methods and maps");
  matrix_cmd->add_option("dir", mdir, "Scenario directory")->required()->check(CLI::ExistingDirectory);
  matrix_cmd->add_option("--methods", mmethods, "Comma-separated methods");
  matrix_cmd->add_option("--maps", mmaps, "Comma-separated maps");
  matrix_cmd->add_option("--out", mout, "Output directory");

  std::string ffile, fmap;
  int fsamples = 50, fj = 16;
  std::uint64_t fseed = 1;
  auto* fsr_cmd = app.add_subcommand("check-fsr", "Sample executions and check the forward simulation relation");
  fsr_cmd->add_option("scenario", ffile, "Scenario file")->required()->check(CLI::ExistingFile);
  fsr_cmd->add_option("--samples", fsamples, "Number of executions")->check(CLI::PositiveNumber);
  fsr_cmd->add_option("--seed", fseed, "Random seed");
  fsr_cmd->add_option("--map", fmap, "Override the scenario map");
  fsr_cmd->add_option("--jmax", fj, "Transitions per execution")->check(CLI::NonNegativeNumber);

  std::string efile, emap;
  int esamples = 1000;
  std::uint64_t eseed = 1;
  auto* eq_cmd = app.add_subcommand("check-equivariance", "Check that every mode's symmetry commutes with the dynamics");
  eq_cmd->add_option("scenario", efile, "Scenario file")->required()->check(CLI::ExistingFile);
  eq_cmd->add_option("--samples", esamples, "Samples per mode")->check(CLI::PositiveNumber);
  eq_cmd->add_option("--seed", eseed, "Random seed");
  eq_cmd->add_option("--map", emap, "Override the scenario map");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*run_cmd) return cmd_run(ro);
    if (*matrix_cmd) return cmd_matrix(mdir, mmethods, mmaps, mout);
    if (*fsr_cmd) return cmd_check_fsr(ffile, fsamples, fseed, fmap, fj);
    if (*eq_cmd) return cmd_check_equivariance(efile, esamples, eseed, emap);
  } catch (const NumericalBlowup& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const SingularMap& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kOk;
}
