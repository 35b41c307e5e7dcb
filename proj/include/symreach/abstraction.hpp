#pragma once

#include "symreach/automaton.hpp"
#include "symreach/symmetry.hpp"

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace symreach {

struct ResetProvenance {
  int concrete_edge = -1;
  AffineMap map;  // gamma_dst o reset o gamma_src^-1
};

// The abstract automaton plus the bookkeeping tying it to the concrete one.
// autom.resets holds the distinct composite maps of each virtual edge;
// reset_provenance keeps one entry per concrete edge and reset map.
struct VirtualAutomaton {
  HybridAutomaton autom;
  std::vector<std::vector<int>> mode_classes;
  std::vector<std::vector<int>> edge_classes;
  std::vector<std::vector<ResetProvenance>> reset_provenance;
  std::vector<int> mode_of;
  std::vector<int> edge_of;
  std::vector<SymmetryPair> pairs;

  int num_modes() const { return autom.num_modes(); }
  int num_edges() const { return autom.num_edges(); }
};

inline constexpr double kModeDedupTol = 1e-9;

inline VirtualAutomaton construct_virtual_model(const HybridAutomaton& a, const VirtualMap& phi, bool validate = true) {
  if (validate) validate_map(phi, a.dynamics, a.modes);
  VirtualAutomaton va;
  HybridAutomaton& v = va.autom;
  v.n = a.n;
  v.dynamics = a.dynamics;
  v.style = a.style;

  for (int p = 0; p < a.num_modes(); ++p) {
    SymmetryPair pr = phi(a.modes[p]);
    Vec pv = pr.rho(a.modes[p]);
    int idx = -1;
    for (int q = 0; q < v.num_modes(); ++q)
      if (v.modes[q].size() == pv.size() && (v.modes[q] - pv).cwiseAbs().maxCoeff() <= kModeDedupTol) {
        idx = q;
        break;
      }
    if (idx < 0) {
      idx = v.num_modes();
      v.modes.push_back(pv);
      va.mode_classes.emplace_back();
      v.time_bounds.push_back(0.0);
    }
    va.mode_of.push_back(idx);
    va.mode_classes[idx].push_back(p);
    v.time_bounds[idx] = std::max(v.time_bounds[idx], a.time_bounds[p]);
    va.pairs.push_back(pr);
  }

  v.init_mode = va.mode_of[a.init_mode];
  v.init_set = va.pairs[a.init_mode].gamma.apply(a.init_set);

  for (int e = 0; e < a.num_edges(); ++e) {
    Edge ev{va.mode_of[a.edges[e].src], va.mode_of[a.edges[e].dst]};
    auto found = v.find_edge(ev.src, ev.dst);
    int idx;
    if (found) {
      idx = *found;
    } else {
      idx = v.num_edges();
      v.edges.push_back(ev);
      v.guards.emplace_back(a.n);
      v.resets.emplace_back();
      va.edge_classes.emplace_back();
      va.reset_provenance.emplace_back();
    }
    va.edge_of.push_back(idx);
    va.edge_classes[idx].push_back(e);
    const SymmetryPair& s = va.pairs[a.edges[e].src];
    const SymmetryPair& d = va.pairs[a.edges[e].dst];
    v.guards[idx].add(s.gamma.apply(a.guards[e]));
    for (const auto& r : a.resets[e]) {
      AffineMap comp = d.gamma.after(r.after(s.gamma_inv));
      va.reset_provenance[idx].push_back({e, comp});
      bool dup = false;
      for (const auto& m : v.resets[idx]) dup = dup || m.approx_equal(comp, 1e-9);
      if (!dup) v.resets[idx].push_back(comp);
    }
  }
  for (auto& g : v.guards) g.prune_subsumed();
  v.validate();
  return va;
}

struct FsrReport {
  int executions = 0;
  int transitions = 0;
  int violations = 0;
  std::vector<std::string> details;
};

// Samples concrete executions and checks that their images under the
// per-mode symmetries are executions of the virtual automaton.
inline FsrReport check_fsr(const HybridAutomaton& a, const VirtualAutomaton& va, int n_execs, int J,
                           std::uint64_t seed, double tol = 1e-6, double dt = 0.01) {
  FsrReport rep;
  const HybridAutomaton& v = va.autom;
  auto fail = [&](int k, const std::string& why) {
    ++rep.violations;
    if (rep.details.size() < 50) rep.details.push_back("execution " + std::to_string(k) + ": " + why);
  };
  for (int k = 0; k < n_execs; ++k) {
    Execution ex = sample_execution(a, J, seed + static_cast<std::uint64_t>(k), dt);
    ++rep.executions;
    const auto& pcs = ex.pieces;
    Vec x0v = va.pairs[pcs.front().mode].gamma(pcs.front().traj.x.front());
    if (!v.init_set.contains(x0v, kGeomTol)) fail(k, "initial state image outside the virtual initial set");
    for (std::size_t i = 0; i < pcs.size(); ++i) {
      const auto& pc = pcs[i];
      const SymmetryPair& g = va.pairs[pc.mode];
      int pv = va.mode_of[pc.mode];
      if (pc.traj.duration() > v.time_bounds[pv] + 1e-9) fail(k, "piece " + std::to_string(i) + " exceeds virtual time bound");
      Trajectory sim = simulate(v.dynamics, g.gamma(pc.traj.x.front()), v.modes[pv], pc.traj.duration(), dt);
      double dev = 0;
      for (std::size_t s = 0; s < sim.size() && s < pc.traj.size(); ++s)
        dev = std::max(dev, (g.gamma(pc.traj.x[s]) - sim.x[s]).cwiseAbs().maxCoeff());
      if (sim.size() != pc.traj.size() || dev > tol)
        fail(k, "piece " + std::to_string(i) + " image is not a virtual trajectory (deviation " + std::to_string(dev) + ")");
      if (i + 1 == pcs.size()) break;
      ++rep.transitions;
      int e = pc.edge;
      int ev = va.edge_of[e];
      const auto& nx = pcs[i + 1];
      if (v.edges[ev].src != pv || v.edges[ev].dst != va.mode_of[nx.mode]) fail(k, "virtual edge endpoints mismatch");
      Vec xv = g.gamma(pc.traj.last());
      if (!v.guards[ev].contains(xv, kGeomTol)) fail(k, "transition " + std::to_string(i) + " leaves the virtual guard");
      Vec xv_next = va.pairs[nx.mode].gamma(nx.traj.x.front());
      bool hit = false;
      for (const auto& m : v.resets[ev]) hit = hit || (m(xv) - xv_next).cwiseAbs().maxCoeff() <= tol;
      if (!hit) fail(k, "transition " + std::to_string(i) + " lands outside the virtual reset image");
    }
  }
  return rep;
}

// Scales every guard member about its centre; coordinates where the member
// is unbounded are left alone. Used to build deliberately broken abstractions.
inline VirtualAutomaton shrink_guards(VirtualAutomaton va, double factor) {
  for (auto& g : va.autom.guards) {
    Region out(g.dim());
    for (const auto& p : g.parts()) {
      HyperRect b = p.bounds();
      Mat S = Mat::Identity(b.dim(), b.dim());
      Vec c = Vec::Zero(b.dim());
      for (int i = 0; i < b.dim(); ++i) {
        if (std::isfinite(b.lo[i]) && std::isfinite(b.hi[i])) {
          double m = 0.5 * (b.lo[i] + b.hi[i]);
          S(i, i) = factor;
          c[i] = (1 - factor) * m;
        }
      }
      out.add(AffineMap(S, c).apply(p));
    }
    g = out;
  }
  return va;
}

namespace detail {
inline std::string fmt_vec(const Vec& v) {
  std::ostringstream os;
  os << std::setprecision(10) << "[";
  for (long i = 0; i < v.size(); ++i) os << (i ? ", " : "") << (std::abs(v[i]) < 1e-15 ? 0.0 : v[i]);
  os << "]";
  return os.str();
}
}  // namespace detail

// Structured text description of the abstract automaton.
inline std::string dump_virtual_automaton(const VirtualAutomaton& va) {
  std::ostringstream os;
  const auto& v = va.autom;
  os << "virtual_modes: " << v.num_modes() << "\n";
  for (int q = 0; q < v.num_modes(); ++q) {
    os << "  - index: " << q << "\n    vector: " << detail::fmt_vec(v.modes[q]) << "\n    time_bound: "
       << v.time_bounds[q] << "\n    concrete:";
    for (int p : va.mode_classes[q]) os << " " << p;
    os << "\n";
  }
  os << "initial_mode: " << v.init_mode << "\n";
  os << "virtual_edges: " << v.num_edges() << "\n";
  for (int e = 0; e < v.num_edges(); ++e) {
    os << "  - index: " << e << "\n    src: " << v.edges[e].src << "\n    dst: " << v.edges[e].dst
       << "\n    concrete:";
    for (int c : va.edge_classes[e]) os << " " << c;
    os << "\n    guard:\n";
    for (const auto& p : v.guards[e].parts()) {
      HyperRect b = p.bounds();
      os << "      - lo: " << detail::fmt_vec(b.lo) << "\n        hi: " << detail::fmt_vec(b.hi)
         << "\n        box: " << (p.is_box() ? "true" : "false") << "\n";
    }
    os << "    resets:\n";
    for (const auto& r : va.reset_provenance[e]) {
      os << "      - concrete_edge: " << r.concrete_edge << "\n        matrix: [";
      for (int i = 0; i < r.map.dim(); ++i) os << (i ? ", " : "") << detail::fmt_vec(r.map.M().row(i).transpose());
      os << "]\n        offset: " << detail::fmt_vec(r.map.c()) << "\n";
    }
  }
  return os.str();
}

}  // namespace symreach
