#pragma once

#include "symreach/dynamics.hpp"
#include "symreach/geom.hpp"

#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace symreach {

struct DegenerateRoad : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SymmetryCheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// gamma acts on states, rho on mode vectors.
struct SymmetryPair {
  AffineMap gamma;
  AffineMap gamma_inv;
  AffineMap rho;

  SymmetryPair() = default;
  SymmetryPair(AffineMap g, AffineMap r) : gamma(std::move(g)), gamma_inv(gamma.inverse()), rho(std::move(r)) {}
};

enum class MapKind { T, TR, Custom, Identity };

inline std::string to_string(MapKind k) {
  switch (k) {
    case MapKind::T: return "t";
    case MapKind::TR: return "tr";
    case MapKind::Custom: return "custom";
    case MapKind::Identity: return "identity";
  }
  return "?";
}

struct VirtualMap {
  MapKind kind = MapKind::Identity;
  std::function<SymmetryPair(const Vec&)> family;

  SymmetryPair operator()(const Vec& p) const { return family(p); }
  Vec rv(const Vec& p) const { return family(p).rho(p); }
};

inline Vec rv_of(const VirtualMap& phi, const Vec& p) { return phi.rv(p); }

inline Mat rotation2(double theta) {
  Mat R(2, 2);
  double c = std::cos(theta), s = std::sin(theta);
  R << c, s, -s, c;
  return R;
}

inline VirtualMap make_identity_map(int n) {
  VirtualMap phi;
  phi.kind = MapKind::Identity;
  phi.family = [n](const Vec& p) {
    return SymmetryPair(AffineMap::identity(n), AffineMap::identity(static_cast<int>(p.size())));
  };
  return phi;
}

// Moves the target point of every mode to the origin. The target is the
// waypoint, or the destination of a road.
inline VirtualMap make_translation_map(const Dynamics& d) {
  VirtualMap phi;
  phi.kind = MapKind::T;
  phi.family = [d](const Vec& p) {
    int k = d.target_dim();
    Vec star = d.target_of(p);
    Vec c = Vec::Zero(3);
    c.head(k) = -star;
    Vec cr(p.size());
    for (long b = 0; b < p.size() / k; ++b) cr.segment(b * k, k) = -star;
    return SymmetryPair(AffineMap::translation(c), AffineMap::translation(cr));
  };
  return phi;
}

// Translation plus rotation putting every road on a coordinate axis, ending
// at the origin. target_axis selects the first (0) or second (1) axis.
inline VirtualMap make_tr_map(const Dynamics& d, int target_axis = 0) {
  if (target_axis != 0 && target_axis != 1) throw std::invalid_argument("target_axis must be 0 or 1");
  VirtualMap phi;
  phi.kind = MapKind::TR;
  phi.family = [d, target_axis](const Vec& p) {
    int k = d.target_dim();
    if (p.size() != 2 * k) throw DimensionMismatch("rotation map needs road modes [src, dst]");
    Vec src = p.head(k), dst = p.tail(k);
    Vec dir = dst.head(2) - src.head(2);
    if (dir.norm() < 1e-12) throw DegenerateRoad("road of zero length");
    double theta = std::atan2(dir[1], dir[0]) - (target_axis == 1 ? std::numbers::pi / 2 : 0.0);
    Mat R = rotation2(theta);

    Mat M = Mat::Identity(3, 3);
    M.topLeftCorner(2, 2) = R;
    Vec c(3);
    c.head(2) = -R * dst.head(2);
    c[2] = d.id == DynamicsId::Robot ? -theta : -dst[2];

    Mat Mr = Mat::Identity(2 * k, 2 * k);
    Vec cr = Vec::Zero(2 * k);
    for (int b = 0; b < 2; ++b) {
      Mr.block(b * k, b * k, 2, 2) = R;
      cr.segment(b * k, 2) = -R * dst.head(2);
      if (k == 3) cr[b * k + 2] = -dst[2];
    }
    return SymmetryPair(AffineMap(M, c), AffineMap(Mr, cr));
  };
  return phi;
}

// Table of explicit pairs, looked up by mode vector.
inline VirtualMap make_custom_map(std::vector<std::pair<Vec, SymmetryPair>> table) {
  VirtualMap phi;
  phi.kind = MapKind::Custom;
  auto shared = std::make_shared<const std::vector<std::pair<Vec, SymmetryPair>>>(std::move(table));
  phi.family = [shared](const Vec& p) {
    for (const auto& [q, pair] : *shared)
      if (q.size() == p.size() && (q - p).cwiseAbs().maxCoeff() <= 1e-9) return pair;
    throw std::out_of_range("custom map has no entry for this mode");
  };
  return phi;
}

// phi_ab is applied first; phi_bc acts on the resulting virtual modes.
inline VirtualMap compose_maps(const VirtualMap& phi_ab, const VirtualMap& phi_bc) {
  VirtualMap phi;
  phi.kind = MapKind::Custom;
  phi.family = [phi_ab, phi_bc](const Vec& p) {
    SymmetryPair ab = phi_ab(p);
    Vec pb = ab.rho(p);
    SymmetryPair bc = phi_bc(pb);
    require_dim(ab.gamma.dim(), bc.gamma.dim(), "compose_maps state maps");
    require_dim(ab.rho.dim(), bc.rho.dim(), "compose_maps mode maps");
    return SymmetryPair(bc.gamma.after(ab.gamma), bc.rho.after(ab.rho));
  };
  return phi;
}

struct EquivarianceReport {
  double max_residual = 0;
  bool pass = false;
};

// Sampling box for states around the mode's target point.
inline HyperRect default_sample_box(const Dynamics& d, const Vec& p) {
  Vec c = Vec::Zero(3);
  int k = d.target_dim();
  c.head(k) = d.target_of(p);
  Vec w(3);
  w << 20, 20, d.id == DynamicsId::Robot ? 2 * std::numbers::pi : 20;
  return HyperRect::centered(c, w);
}

inline EquivarianceReport check_equivariance(const Dynamics& d, const SymmetryPair& pair, const Vec& p, int samples,
                                             std::uint64_t seed, double tol, const HyperRect* box = nullptr) {
  if (!(tol > 0)) throw std::invalid_argument("tolerance must be positive");
  HyperRect b = box ? *box : default_sample_box(d, p);
  std::mt19937_64 rng(seed);
  Vec pv = pair.rho(p);
  EquivarianceReport rep;
  for (int s = 0; s < samples; ++s) {
    Vec x(3);
    for (int i = 0; i < 3; ++i) x[i] = std::uniform_real_distribution<double>(b.lo[i], b.hi[i])(rng);
    Vec lhs = pair.gamma.M() * d.f(x, p);
    Vec rhs = d.f(pair.gamma(x), pv);
    rep.max_residual = std::max(rep.max_residual, (lhs - rhs).cwiseAbs().maxCoeff());
  }
  rep.pass = rep.max_residual <= tol;
  return rep;
}

// sup_t |gamma(xi(x0, p, t)) - xi(gamma(x0), rho(p), t)|
inline double solution_transport_error(const Dynamics& d, const SymmetryPair& pair, const Vec& x0, const Vec& p,
                                       double T, double dt) {
  Trajectory a = simulate(d, x0, p, T, dt);
  Trajectory b = simulate(d, pair.gamma(x0), pair.rho(p), T, dt);
  double err = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    err = std::max(err, (pair.gamma(a.x[i]) - b.x[i]).cwiseAbs().maxCoeff());
  return err;
}

// Construction-time gate: every mode's pair must be an invertible symmetry.
inline void validate_map(const VirtualMap& phi, const Dynamics& d, const std::vector<Vec>& modes, double tol = 1e-6,
                         int samples = 100, std::uint64_t seed = 7) {
  for (std::size_t i = 0; i < modes.size(); ++i) {
    SymmetryPair pr = phi(modes[i]);
    if (pr.gamma.dim() != 3 || pr.rho.dim() != modes[i].size())
      throw DimensionMismatch("virtual map dimensions do not match the automaton");
    AffineMap id = pr.gamma.after(pr.gamma_inv);
    if (!id.approx_equal(AffineMap::identity(3), 1e-9))
      throw SymmetryCheckFailed("gamma and its inverse do not compose to the identity");
    auto rep = check_equivariance(d, pr, modes[i], samples, seed + i, tol);
    if (!rep.pass)
      throw SymmetryCheckFailed("mode " + std::to_string(i) + " fails equivariance, residual " +
                                std::to_string(rep.max_residual));
  }
}

}  // namespace symreach
