#pragma once

#include "symreach/geom.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace symreach {

struct NumericalBlowup : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DynamicsId { Robot, Linear3D };

inline std::string to_string(DynamicsId d) { return d == DynamicsId::Robot ? "robot" : "linear3d"; }

inline DynamicsId dynamics_from_string(const std::string& s) {
  if (s == "robot") return DynamicsId::Robot;
  if (s == "linear3d") return DynamicsId::Linear3D;
  throw std::invalid_argument("unknown dynamics: " + s);
}

// Constants of the two models. rates are the diagonal of the linear system.
struct DynamicsParams {
  double v = 1.0;
  double L = 1.0;
  std::array<double, 3> rates{-3.0, -3.0, -1.0};
};

// Both models are 3-state systems steered towards a target point that is
// the trailing block of the mode vector: the waypoint itself, or the
// destination of a road [src, dst].
struct Dynamics {
  DynamicsId id = DynamicsId::Robot;
  DynamicsParams params;

  int state_dim() const { return 3; }
  int target_dim() const { return id == DynamicsId::Robot ? 2 : 3; }

  // Period of each state coordinate (0 for none). The robot heading enters
  // only through sin/cos, so the vector field repeats every full turn.
  Vec periods() const {
    Vec p = Vec::Zero(3);
    if (id == DynamicsId::Robot) p[2] = 2 * std::numbers::pi;
    return p;
  }

  void eval(const double* x, const double* target, double* dx) const {
    if (id == DynamicsId::Robot) {
      double alpha = std::atan2(target[1] - x[1], target[0] - x[0]) - x[2];
      dx[0] = params.v * std::cos(x[2]);
      dx[1] = params.v * std::sin(x[2]);
      dx[2] = 2.0 * params.v * std::sin(alpha) / params.L;
    } else {
      for (int i = 0; i < 3; ++i) dx[i] = params.rates[i] * (x[i] - target[i]);
    }
  }

  Vec target_of(const Vec& p) const {
    int k = target_dim();
    if (p.size() < k || p.size() % k != 0)
      throw DimensionMismatch("mode vector of size " + std::to_string(p.size()) +
                              " does not fit dynamics " + to_string(id));
    return p.tail(k);
  }

  Vec f(const Vec& x, const Vec& p) const {
    require_dim(x.size(), 3, "dynamics state");
    Vec t = target_of(p);
    Vec dx(3);
    eval(x.data(), t.data(), dx.data());
    return dx;
  }
};

inline Vec eval_f(const Dynamics& d, const Vec& x, const Vec& p) { return d.f(x, p); }

struct Trajectory {
  std::vector<double> t;
  std::vector<Vec> x;

  std::size_t size() const { return t.size(); }
  double duration() const { return t.empty() ? 0.0 : t.back(); }
  const Vec& last() const { return x.back(); }
};

// Number of whole RK4 steps in [0, T] and whether a shorter last step is needed.
inline std::pair<long, bool> step_plan(double T, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("time step must be positive");
  if (T < 0) throw std::invalid_argument("horizon must be non-negative");
  long n = static_cast<long>(std::floor(T / dt + 1e-9));
  bool partial = T - n * dt > 1e-12 * std::max(1.0, T);
  return {n, partial};
}

// Fixed-step RK4 writing n-dimensional states into a flat buffer; the first
// state is x0. Returns the number of states written.
inline long rk4_flat(const Dynamics& d, const double* x0, const double* target, double T, double dt,
                     std::vector<double>& out) {
  const int n = 3;
  auto [steps, partial] = step_plan(T, dt);
  long total = steps + 1 + (partial ? 1 : 0);
  out.resize(static_cast<std::size_t>(total * n));
  std::copy(x0, x0 + n, out.begin());
  double k1[3], k2[3], k3[3], k4[3], tmp[3];
  for (long s = 1; s < total; ++s) {
    double h = (s <= steps) ? dt : T - steps * dt;
    const double* x = &out[(s - 1) * n];
    double* y = &out[s * n];
    d.eval(x, target, k1);
    for (int i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
    d.eval(tmp, target, k2);
    for (int i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
    d.eval(tmp, target, k3);
    for (int i = 0; i < n; ++i) tmp[i] = x[i] + h * k3[i];
    d.eval(tmp, target, k4);
    for (int i = 0; i < n; ++i) {
      y[i] = x[i] + h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
      if (!std::isfinite(y[i]))
        throw NumericalBlowup("non-finite state at t=" + std::to_string((s - 1) * dt + h));
    }
  }
  return total;
}

inline Trajectory simulate(const Dynamics& d, const Vec& x0, const Vec& p, double T, double dt = 0.01) {
  require_dim(x0.size(), 3, "simulate initial state");
  if (!x0.allFinite()) throw NumericalBlowup("non-finite initial state");
  Vec target = d.target_of(p);
  std::vector<double> flat;
  long total = rk4_flat(d, x0.data(), target.data(), T, dt, flat);
  auto [steps, partial] = step_plan(T, dt);
  Trajectory tr;
  tr.t.reserve(total);
  tr.x.reserve(total);
  for (long s = 0; s < total; ++s) {
    tr.t.push_back(s <= steps ? s * dt : T);
    tr.x.push_back(Eigen::Map<const Vec>(&flat[s * 3], 3));
  }
  return tr;
}

}  // namespace symreach
