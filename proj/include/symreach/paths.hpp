#pragma once

#include "symreach/automaton.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace symreach {

inline Vec point2(double x, double y) {
  Vec p(2);
  p << x, y;
  return p;
}

// Roads joining consecutive points.
inline std::vector<Road> chain_roads(const std::vector<Vec>& pts) {
  std::vector<Road> out;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) out.push_back({pts[i], pts[i + 1]});
  return out;
}

struct RectangleGeometry {
  Vec start = point2(-4.5, -0.5);
  double width = 5.0;   // along the first coordinate
  double height = 3.0;  // along the second
  Vec center = point2(0.0, 0.0);
};

// Corners in visiting order: lower-left, upper-left, upper-right, lower-right.
inline std::vector<Vec> rectangle_waypoints(const RectangleGeometry& g = {}) {
  double hx = 0.5 * g.width, hy = 0.5 * g.height;
  return {g.center + point2(-hx, -hy), g.center + point2(-hx, hy), g.center + point2(hx, hy),
          g.center + point2(hx, -hy)};
}

// An approach road from the start point to the first corner, then the four
// sides; the last side closes the loop onto the first side.
inline std::vector<Road> rectangle_roads(const RectangleGeometry& g = {}) {
  auto w = rectangle_waypoints(g);
  return chain_roads({g.start, w[0], w[1], w[2], w[3], w[0]});
}

struct SGeometry {
  Vec start = point2(0.0, 0.0);
  double long_leg = 10.0;
  double short_leg = 5.0;
  int roads = 16;
};

// Right, up, left, up, right, ... starting with a full long leg.
inline std::vector<Road> s_shaped_roads(const SGeometry& g = {}) {
  std::vector<Vec> pts{g.start};
  for (int i = 0; i < g.roads; ++i) {
    Vec d = point2(0, 0);
    switch (i % 4) {
      case 0: d[0] = g.long_leg; break;
      case 1: d[1] = g.short_leg; break;
      case 2: d[0] = -g.long_leg; break;
      case 3: d[1] = g.short_leg; break;
    }
    pts.push_back(pts.back() + d);
  }
  return chain_roads(pts);
}

struct KochGeometry {
  Vec start = point2(-2.0, -1.0);
  Vec origin = point2(0.0, 0.0);
  double segment = 2.0;
};

// Headings in degrees of the 16 edges of a level-two Koch curve.
inline std::vector<double> koch_headings() {
  return {0, 60, -60, 0, 60, 120, 0, 60, -60, 0, -120, -60, 0, 60, -60, 0};
}

// Approach road from the start to the curve's origin, then the 16 edges.
inline std::vector<Road> koch_roads(const KochGeometry& g = {}) {
  std::vector<Vec> pts{g.start, g.origin};
  for (double h : koch_headings()) {
    double r = h * std::numbers::pi / 180.0;
    pts.push_back(pts.back() + g.segment * point2(std::cos(r), std::sin(r)));
  }
  return chain_roads(pts);
}

struct RandomGeometry {
  Vec start = point2(0.0, 0.0);
  int roads = 14;
  int min_length = 2;
  int max_length = 8;
  std::uint64_t seed = 1;
};

// Axis-aligned roads with integer lengths; each turn is left, right or none.
inline std::vector<Road> random_roads(const RandomGeometry& g) {
  if (g.min_length < 1 || g.max_length < g.min_length) throw std::invalid_argument("bad random road lengths");
  std::mt19937_64 rng(g.seed);
  std::uniform_int_distribution<int> len(g.min_length, g.max_length);
  std::uniform_int_distribution<int> turn(-1, 1);
  std::vector<Vec> pts{g.start};
  int heading = 0;  // quarter turns
  for (int i = 0; i < g.roads; ++i) {
    if (i > 0) heading = (heading + turn(rng) + 4) % 4;
    static const int dx[4] = {1, 0, -1, 0}, dy[4] = {0, 1, 0, -1};
    double l = len(rng);
    pts.push_back(pts.back() + point2(dx[heading] * l, dy[heading] * l));
  }
  return chain_roads(pts);
}

}  // namespace symreach
