#pragma once

#include <vector>

namespace sport::geometry {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;
};

inline double cross2(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }

/// Convex polygon with vertices in counter-clockwise order.
using Polygon = std::vector<Vec2>;

/// Andrew's monotone chain. Collinear points are dropped; degenerate inputs
/// return fewer than three vertices.
Polygon convex_hull(std::vector<Vec2> points);

double polygon_area(const Polygon& poly);

/// Sutherland-Hodgman clip of `subject` by the convex polygon `clip`.
Polygon clip_convex(const Polygon& subject, const Polygon& clip);

/// Signed distance from p to the boundary of a convex polygon: positive inside,
/// negative outside (outside distance is to the nearest edge line, which is a
/// lower bound on the true exterior distance). Returns -inf for polygons with
/// fewer than three vertices.
double inside_margin(const Polygon& poly, const Vec2& p);

}  // namespace sport::geometry
