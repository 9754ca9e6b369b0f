#include "sport/physics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "sport/error.hpp"

namespace sport::physics {

using geometry::Vec2;
using geometry::Vec3;

double penetration_depth(const OrientedBox& a, const OrientedBox& b) {
  // Fixed argument order keeps the result bit-identical under swapping (fused
  // multiply-adds make cross(a, b) and -cross(b, a) differ in the last bit).
  auto key = [](const OrientedBox& x) {
    return std::tuple(x.center.x, x.center.y, x.center.z, x.half_extents.x, x.half_extents.y, x.half_extents.z,
                      x.rotation.matrix().m);
  };
  if (key(b) < key(a)) return penetration_depth(b, a);
  std::array<Vec3, 15> axes;
  std::size_t n = 0;
  for (int i = 0; i < 3; ++i) axes[n++] = a.axis(i);
  for (int i = 0; i < 3; ++i) axes[n++] = b.axis(i);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const Vec3 c = geometry::cross(a.axis(i), b.axis(j));
      const double len = geometry::norm(c);
      // Parallel edge pairs are already covered by the face axes.
      if (len > 1e-9) axes[n++] = c / len;
    }
  const Vec3 d = b.center - a.center;
  double depth = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3& l = axes[k];
    double ra = 0, rb = 0;
    for (int i = 0; i < 3; ++i) {
      ra += a.half_extents[i] * std::abs(geometry::dot(a.axis(i), l));
      rb += b.half_extents[i] * std::abs(geometry::dot(b.axis(i), l));
    }
    depth = std::min(depth, ra + rb - std::abs(geometry::dot(d, l)));
  }
  return depth;
}

Polygon footprint(const OrientedBox& box) {
  std::vector<Vec2> pts;
  for (const auto& c : box.corners()) pts.push_back({c.x, c.y});
  return geometry::convex_hull(std::move(pts));
}

namespace {

constexpr double kRestEps = 1e-9;
constexpr double kMinOverlapArea = 1e-10;

bool footprints_overlap(const OrientedBox& a, const OrientedBox& b) {
  return geometry::polygon_area(geometry::clip_convex(footprint(a), footprint(b))) > kMinOverlapArea;
}

void shift_z(scene::SceneObject& obj, double dz) { obj.pose.translation.z += dz; }

/// Corners within `tol` of the extreme height, projected to the table plane.
Polygon face_polygon(const OrientedBox& box, bool bottom, double tol) {
  const double ref = bottom ? box.min_z() : box.max_z();
  std::vector<Vec2> pts;
  for (const auto& c : box.corners())
    if (bottom ? c.z <= ref + tol : c.z >= ref - tol) pts.push_back({c.x, c.y});
  return geometry::convex_hull(std::move(pts));
}

}  // namespace

Scene settle(const Scene& input) {
  Scene out = input;
  const std::size_t n = out.objects.size();
  std::vector<double> bottoms(n);
  for (std::size_t i = 0; i < n; ++i) bottoms[i] = out.objects[i].world_box().min_z();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return bottoms[a] < bottoms[b]; });

  std::vector<std::size_t> done;
  for (std::size_t i : order) {
    const OrientedBox box = out.objects[i].world_box();
    const double bottom = box.min_z();
    double land = 0.0;
    for (std::size_t j : done) {
      const OrientedBox other = out.objects[j].world_box();
      const double top = other.max_z();
      if (top > bottom + kRestEps || top <= land) continue;
      if (footprints_overlap(box, other)) land = top;
    }
    if (std::abs(bottom - land) > kRestEps) shift_z(out.objects[i], land - bottom);
    done.push_back(i);
  }
  return out;
}

Scene place_object(const Scene& input, std::size_t index, double snap) {
  Scene out = input;
  const OrientedBox box = out.objects.at(index).world_box();
  const double bottom = box.min_z();
  double land = 0.0;
  for (std::size_t j = 0; j < out.objects.size(); ++j) {
    if (j == index) continue;
    const OrientedBox other = out.objects[j].world_box();
    const double top = other.max_z();
    if (top > bottom + snap || top <= land) continue;
    if (footprints_overlap(box, other)) land = top;
  }
  if (std::abs(bottom - land) > kRestEps) shift_z(out.objects[index], land - bottom);
  return out;
}

CollisionResult collision_check(const Scene& scene, double tolerance) {
  CollisionResult result;
  const auto boxes = scene.world_boxes();
  for (std::size_t i = 0; i < boxes.size(); ++i)
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      const double depth = penetration_depth(boxes[i], boxes[j]);
      if (depth > tolerance) result.pairs.push_back({i, j, depth});
    }
  result.collision_free = result.pairs.empty();
  return result;
}

StabilityResult stability_check(const Scene& scene, const PhysicsParams& params) {
  StabilityResult result;
  const auto boxes = scene.world_boxes();
  const auto& ws = scene.workspace;
  const Polygon table{{ws.x_min, ws.y_min}, {ws.x_max, ws.y_min}, {ws.x_max, ws.y_max}, {ws.x_min, ws.y_max}};
  const double tol = params.contact_tolerance;

  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const OrientedBox& box = boxes[i];
    const double bottom = box.min_z();
    const Polygon contact = face_polygon(box, true, tol);
    std::vector<Vec2> support_pts;
    if (contact.size() >= 3) {
      auto add_region = [&](const Polygon& support) {
        const Polygon region = geometry::clip_convex(contact, support);
        if (geometry::polygon_area(region) > kMinOverlapArea)
          support_pts.insert(support_pts.end(), region.begin(), region.end());
      };
      if (std::abs(bottom) <= tol) add_region(table);
      for (std::size_t j = 0; j < boxes.size(); ++j) {
        if (j == i) continue;
        if (std::abs(bottom - boxes[j].max_z()) <= tol) add_region(face_polygon(boxes[j], false, tol));
      }
    }
    const Polygon support = geometry::convex_hull(std::move(support_pts));
    const double margin = geometry::inside_margin(support, {box.center.x, box.center.y});
    if (!(margin >= params.stability_margin)) result.unstable.push_back(i);
  }
  result.stable = result.unstable.empty();
  return result;
}

DisplacementResult displacement_check(const Scene& before, const Scene& after, std::size_t movable, double threshold) {
  if (before.objects.size() != after.objects.size())
    throw SceneMismatch("scenes hold different numbers of objects");
  for (std::size_t i = 0; i < before.objects.size(); ++i)
    if (before.objects[i].model.id != after.objects[i].model.id)
      throw SceneMismatch("object " + std::to_string(i) + " differs between scenes");
  DisplacementResult result;
  for (std::size_t i = 0; i < before.objects.size(); ++i) {
    if (i == movable) continue;
    const double d = geometry::norm(after.objects[i].pose.translation - before.objects[i].pose.translation);
    if (d > threshold) result.objects.push_back({i, d});
  }
  result.displaced = !result.objects.empty();
  return result;
}

ValidityReport validate_placement(const Scene& goal, const Scene& pre_placement, std::size_t movable,
                                  const PhysicsParams& params) {
  ValidityReport report;
  const auto collision = collision_check(goal, params.penetration_tolerance);
  report.collision_free = collision.collision_free;
  report.colliding_pairs = collision.pairs;
  const auto stability = stability_check(goal, params);
  report.stable = stability.stable;
  report.unstable_objects = stability.unstable;
  const auto displacement = displacement_check(pre_placement, goal, movable, params.displacement_threshold);
  report.displaced = displacement.displaced;
  report.displaced_objects = displacement.objects;
  return report;
}

nlohmann::json ValidityReport::to_json() const {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : colliding_pairs) pairs.push_back({{"a", p.a}, {"b", p.b}, {"depth", p.depth}});
  nlohmann::json displaced_list = nlohmann::json::array();
  for (const auto& d : displaced_objects)
    displaced_list.push_back({{"index", d.index}, {"displacement", d.displacement}});
  return {{"collision_free", collision_free}, {"colliding_pairs", pairs},
          {"stable", stable},                 {"unstable_objects", unstable_objects},
          {"displaced", displaced},           {"displaced_objects", displaced_list}};
}

}  // namespace sport::physics
