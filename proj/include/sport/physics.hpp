#pragma once

#include <cstddef>
#include <vector>

#include "json.hpp"
#include "sport/polygon.hpp"
#include "sport/scene.hpp"

namespace sport::physics {

using geometry::OrientedBox;
using geometry::Polygon;
using scene::Scene;

struct PhysicsParams {
  /// Overlap below this is contact, not collision (meters).
  double penetration_tolerance = 1e-4;
  /// Non-movable objects moving more than this count as displaced (meters).
  double displacement_threshold = 5e-3;
  /// Vertical band within which faces are considered in contact (meters).
  double contact_tolerance = 5e-3;
  /// Inward shrink of the support polygon (meters).
  double stability_margin = 2e-3;
};

struct CollidingPair {
  std::size_t a = 0;
  std::size_t b = 0;
  double depth = 0.0;
  bool operator==(const CollidingPair&) const = default;
};

struct CollisionResult {
  bool collision_free = true;
  std::vector<CollidingPair> pairs;
};

struct StabilityResult {
  bool stable = true;
  std::vector<std::size_t> unstable;
};

struct DisplacedObject {
  std::size_t index = 0;
  double displacement = 0.0;
};

struct DisplacementResult {
  bool displaced = false;
  std::vector<DisplacedObject> objects;
};

struct ValidityReport {
  bool collision_free = true;
  std::vector<CollidingPair> colliding_pairs;
  bool stable = true;
  std::vector<std::size_t> unstable_objects;
  bool displaced = false;
  std::vector<DisplacedObject> displaced_objects;

  bool valid() const { return collision_free && stable && !displaced; }
  nlohmann::json to_json() const;
};

/// Separating-axis overlap of two boxes over the 15 candidate axes: the
/// smallest projected overlap. Positive means the boxes interpenetrate by that
/// depth; zero or negative means they are separated (or touching).
double penetration_depth(const OrientedBox& a, const OrientedBox& b);

/// Convex hull of the box's vertical projection.
Polygon footprint(const OrientedBox& box);

/// Drops every object straight down onto the table or onto the objects beneath
/// it. Objects are processed from the lowest to the highest (ties in list
/// order), so supports always land before what rests on them. Objects already
/// resting are left bit-for-bit unchanged.
Scene settle(const Scene& scene);

/// Moves one object vertically so its lowest point rests on the highest support
/// whose top is at most `snap` above that point (the table always counts).
/// Used to release predicted poses that hover or graze their support.
Scene place_object(const Scene& scene, std::size_t index, double snap);

CollisionResult collision_check(const Scene& scene, double tolerance = 1e-4);

/// Static support-polygon criterion: the centre of mass must project inside
/// the convex hull of the contact regions, at least `stability_margin` from
/// its boundary.
StabilityResult stability_check(const Scene& scene, const PhysicsParams& params = {});

/// Throws SceneMismatch if the scenes do not hold the same objects.
DisplacementResult displacement_check(const Scene& before, const Scene& after, std::size_t movable,
                                      double threshold = 5e-3);

ValidityReport validate_placement(const Scene& goal, const Scene& pre_placement, std::size_t movable,
                                  const PhysicsParams& params = {});

}  // namespace sport::physics
