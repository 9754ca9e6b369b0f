#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sport/geometry.hpp"
#include "sport/rng.hpp"

namespace sport::scene {

using geometry::CameraPose;
using geometry::OrientedBox;
using geometry::Pose;
using geometry::Vec3;

/// An object in the catalog: a box proxy at canonical pose (centroid at the
/// origin, identity rotation) plus appearance.
struct ObjectModel {
  std::string id;
  std::string category;
  Vec3 half_extents{0.05, 0.05, 0.05};
  Vec3 color{0.5, 0.5, 0.5};

  Vec3 canonical_size() const { return half_extents * 2.0; }
  OrientedBox proxy() const { return {{}, half_extents, {}}; }

  bool operator==(const ObjectModel&) const = default;
};

enum class Role { Movable, Reference, Irrelevant };

enum class Relation { Left, Right, Front, Behind, OnTopOf, Between };

inline constexpr std::array<Relation, 6> kAllRelations{Relation::Left,  Relation::Right,   Relation::Front,
                                                       Relation::Behind, Relation::OnTopOf, Relation::Between};

std::string_view to_string(Role role);
std::string_view to_string(Relation relation);
std::optional<Role> role_from_string(std::string_view s);
/// Accepts the canonical names ("left", "on_top_of", ...) case-insensitively.
std::optional<Relation> relation_from_string(std::string_view s);
/// 2 for Between, 1 otherwise.
int reference_count(Relation relation);

/// Nearest named palette color ("red", "blue", ...).
std::string color_name(const Vec3& rgb);
/// Palette used by the procedural catalog.
struct NamedColor {
  std::string_view name;
  Vec3 rgb;
};
std::span<const NamedColor> palette();

/// "red box": how instructions refer to an object.
std::string descriptor(const ObjectModel& model);

struct SceneObject {
  ObjectModel model;
  Pose pose;
  Role role = Role::Irrelevant;

  OrientedBox world_box() const { return model.proxy().transformed(pose); }

  bool operator==(const SceneObject&) const = default;
};

/// Axis-aligned table region. The table surface is z = 0; z_max bounds the
/// usable volume above it (used for translation normalization).
struct Workspace {
  double x_min = -0.5;
  double x_max = 0.5;
  double y_min = -0.35;
  double y_max = 0.35;
  double z_max = 0.5;

  bool contains_xy(double x, double y, double margin = 0.0) const {
    return x >= x_min + margin && x <= x_max - margin && y >= y_min + margin && y <= y_max - margin;
  }

  bool operator==(const Workspace&) const = default;
};

/// Camera looking at the table from the front (-y side), above the surface.
CameraPose default_camera(const Workspace& ws);

struct Scene {
  std::vector<SceneObject> objects;
  Workspace workspace;
  CameraPose camera = default_camera(Workspace{});

  std::vector<OrientedBox> world_boxes() const;
  bool operator==(const Scene&) const = default;
};

inline constexpr double kDefaultDelta = 0.4;
inline constexpr double kOnTopBand = 0.02;

/// Anchor used by relation predicates: centre xy, lowest z of the geometry.
Vec3 base_point(const OrientedBox& box);

/// Region predicate in the frame of the (first) reference object. `query` is a
/// base point. Throws ZeroDistance for the planar cones when the query sits on
/// the reference origin, and std::invalid_argument on a wrong reference count.
bool relation_region_contains(Relation relation, std::span<const OrientedBox> refs, const Vec3& query,
                              double delta = kDefaultDelta);

struct RegionSampleRequest {
  Relation relation = Relation::Left;
  std::vector<OrientedBox> refs;
  double delta = kDefaultDelta;
  double r_min = 0.1;
  double r_max = 0.3;
  /// If set, the base point must lie in the workspace shrunk by the margin.
  std::optional<Workspace> workspace;
  double workspace_margin = 0.0;
  /// Base z for a candidate (x, y); defaults to the table (or the reference top
  /// for OnTopOf).
  std::function<double(double x, double y)> resting_height;
  /// Extra acceptance test on the full candidate (e.g. collision checks).
  std::function<bool(const Vec3& base)> accept;
  int max_attempts = 10000;
};

/// Rejection sampler for a base point inside the relation region. Throws
/// RegionSamplingExhausted after max_attempts.
Vec3 relation_region_sample(const RegionSampleRequest& request, Rng& rng);

/// Every relation whose region contains the movable object's base point.
/// With one reference the five single-reference relations are candidates,
/// with two references only Between.
std::vector<Relation> classify_pose(const OrientedBox& movable, std::span<const OrientedBox> refs,
                                    double delta = kDefaultDelta);

// JSON ----------------------------------------------------------------------

nlohmann::json to_json(const Pose& pose);
Pose pose_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CameraPose& camera);
CameraPose camera_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Workspace& ws);
Workspace workspace_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ObjectModel& model);
ObjectModel model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

nlohmann::json catalog_to_json(std::span<const ObjectModel> catalog);
std::vector<ObjectModel> catalog_from_json(const nlohmann::json& j);

/// Helpers shared by all file writers: UTF-8 JSON with sorted keys.
void write_json_file(const nlohmann::json& j, const std::string& path);
nlohmann::json read_json_file(const std::string& path);

}  // namespace sport::scene
