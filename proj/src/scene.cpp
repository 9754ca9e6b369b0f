#include "sport/scene.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "sport/error.hpp"
#include "sport/polygon.hpp"

namespace sport::scene {

using geometry::Mat3;
using geometry::RotationMatrix;

namespace {

constexpr std::array<NamedColor, 12> kPalette{{
    {"red", {0.85, 0.15, 0.15}},
    {"green", {0.2, 0.7, 0.25}},
    {"blue", {0.15, 0.3, 0.85}},
    {"yellow", {0.95, 0.85, 0.15}},
    {"orange", {0.95, 0.55, 0.1}},
    {"purple", {0.55, 0.25, 0.7}},
    {"pink", {0.95, 0.5, 0.7}},
    {"brown", {0.55, 0.35, 0.2}},
    {"white", {0.95, 0.95, 0.95}},
    {"black", {0.1, 0.1, 0.1}},
    {"gray", {0.5, 0.5, 0.5}},
    {"cyan", {0.2, 0.8, 0.85}},
}};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::Movable: return "movable";
    case Role::Reference: return "reference";
    case Role::Irrelevant: return "irrelevant";
  }
  return "irrelevant";
}

std::string_view to_string(Relation relation) {
  switch (relation) {
    case Relation::Left: return "left";
    case Relation::Right: return "right";
    case Relation::Front: return "front";
    case Relation::Behind: return "behind";
    case Relation::OnTopOf: return "on_top_of";
    case Relation::Between: return "between";
  }
  return "left";
}

std::optional<Role> role_from_string(std::string_view s) {
  const std::string l = lower(s);
  for (Role r : {Role::Movable, Role::Reference, Role::Irrelevant})
    if (to_string(r) == l) return r;
  return std::nullopt;
}

std::optional<Relation> relation_from_string(std::string_view s) {
  const std::string l = lower(s);
  for (Relation r : kAllRelations)
    if (to_string(r) == l) return r;
  return std::nullopt;
}

int reference_count(Relation relation) { return relation == Relation::Between ? 2 : 1; }

std::span<const NamedColor> palette() { return kPalette; }

std::string color_name(const Vec3& rgb) {
  const NamedColor* best = &kPalette[0];
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& c : kPalette) {
    const Vec3 d = c.rgb - rgb;
    const double dd = geometry::dot(d, d);
    if (dd < best_d) {
      best_d = dd;
      best = &c;
    }
  }
  return std::string(best->name);
}

std::string descriptor(const ObjectModel& model) { return color_name(model.color) + " " + model.category; }

CameraPose default_camera(const Workspace& ws) {
  const double cx = 0.5 * (ws.x_min + ws.x_max);
  const double cy = 0.5 * (ws.y_min + ws.y_max);
  return CameraPose::look_at({cx, ws.y_min - 0.55, 0.75}, {cx, cy, 0.0}, {0, 0, 1}, 100.0, 128, 128);
}

std::vector<OrientedBox> Scene::world_boxes() const {
  std::vector<OrientedBox> boxes;
  boxes.reserve(objects.size());
  for (const auto& o : objects) boxes.push_back(o.world_box());
  return boxes;
}

// ---------------------------------------------------------------------------
// Relation regions

Vec3 base_point(const OrientedBox& box) { return {box.center.x, box.center.y, box.min_z()}; }

namespace {

void check_refs(Relation relation, std::span<const OrientedBox> refs) {
  if (static_cast<int>(refs.size()) != reference_count(relation))
    throw std::invalid_argument("relation " + std::string(to_string(relation)) + " needs " +
                                std::to_string(reference_count(relation)) + " reference(s)");
}

/// Unit axis of the planar cone in the reference frame.
geometry::Vec2 cone_axis(Relation relation) {
  switch (relation) {
    case Relation::Left: return {-1, 0};
    case Relation::Right: return {1, 0};
    case Relation::Front: return {0, -1};
    case Relation::Behind: return {0, 1};
    default: return {0, 0};
  }
}

bool is_planar(Relation r) {
  return r == Relation::Left || r == Relation::Right || r == Relation::Front || r == Relation::Behind;
}

}  // namespace

bool relation_region_contains(Relation relation, std::span<const OrientedBox> refs, const Vec3& query,
                              double delta) {
  check_refs(relation, refs);
  if (relation == Relation::Between) {
    const Vec3 a = refs[0].center;
    const Vec3 b = refs[1].center;
    const double mx = 0.5 * (a.x + b.x), my = 0.5 * (a.y + b.y);
    const double d = std::hypot(a.x - b.x, a.y - b.y);
    return std::hypot(query.x - mx, query.y - my) < delta * d;
  }
  const OrientedBox& ref = refs[0];
  const Vec3 local = ref.rotation.transposed() * (query - ref.center);
  if (relation == Relation::OnTopOf) {
    // The 1e-9 slack absorbs rounding when a resting height is recomputed.
    const double top = ref.max_z();
    return std::abs(local.x) <= ref.half_extents.x && std::abs(local.y) <= ref.half_extents.y &&
           query.z >= top - 1e-9 && query.z <= top + kOnTopBand;
  }
  const double r = std::hypot(local.x, local.y);
  if (!(r > 0.0)) throw ZeroDistance("query coincides with the reference origin");
  const geometry::Vec2 axis = cone_axis(relation);
  // Along-axis cosine must exceed delta; the off-axis component must stay below it.
  const double along = (axis.x * local.x + axis.y * local.y) / r;
  const double across = std::abs(axis.x * local.y - axis.y * local.x) / r;
  return along > delta && across < delta;
}

Vec3 relation_region_sample(const RegionSampleRequest& req, Rng& rng) {
  check_refs(req.relation, req.refs);
  if (is_planar(req.relation) && !(req.r_min < req.r_max))
    throw std::invalid_argument("relation_region_sample: r_min must be below r_max");
  const OrientedBox& ref = req.refs[0];
  const geometry::Vec2 axis = cone_axis(req.relation);
  const double half_angle = std::min(std::acos(std::clamp(req.delta, -1.0, 1.0)),
                                     std::asin(std::clamp(req.delta, -1.0, 1.0)));

  for (int attempt = 0; attempt < req.max_attempts; ++attempt) {
    Vec3 world;
    if (req.relation == Relation::Between) {
      const Vec3 a = req.refs[0].center;
      const Vec3 b = req.refs[1].center;
      const double radius = req.delta * std::hypot(a.x - b.x, a.y - b.y);
      const double rr = radius * std::sqrt(rng.uniform());
      const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      world = {0.5 * (a.x + b.x) + rr * std::cos(phi), 0.5 * (a.y + b.y) + rr * std::sin(phi), 0.0};
    } else {
      Vec3 local;
      if (req.relation == Relation::OnTopOf) {
        local = {rng.uniform(-ref.half_extents.x, ref.half_extents.x),
                 rng.uniform(-ref.half_extents.y, ref.half_extents.y), 0.0};
      } else {
        const double r = rng.uniform(req.r_min, req.r_max);
        const double phi = std::atan2(axis.y, axis.x) + rng.uniform(-half_angle, half_angle);
        local = {r * std::cos(phi), r * std::sin(phi), 0.0};
      }
      world = ref.center + ref.rotation * local;
    }
    if (req.resting_height) {
      world.z = req.resting_height(world.x, world.y);
    } else {
      world.z = req.relation == Relation::OnTopOf ? ref.max_z() : 0.0;
    }
    if (req.workspace && !req.workspace->contains_xy(world.x, world.y, req.workspace_margin)) continue;
    bool inside = false;
    try {
      inside = relation_region_contains(req.relation, req.refs, world, req.delta);
    } catch (const ZeroDistance&) {
      inside = false;
    }
    if (!inside) continue;
    if (req.accept && !req.accept(world)) continue;
    return world;
  }
  throw RegionSamplingExhausted("no sample for relation " + std::string(to_string(req.relation)) + " after " +
                                std::to_string(req.max_attempts) + " attempts");
}

std::vector<Relation> classify_pose(const OrientedBox& movable, std::span<const OrientedBox> refs, double delta) {
  std::vector<Relation> out;
  const Vec3 q = base_point(movable);
  for (Relation r : kAllRelations) {
    if (reference_count(r) != static_cast<int>(refs.size())) continue;
    try {
      if (relation_region_contains(r, refs, q, delta)) out.push_back(r);
    } catch (const ZeroDistance&) {
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

using nlohmann::json;

namespace {

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

json to_json(const Pose& pose) {
  json rot = json::array();
  for (double v : pose.rotation.matrix().m) rot.push_back(v);
  return {{"translation", vec_json(pose.translation)}, {"rotation", rot}};
}

Pose pose_from_json(const json& j) {
  try {
    const auto& rot = j.at("rotation");
    if (!rot.is_array() || rot.size() != 9) throw FormatError("rotation must have 9 entries");
    Mat3 m;
    for (std::size_t i = 0; i < 9; ++i) m.m[i] = rot[i].get<double>();
    return {vec_from(j.at("translation")), RotationMatrix::from_matrix(m)};
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad pose: ") + e.what());
  } catch (const DegenerateRotation&) {
    throw FormatError("bad pose: rotation is not orthonormal");
  }
}

json to_json(const CameraPose& c) {
  return {{"pose", to_json(c.pose)}, {"focal", c.focal}, {"width", c.width}, {"height", c.height}};
}

CameraPose camera_from_json(const json& j) {
  try {
    CameraPose c;
    c.pose = pose_from_json(j.at("pose"));
    c.focal = j.at("focal").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    if (!(c.focal > 0) || c.width < 1 || c.height < 1) throw FormatError("bad camera intrinsics");
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad camera: ") + e.what());
  }
}

json to_json(const Workspace& ws) {
  return {{"x_min", ws.x_min}, {"x_max", ws.x_max}, {"y_min", ws.y_min}, {"y_max", ws.y_max}, {"z_max", ws.z_max}};
}

Workspace workspace_from_json(const json& j) {
  try {
    Workspace ws{j.at("x_min").get<double>(), j.at("x_max").get<double>(), j.at("y_min").get<double>(),
                 j.at("y_max").get<double>(), j.at("z_max").get<double>()};
    if (!(ws.x_max > ws.x_min) || !(ws.y_max > ws.y_min) || !(ws.z_max > 0))
      throw FormatError("workspace extents must be positive");
    return ws;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad workspace: ") + e.what());
  }
}

json to_json(const ObjectModel& m) {
  return {{"id", m.id}, {"category", m.category}, {"half_extents", vec_json(m.half_extents)}, {"rgb", vec_json(m.color)}};
}

ObjectModel model_from_json(const json& j) {
  try {
    ObjectModel m{j.at("id").get<std::string>(), j.at("category").get<std::string>(), vec_from(j.at("half_extents")),
                  vec_from(j.at("rgb"))};
    if (!(m.half_extents.x > 0 && m.half_extents.y > 0 && m.half_extents.z > 0))
      throw FormatError("model " + m.id + ": half extents must be positive");
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad object model: ") + e.what());
  }
}

json to_json(const Scene& s) {
  json objects = json::array();
  for (const auto& o : s.objects)
    objects.push_back({{"model", to_json(o.model)}, {"pose", to_json(o.pose)}, {"role", std::string(to_string(o.role))}});
  return {{"workspace", to_json(s.workspace)}, {"camera", to_json(s.camera)}, {"objects", objects}};
}

Scene scene_from_json(const json& j) {
  try {
    Scene s;
    s.workspace = workspace_from_json(j.at("workspace"));
    s.camera = camera_from_json(j.at("camera"));
    for (const auto& o : j.at("objects")) {
      SceneObject so;
      so.model = model_from_json(o.at("model"));
      so.pose = pose_from_json(o.at("pose"));
      const auto role = role_from_string(o.value("role", std::string("irrelevant")));
      if (!role) throw FormatError("unknown role in scene file");
      so.role = *role;
      s.objects.push_back(std::move(so));
    }
    if (s.objects.size() < 2 || s.objects.size() > 10) throw FormatError("scene must hold 2 to 10 objects");
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad scene: ") + e.what());
  }
}

json catalog_to_json(std::span<const ObjectModel> catalog) {
  json arr = json::array();
  for (const auto& m : catalog) arr.push_back(to_json(m));
  return arr;
}

std::vector<ObjectModel> catalog_from_json(const json& j) {
  if (!j.is_array()) throw FormatError("catalog must be a JSON array");
  std::vector<ObjectModel> out;
  for (const auto& m : j) out.push_back(model_from_json(m));
  return out;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("malformed JSON in " + path + ": " + e.what());
  }
}

}  // namespace sport::scene
