#include <algorithm>
#include <atomic>
#include <mutex>
#include <cmath>
#include <numbers>
#include <optional>
#include <set>
#include <thread>

#include "sport/datagen.hpp"
#include "sport/error.hpp"
#include "sport/rng.hpp"

namespace sport::datagen {

using geometry::OrientedBox;
using geometry::Pose;
using geometry::RotationMatrix;
using scene::Role;
using scene::SceneObject;

std::vector<std::string> Instance::descriptors() const {
  std::vector<std::string> out;
  for (const auto& o : initial_scene.objects) out.push_back(scene::descriptor(o.model));
  return out;
}

namespace {

// Streams derived from an attempt seed.
enum Stream : std::uint64_t { kLayout = 1, kGoal = 2, kText = 3, kView = 100 };

double xy_radius(const ObjectModel& m) { return std::hypot(m.half_extents.x, m.half_extents.y); }

// Separation of at least `gap` along some separating axis.
bool separated(const OrientedBox& a, const OrientedBox& b, double gap) {
  return physics::penetration_depth(a, b) <= -gap;
}

std::optional<std::vector<ObjectModel>> pick_models(std::span<const ObjectModel> catalog, int n, Rng& rng) {
  std::vector<std::size_t> idx(catalog.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Partial Fisher-Yates: walk a random permutation until n models with
  // distinct descriptors are found.
  std::vector<ObjectModel> out;
  std::set<std::string> used;
  for (std::size_t i = 0; i < idx.size() && static_cast<int>(out.size()) < n; ++i) {
    const std::size_t j = i + rng.index(idx.size() - i);
    std::swap(idx[i], idx[j]);
    const auto& m = catalog[idx[i]];
    if (used.insert(scene::descriptor(m)).second) out.push_back(m);
  }
  if (static_cast<int>(out.size()) < n) return std::nullopt;
  return out;
}

std::optional<Scene> initial_layout(const std::vector<ObjectModel>& models, const std::vector<Role>& roles,
                                    const scene::Workspace& ws, double clearance, double max_yaw, Rng& rng) {
  Scene s;
  s.workspace = ws;
  s.camera = scene::default_camera(ws);
  std::vector<OrientedBox> placed;
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto& m = models[k];
    const double r = xy_radius(m);
    if (ws.x_max - ws.x_min <= 2 * r || ws.y_max - ws.y_min <= 2 * r) return std::nullopt;
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      Pose pose;
      pose.translation = {rng.uniform(ws.x_min + r, ws.x_max - r), rng.uniform(ws.y_min + r, ws.y_max - r),
                          m.half_extents.z};
      pose.rotation = RotationMatrix::about_z(rng.uniform(-max_yaw, max_yaw));
      const OrientedBox box = m.proxy().transformed(pose);
      ok = std::all_of(placed.begin(), placed.end(), [&](const OrientedBox& o) { return separated(box, o, clearance); });
      if (ok) {
        placed.push_back(box);
        s.objects.push_back({m, pose, roles[k]});
      }
    }
    if (!ok) return std::nullopt;
  }
  return s;
}

// Height the movable (at `xy`, fixed yaw) comes to rest at when dropped from
// above the scene, and the index of what it rests on (npos for the table).
std::pair<double, std::size_t> drop_height(const Scene& s, std::size_t movable, double x, double y) {
  Scene probe = s;
  auto& obj = probe.objects[movable];
  obj.pose.translation = {x, y, 10.0};
  probe = physics::place_object(probe, movable, 1e9);
  const double land = probe.objects[movable].world_box().min_z();
  // Snap the rounding residue of the drop onto the exact support height.
  if (land <= 1e-9) return {0.0, std::string::npos};
  for (std::size_t j = 0; j < probe.objects.size(); ++j) {
    if (j == movable) continue;
    const double top = probe.objects[j].world_box().max_z();
    if (std::abs(top - land) <= 1e-9) return {top, j};
  }
  return {land, std::string::npos};
}

std::vector<PointCloud> object_views(const Scene& s, std::uint64_t seed, const GenerationConfig& cfg) {
  const auto boxes = s.world_boxes();
  std::vector<PointCloud> clouds;
  for (std::size_t k = 0; k < s.objects.size(); ++k) {
    std::vector<OrientedBox> occluders;
    for (std::size_t j = 0; j < boxes.size(); ++j)
      if (j != k) occluders.push_back(boxes[j]);
    const auto& obj = s.objects[k];
    PointCloud view = geometry::partial_view(obj.model.proxy(), obj.pose, s.camera,
                                             {cfg.view_samples, derive_seed(seed, kView + k)}, occluders);
    PointCloud cloud = geometry::farthest_point_sample(view, cfg.cloud_points, derive_seed(seed, kView + k));
    // Stored as float32 on disk; round now so in-memory and on-disk agree.
    const geometry::Vec3 rgb{static_cast<float>(obj.model.color.x), static_cast<float>(obj.model.color.y),
                             static_cast<float>(obj.model.color.z)};
    for (auto& p : cloud.points) p = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
    cloud.colors.assign(cloud.points.size(), rgb);
    clouds.push_back(std::move(cloud));
  }
  return clouds;
}

std::optional<Instance> try_generate(std::span<const ObjectModel> catalog, Relation relation, int n_objects,
                                     std::uint64_t seed, const GenerationConfig& cfg, const TemplateBank& bank) {
  const int nref = scene::reference_count(relation);
  Rng layout_rng(derive_seed(seed, kLayout));

  auto models = pick_models(catalog, n_objects, layout_rng);
  if (!models) return std::nullopt;
  std::vector<Role> roles(static_cast<std::size_t>(n_objects), Role::Irrelevant);
  roles[0] = Role::Movable;
  for (int r = 1; r <= nref; ++r) roles[static_cast<std::size_t>(r)] = Role::Reference;
  // Models are already in random order; the role slots keep mention order for
  // the references.

  auto initial = initial_layout(*models, roles, scene::Workspace{}, cfg.clearance, cfg.max_yaw, layout_rng);
  if (!initial) return std::nullopt;
  Scene init = physics::settle(*initial);
  if (!physics::collision_check(init, cfg.physics.penetration_tolerance).collision_free) return std::nullopt;
  if (!physics::stability_check(init, cfg.physics).stable) return std::nullopt;

  // Shuffle list order so the movable is not always first.
  std::vector<std::size_t> order(init.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[layout_rng.index(i)]);
  Scene shuffled = init;
  for (std::size_t i = 0; i < order.size(); ++i) shuffled.objects[i] = init.objects[order[i]];
  init = std::move(shuffled);

  std::size_t movable = 0;
  std::vector<std::size_t> references(static_cast<std::size_t>(nref));
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] == 0) movable = i;
    else if (order[i] <= static_cast<std::size_t>(nref)) references[order[i] - 1] = i;
  }

  // Goal: re-place the movable with a fresh yaw.
  Rng goal_rng(derive_seed(seed, kGoal));
  Scene goal = init;
  auto& mov = goal.objects[movable];
  mov.pose.rotation = RotationMatrix::about_z(goal_rng.uniform(-cfg.max_yaw, cfg.max_yaw));

  scene::RegionSampleRequest req;
  req.relation = relation;
  for (auto r : references) req.refs.push_back(init.objects[r].world_box());
  req.delta = cfg.delta;
  req.r_min = cfg.r_min;
  req.r_max = cfg.r_max;
  req.workspace = goal.workspace;
  req.workspace_margin = xy_radius(mov.model);
  req.max_attempts = 300;
  const double lift = mov.pose.translation.z - mov.world_box().min_z();
  std::optional<Scene> accepted;
  req.resting_height = [&](double x, double y) { return drop_height(goal, movable, x, y).first; };
  req.accept = [&](const geometry::Vec3& base) {
    const auto [land, support] = drop_height(goal, movable, base.x, base.y);
    // Planar relations rest on the table; OnTopOf rests on the reference.
    if (relation == Relation::OnTopOf ? support != references[0] : land != 0.0) return false;
    Scene cand = goal;
    cand.objects[movable].pose.translation = {base.x, base.y, land + lift};
    const OrientedBox box = cand.objects[movable].world_box();
    for (std::size_t j = 0; j < cand.objects.size(); ++j) {
      if (j == movable || j == support) continue;
      if (!separated(box, cand.objects[j].world_box(), cfg.clearance)) return false;
    }
    if (!physics::validate_placement(cand, init, movable, cfg.physics).valid()) return false;
    accepted = std::move(cand);
    return true;
  };
  try {
    scene::relation_region_sample(req, goal_rng);
  } catch (const RegionSamplingExhausted&) {
    return std::nullopt;
  }
  goal = physics::settle(*accepted);
  if (!physics::validate_placement(goal, init, movable, cfg.physics).valid()) return std::nullopt;
  {
    std::vector<OrientedBox> refs;
    for (auto r : references) refs.push_back(goal.objects[r].world_box());
    const auto rels = scene::classify_pose(goal.objects[movable].world_box(), refs, cfg.delta);
    if (std::find(rels.begin(), rels.end(), relation) == rels.end()) return std::nullopt;
  }

  Instance inst;
  inst.initial_scene = std::move(init);
  inst.goal_scene = std::move(goal);
  inst.relation = relation;
  inst.movable = movable;
  inst.references = references;
  try {
    inst.clouds = object_views(inst.initial_scene, seed, cfg);
  } catch (const NoVisiblePoints&) {
    return std::nullopt;
  }
  const auto desc = inst.descriptors();
  std::vector<std::string> ref_desc;
  for (auto r : references) ref_desc.push_back(desc[r]);
  inst.instruction = generate_instruction(desc[movable], ref_desc, relation, bank, derive_seed(seed, kText));
  return inst;
}

}  // namespace

std::vector<PointCloud> render_clouds(const Scene& scene, std::uint64_t seed, const GenerationConfig& config) {
  return object_views(scene, seed, config);
}

Instance generate_instance(std::span<const ObjectModel> catalog, Relation relation, int n_objects,
                           std::uint64_t seed, const GenerationConfig& config, const TemplateBank& bank) {
  const int nref = scene::reference_count(relation);
  if (n_objects < 1 + nref || n_objects > 10)
    throw std::invalid_argument("object count out of range for the relation");
  if (catalog.size() < static_cast<std::size_t>(n_objects))
    throw std::invalid_argument("catalog holds fewer models than requested objects");
  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    if (auto inst = try_generate(catalog, relation, n_objects, derive_seed(seed, static_cast<std::uint64_t>(attempt)),
                                 config, bank))
      return std::move(*inst);
  }
  throw GenerationExhausted("no valid instance after " + std::to_string(config.max_retries) + " attempts");
}

std::vector<Instance> generate_dataset(std::span<const ObjectModel> catalog, const DatasetSpec& spec, unsigned jobs) {
  if (spec.relations.empty()) throw std::invalid_argument("no relations requested");
  if (spec.min_irrelevant < 0 || spec.max_irrelevant < spec.min_irrelevant)
    throw std::invalid_argument("bad irrelevant-object range");
  if (spec.max_objects > 0) {
    if (spec.min_objects > spec.max_objects || spec.max_objects > 10)
      throw std::invalid_argument("bad object-count range");
    for (Relation r : spec.relations)
      if (spec.min_objects < 1 + scene::reference_count(r))
        throw std::invalid_argument("object-count range too small for relation " + std::string(scene::to_string(r)));
  }
  std::vector<std::optional<Instance>> out(spec.count);
  auto make = [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(spec.master_seed, i);
    Rng rng(derive_seed(seed, 0xC0FFEE));
    const Relation rel =
        spec.balanced ? spec.relations[i % spec.relations.size()] : spec.relations[rng.index(spec.relations.size())];
    int n_objects = 0;
    if (spec.max_objects > 0) {
      n_objects = spec.min_objects + static_cast<int>(rng.index(static_cast<std::size_t>(spec.max_objects - spec.min_objects + 1)));
    } else {
      const int irrelevant = spec.min_irrelevant +
                             static_cast<int>(rng.index(static_cast<std::size_t>(spec.max_irrelevant - spec.min_irrelevant + 1)));
      n_objects = 1 + scene::reference_count(rel) + irrelevant;
    }
    Instance inst = generate_instance(catalog, rel, n_objects, seed, spec.generation);
    inst.id = i;
    out[i] = std::move(inst);
  };
  jobs = std::max(1u, jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < spec.count; ++i) make(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < jobs; ++w)
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < spec.count; i = next++) {
          try {
            make(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            next = spec.count;
          }
        }
      });
    for (auto& t : workers) t.join();
    if (error) std::rethrow_exception(error);
  }
  std::vector<Instance> result;
  result.reserve(spec.count);
  for (auto& o : out) result.push_back(std::move(*o));
  return result;
}

}  // namespace sport::datagen
