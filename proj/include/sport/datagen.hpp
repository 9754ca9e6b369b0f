#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sport/geometry.hpp"
#include "sport/physics.hpp"
#include "sport/scene.hpp"

namespace sport::datagen {

using geometry::PointCloud;
using geometry::Vec3;
using scene::ObjectModel;
using scene::Relation;
using scene::Scene;

// Catalog ---------------------------------------------------------------------

/// An unnormalized model as it comes out of a mesh source: arbitrary scale and
/// offset.
struct RawModel {
  std::string id;
  std::string category;
  std::vector<Vec3> vertices;
  Vec3 color{0.5, 0.5, 0.5};
};

/// Category -> largest full extent in meters.
using SizeTable = std::map<std::string, double>;

/// The table bundled with the repo (data/size_table.json holds the same values).
const SizeTable& default_size_table();
nlohmann::json size_table_to_json(const SizeTable& table);
SizeTable size_table_from_json(const nlohmann::json& j);

/// Uniformly rescales each model so its largest extent matches the category
/// size and moves its bounding-box centre to the origin. Throws UnknownCategory.
std::vector<ObjectModel> preprocess_catalog(std::span<const RawModel> raw, const SizeTable& sizes);

/// Box-shaped stand-ins for a mesh library: `variants` per category with
/// jittered proportions, random scale, random offset and a palette color.
std::vector<RawModel> procedural_raw_models(std::size_t variants, std::uint64_t seed);

/// procedural_raw_models() run through preprocess_catalog() with the default
/// size table. 4 variants give 120 models.
std::vector<ObjectModel> default_catalog(std::size_t variants = 4, std::uint64_t seed = 0);

// Instructions ----------------------------------------------------------------

/// Templates use the slots {verb}, {movable}, {ref} and {ref2}.
struct TemplateBank {
  std::map<Relation, std::vector<std::string>> templates;
  std::vector<std::string> verbs;

  static const TemplateBank& standard();
};

/// Fills one template; the first letter of the result is capitalized.
std::string fill_template(std::string_view tmpl, std::string_view verb, std::string_view movable,
                          std::span<const std::string> refs);

struct ParsedInstruction {
  std::string movable;
  std::vector<std::string> references;
  Relation relation = Relation::Left;

  bool operator==(const ParsedInstruction&) const = default;
};

std::string generate_instruction(std::string_view movable, std::span<const std::string> refs, Relation relation,
                                 const TemplateBank& bank, std::uint64_t seed);

/// Matches the text against every template with the given descriptors in the
/// slots. Case and punctuation are ignored. Throws UnparseableInstruction.
ParsedInstruction parse_instruction(std::string_view text, std::span<const std::string> descriptors,
                                    const TemplateBank& bank = TemplateBank::standard());

// Instances -------------------------------------------------------------------

struct Instance {
  std::uint64_t id = 0;
  Scene initial_scene;
  Scene goal_scene;
  Relation relation = Relation::Left;
  std::size_t movable = 0;
  std::vector<std::size_t> references;
  std::string instruction;
  /// Partial views of every object in the initial scene, world frame.
  std::vector<PointCloud> clouds;

  std::vector<std::string> descriptors() const;
  bool operator==(const Instance&) const = default;
};

struct GenerationConfig {
  double delta = scene::kDefaultDelta;
  double r_min = 0.1;
  double r_max = 0.3;
  /// Free gap kept between objects in the initial scene and around the goal.
  double clearance = 0.01;
  /// Yaw is drawn from [-max_yaw, max_yaw). Below pi/4 the reference frame is
  /// recoverable from a box's point cloud (its axes are only known up to sign).
  double max_yaw = 0.7853981633974483;
  std::size_t cloud_points = 256;
  std::size_t view_samples = 2048;
  int max_retries = 100;
  physics::PhysicsParams physics;
};

/// One complete instance, deterministic in `seed`. Throws GenerationExhausted
/// after config.max_retries rejected attempts.
Instance generate_instance(std::span<const ObjectModel> catalog, Relation relation, int n_objects,
                           std::uint64_t seed, const GenerationConfig& config = {},
                           const TemplateBank& bank = TemplateBank::standard());

/// One partial-view cloud per object as seen from the scene camera, with the
/// other objects as occluders. Points and colors are rounded to float32.
/// Throws NoVisiblePoints if an object is fully hidden.
std::vector<PointCloud> render_clouds(const Scene& scene, std::uint64_t seed, const GenerationConfig& config = {});

struct DatasetSpec {
  std::size_t count = 2000;
  std::uint64_t master_seed = 0;
  std::vector<Relation> relations{scene::kAllRelations.begin(), scene::kAllRelations.end()};
  /// Cycle through the relations instead of drawing them.
  bool balanced = true;
  int min_irrelevant = 1;
  int max_irrelevant = 3;
  /// When max_objects > 0 the total object count is drawn from
  /// [min_objects, max_objects] instead of the irrelevant-object range.
  int min_objects = 0;
  int max_objects = 0;
  GenerationConfig generation;
};

/// Instance i uses seed derive_seed(master_seed, i); results do not depend on
/// `jobs`. Instances are returned in index order.
std::vector<Instance> generate_dataset(std::span<const ObjectModel> catalog, const DatasetSpec& spec,
                                       unsigned jobs = 1);

// Serialization ----------------------------------------------------------------

struct DatasetManifest {
  int version = 1;
  std::uint64_t master_seed = 0;
  std::string catalog = "catalog.json";
  std::size_t count = 0;
  std::map<std::string, std::size_t> relation_counts;
  /// "train" / "val" / "test" -> instance ids.
  std::map<std::string, std::vector<std::uint64_t>> splits;

  bool operator==(const DatasetManifest&) const = default;
};

inline constexpr int kDatasetVersion = 1;

/// Manifest with counts filled in and every instance tagged `split`.
DatasetManifest make_manifest(std::span<const Instance> instances, std::uint64_t master_seed,
                              const std::string& split = "train");

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Instance record without the clouds, which live in `cloud_files`.
nlohmann::json instance_to_json(const Instance& inst);
std::string cloud_file_name(std::uint64_t id, std::size_t object);

struct Dataset {
  DatasetManifest manifest;
  std::vector<ObjectModel> catalog;
  std::vector<Instance> instances;
};

void write_dataset(const std::string& dir, const Dataset& dataset);
/// Throws IoError on unreadable files and FormatError on malformed content,
/// version mismatch, or a manifest count that disagrees with the files.
Dataset read_dataset(const std::string& dir);

}  // namespace sport::datagen
