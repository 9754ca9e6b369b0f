#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "sport/datagen.hpp"
#include "sport/error.hpp"

namespace sport::datagen {

namespace fs = std::filesystem;
using nlohmann::json;

DatasetManifest make_manifest(std::span<const Instance> instances, std::uint64_t master_seed,
                              const std::string& split) {
  DatasetManifest m;
  m.master_seed = master_seed;
  m.count = instances.size();
  for (const auto& inst : instances) {
    ++m.relation_counts[std::string(scene::to_string(inst.relation))];
    m.splits[split].push_back(inst.id);
  }
  return m;
}

json to_json(const DatasetManifest& m) {
  json splits = json::object();
  for (const auto& [k, ids] : m.splits) splits[k] = ids;
  json counts = json::object();
  for (const auto& [k, c] : m.relation_counts) counts[k] = c;
  return {{"version", m.version},     {"master_seed", m.master_seed}, {"catalog", m.catalog},
          {"count", m.count},         {"relation_counts", counts},    {"splits", splits}};
}

DatasetManifest manifest_from_json(const json& j) {
  try {
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kDatasetVersion)
      throw FormatError("unsupported dataset version " + std::to_string(m.version));
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.catalog = j.at("catalog").get<std::string>();
    m.count = j.at("count").get<std::size_t>();
    for (const auto& [k, v] : j.at("relation_counts").items()) {
      if (!scene::relation_from_string(k)) throw FormatError("unknown relation '" + k + "' in manifest");
      m.relation_counts[k] = v.get<std::size_t>();
    }
    for (const auto& [k, v] : j.at("splits").items()) m.splits[k] = v.get<std::vector<std::uint64_t>>();
    std::size_t total = 0;
    for (const auto& [k, c] : m.relation_counts) total += c;
    if (total != m.count) throw FormatError("per-relation counts do not sum to the manifest count");
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
}

std::string cloud_file_name(std::uint64_t id, std::size_t object) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "clouds/%06llu_%zu.spcd", static_cast<unsigned long long>(id), object);
  return buf;
}

namespace {

std::string instance_file_name(std::uint64_t id) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "instances/%06llu.json", static_cast<unsigned long long>(id));
  return buf;
}

}  // namespace

json instance_to_json(const Instance& inst) {
  json clouds = json::array();
  for (std::size_t k = 0; k < inst.clouds.size(); ++k) clouds.push_back(cloud_file_name(inst.id, k));
  return {{"id", inst.id},
          {"relation", std::string(scene::to_string(inst.relation))},
          {"instruction", inst.instruction},
          {"movable", inst.movable},
          {"references", inst.references},
          {"initial_scene", scene::to_json(inst.initial_scene)},
          {"goal_scene", scene::to_json(inst.goal_scene)},
          {"clouds", clouds}};
}

void write_dataset(const std::string& dir, const Dataset& dataset) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "instances", ec);
  fs::create_directories(fs::path(dir) / "clouds", ec);
  if (ec) throw IoError("cannot create dataset directory '" + dir + "': " + ec.message());
  scene::write_json_file(to_json(dataset.manifest), (fs::path(dir) / "manifest.json").string());
  scene::write_json_file(scene::catalog_to_json(dataset.catalog), (fs::path(dir) / dataset.manifest.catalog).string());
  for (const auto& inst : dataset.instances) {
    scene::write_json_file(instance_to_json(inst), (fs::path(dir) / instance_file_name(inst.id)).string());
    for (std::size_t k = 0; k < inst.clouds.size(); ++k)
      geometry::write_spcd_file(inst.clouds[k], (fs::path(dir) / cloud_file_name(inst.id, k)).string());
  }
}

Dataset read_dataset(const std::string& dir) {
  const fs::path root(dir);
  Dataset ds;
  ds.manifest = manifest_from_json(scene::read_json_file((root / "manifest.json").string()));
  ds.catalog = scene::catalog_from_json(scene::read_json_file((root / ds.manifest.catalog).string()));

  std::vector<fs::path> files;
  std::error_code ec;
  for (fs::directory_iterator it(root / "instances", ec), end; !ec && it != end; it.increment(ec))
    if (it->path().extension() == ".json") files.push_back(it->path());
  if (ec) throw IoError("cannot list instances in '" + dir + "': " + ec.message());
  if (files.size() != ds.manifest.count)
    throw FormatError("manifest lists " + std::to_string(ds.manifest.count) + " instances but " +
                      std::to_string(files.size()) + " files are present");
  std::sort(files.begin(), files.end());

  for (const auto& path : files) {
    const json j = scene::read_json_file(path.string());
    try {
      Instance inst;
      inst.id = j.at("id").get<std::uint64_t>();
      const auto rel = scene::relation_from_string(j.at("relation").get<std::string>());
      if (!rel) throw FormatError("unknown relation in " + path.string());
      inst.relation = *rel;
      inst.instruction = j.at("instruction").get<std::string>();
      inst.movable = j.at("movable").get<std::size_t>();
      inst.references = j.at("references").get<std::vector<std::size_t>>();
      inst.initial_scene = scene::scene_from_json(j.at("initial_scene"));
      inst.goal_scene = scene::scene_from_json(j.at("goal_scene"));
      const std::size_t n = inst.initial_scene.objects.size();
      if (inst.goal_scene.objects.size() != n || inst.movable >= n)
        throw FormatError("inconsistent object indices in " + path.string());
      for (auto r : inst.references)
        if (r >= n) throw FormatError("reference index out of range in " + path.string());
      for (const auto& name : j.at("clouds")) inst.clouds.push_back(geometry::read_spcd_file((root / name.get<std::string>()).string()));
      ds.instances.push_back(std::move(inst));
    } catch (const json::exception& e) {
      throw FormatError("malformed instance " + path.string() + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace sport::datagen
