#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "sport/datagen.hpp"
#include "sport/error.hpp"
#include "sport/rng.hpp"

namespace sport::datagen {

namespace {

struct CategoryShape {
  const char* name;
  double size;    // largest full extent, meters
  Vec3 aspect;    // relative extents, largest = 1
};

// Desk-scale proportions. Sizes are the bundled canonical table.
constexpr CategoryShape kCategories[] = {
    {"basket", 0.26, {1.0, 0.75, 0.55}},    {"block", 0.06, {1.0, 1.0, 1.0}},
    {"book", 0.22, {1.0, 0.72, 0.16}},      {"bottle", 0.24, {0.3, 0.3, 1.0}},
    {"bowl", 0.16, {1.0, 1.0, 0.45}},       {"box", 0.12, {1.0, 0.8, 0.7}},
    {"camera", 0.12, {1.0, 0.6, 0.65}},     {"can", 0.12, {0.55, 0.55, 1.0}},
    {"candle", 0.1, {0.6, 0.6, 1.0}},       {"clock", 0.18, {1.0, 0.3, 0.9}},
    {"cup", 0.1, {0.8, 0.8, 1.0}},          {"glass", 0.12, {0.6, 0.6, 1.0}},
    {"headphones", 0.2, {1.0, 0.5, 0.8}},   {"jar", 0.14, {0.7, 0.7, 1.0}},
    {"keyboard", 0.36, {1.0, 0.35, 0.08}},  {"lamp", 0.34, {0.5, 0.5, 1.0}},
    {"laptop", 0.34, {1.0, 0.7, 0.06}},     {"mug", 0.11, {1.0, 0.75, 0.9}},
    {"notebook", 0.21, {1.0, 0.7, 0.08}},   {"pencilcase", 0.2, {1.0, 0.4, 0.3}},
    {"phone", 0.15, {1.0, 0.48, 0.08}},     {"plate", 0.24, {1.0, 1.0, 0.1}},
    {"pot", 0.22, {1.0, 1.0, 0.7}},         {"remote", 0.18, {1.0, 0.3, 0.12}},
    {"speaker", 0.2, {0.7, 0.7, 1.0}},      {"stapler", 0.16, {1.0, 0.3, 0.4}},
    {"toy", 0.12, {1.0, 0.8, 0.9}},         {"tray", 0.32, {1.0, 0.7, 0.1}},
    {"vase", 0.26, {0.55, 0.55, 1.0}},      {"wallet", 0.11, {1.0, 0.8, 0.15}},
};

}  // namespace

const SizeTable& default_size_table() {
  static const SizeTable table = [] {
    SizeTable t;
    for (const auto& c : kCategories) t.emplace(c.name, c.size);
    return t;
  }();
  return table;
}

nlohmann::json size_table_to_json(const SizeTable& table) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : table) j[k] = v;
  return j;
}

SizeTable size_table_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("size table must be a JSON object");
  SizeTable t;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number() || !(v.get<double>() > 0)) throw FormatError("size for '" + k + "' must be positive");
    t.emplace(k, v.get<double>());
  }
  return t;
}

std::vector<ObjectModel> preprocess_catalog(std::span<const RawModel> raw, const SizeTable& sizes) {
  std::vector<ObjectModel> out;
  out.reserve(raw.size());
  for (const auto& m : raw) {
    const auto it = sizes.find(m.category);
    if (it == sizes.end()) throw UnknownCategory("no canonical size for category '" + m.category + "'");
    if (m.vertices.empty()) throw EmptyCloud("model '" + m.id + "' has no vertices");
    Vec3 lo = m.vertices.front(), hi = m.vertices.front();
    for (const auto& v : m.vertices)
      for (int k = 0; k < 3; ++k) {
        lo[k] = std::min(lo[k], v[k]);
        hi[k] = std::max(hi[k], v[k]);
      }
    const Vec3 extent = hi - lo;
    const double largest = std::max({extent.x, extent.y, extent.z});
    if (!(largest > 0)) throw EmptyCloud("model '" + m.id + "' has zero extent");
    const double scale = it->second / largest;
    ObjectModel model;
    model.id = m.id;
    model.category = m.category;
    model.color = m.color;
    for (int k = 0; k < 3; ++k) model.half_extents[k] = std::max(0.5 * extent[k] * scale, geometry::kMinHalfExtent);
    out.push_back(std::move(model));
  }
  return out;
}

std::vector<RawModel> procedural_raw_models(std::size_t variants, std::uint64_t seed) {
  std::vector<RawModel> out;
  const auto colors = scene::palette();
  std::uint64_t stream = 0;
  for (const auto& cat : kCategories) {
    for (std::size_t v = 0; v < variants; ++v) {
      Rng rng(derive_seed(seed, stream++));
      Vec3 dims;
      for (int k = 0; k < 3; ++k) dims[k] = cat.aspect[k] * rng.uniform(0.85, 1.15);
      // Raw assets come at arbitrary scale and position.
      const double scale = std::exp(rng.uniform(std::log(0.5), std::log(20.0)));
      const Vec3 offset{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
      RawModel m;
      char id[64];
      std::snprintf(id, sizeof id, "%s_%02zu", cat.name, v);
      m.id = id;
      m.category = cat.name;
      m.color = colors[rng.index(colors.size())].rgb;
      for (int c = 0; c < 8; ++c) {
        Vec3 p;
        for (int k = 0; k < 3; ++k) p[k] = ((c >> k) & 1 ? 0.5 : -0.5) * dims[k] * scale;
        m.vertices.push_back(p + offset);
      }
      out.push_back(std::move(m));
    }
  }
  return out;
}

std::vector<ObjectModel> default_catalog(std::size_t variants, std::uint64_t seed) {
  const auto raw = procedural_raw_models(variants, seed);
  return preprocess_catalog(raw, default_size_table());
}

}  // namespace sport::datagen
