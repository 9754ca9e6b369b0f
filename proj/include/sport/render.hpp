#pragma once

#include <string>

#include "sport/scene.hpp"

namespace sport::render {

struct RenderOptions {
  double pixels_per_meter = 600.0;
  double margin = 20.0;
};

/// Top-down SVG of a rearrangement. Each object is one `<g data-object="id">`
/// group drawn with its fill color and a role-coded outline. Objects whose
/// pose differs between the scenes also show their initial footprint dashed.
/// Throws SceneMismatch if the scenes do not hold the same objects.
std::string render_top_down(const scene::Scene& before, const scene::Scene& after, const RenderOptions& options = {});

/// Throws IoError.
void write_svg(const std::string& svg, const std::string& path);

}  // namespace sport::render
