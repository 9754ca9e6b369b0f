#include "sport/render.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "sport/error.hpp"
#include "sport/physics.hpp"

namespace sport::render {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* outline(scene::Role role) {
  switch (role) {
    case scene::Role::Movable: return "#d62728";
    case scene::Role::Reference: return "#1f77b4";
    case scene::Role::Irrelevant: return "#555555";
  }
  return "#000000";
}

std::string hex_color(const geometry::Vec3& rgb) {
  auto byte = [](double v) { return static_cast<int>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5); };
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", byte(rgb.x), byte(rgb.y), byte(rgb.z));
  return buf;
}

}  // namespace

std::string render_top_down(const scene::Scene& before, const scene::Scene& after, const RenderOptions& o) {
  if (before.objects.size() != after.objects.size()) throw SceneMismatch("scenes hold different object counts");
  for (std::size_t i = 0; i < before.objects.size(); ++i)
    if (before.objects[i].model.id != after.objects[i].model.id) throw SceneMismatch("scenes hold different objects");

  const auto& ws = after.workspace;
  const double s = o.pixels_per_meter;
  const double width = (ws.x_max - ws.x_min) * s + 2 * o.margin;
  const double height = (ws.y_max - ws.y_min) * s + 2 * o.margin;
  auto px = [&](double x) { return o.margin + (x - ws.x_min) * s; };
  auto py = [&](double y) { return o.margin + (ws.y_max - y) * s; };
  auto points = [&](const geometry::OrientedBox& box) {
    std::string out;
    char buf[64];
    for (const auto& v : physics::footprint(box)) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", out.empty() ? "" : " ", px(v.x), py(v.y));
      out += buf;
    }
    return out;
  };

  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.2f %.2f\">\n",
                width, height, width, height);
  svg += buf;
  std::snprintf(buf, sizeof buf,
                "  <rect class=\"table\" x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"#f4efe6\" "
                "stroke=\"#999999\"/>\n",
                o.margin, o.margin, width - 2 * o.margin, height - 2 * o.margin);
  svg += buf;

  // Lower objects first so stacked ones stay visible.
  std::vector<std::size_t> order(after.objects.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return after.objects[a].world_box().min_z() < after.objects[b].world_box().min_z();
  });
  for (auto i : order) {
    const auto& obj = after.objects[i];
    const auto& old = before.objects[i];
    const std::string stroke = outline(obj.role);
    svg += "  <g data-object=\"" + escape(obj.model.id) + "\" data-role=\"" + std::string(scene::to_string(obj.role)) +
           "\">\n";
    svg += "    <title>" + escape(scene::descriptor(obj.model)) + "</title>\n";
    if (!(old.pose == obj.pose))
      svg += "    <polygon class=\"before\" points=\"" + points(old.world_box()) + "\" fill=\"none\" stroke=\"" +
             stroke + "\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\"/>\n";
    svg += "    <polygon class=\"after\" points=\"" + points(obj.world_box()) + "\" fill=\"" +
           hex_color(obj.model.color) + "\" fill-opacity=\"0.8\" stroke=\"" + stroke + "\" stroke-width=\"2.5\"/>\n";
    svg += "  </g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void write_svg(const std::string& svg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << svg;
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace sport::render
