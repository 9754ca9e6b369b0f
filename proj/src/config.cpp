#include "sport/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "sport/error.hpp"

namespace sport::config {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError("bad value '" + value + "' for key '" + key + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) throw ConfigError("non-finite value for key '" + key + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("bad boolean '" + value + "' for key '" + key + "'");
}

std::string format(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

// `field` maps a config to the member the key controls.
template <typename T, typename F>
Key number(const char* name, F field) {
  return {name, [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_number<T>(k, v); },
          [field](const RunConfig& c) {
            RunConfig copy = c;
            if constexpr (std::is_floating_point_v<T>)
              return format(field(copy));
            else
              return std::to_string(field(copy));
          }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(number<int>("T", [](RunConfig& c) -> int& { return c.train.diffusion.T; }));
    k.push_back(number<double>("beta_start", [](RunConfig& c) -> double& { return c.train.diffusion.beta_start; }));
    k.push_back(number<double>("beta_end", [](RunConfig& c) -> double& { return c.train.diffusion.beta_end; }));
    k.push_back({"strict_paper_update",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   c.train.diffusion.strict_paper_update = parse_bool(key, v);
                 },
                 [](const RunConfig& c) { return std::string(c.train.diffusion.strict_paper_update ? "true" : "false"); }});
    k.push_back(number<int>("epochs", [](RunConfig& c) -> int& { return c.train.epochs; }));
    k.push_back(number<int>("batch", [](RunConfig& c) -> int& { return c.train.batch; }));
    k.push_back(number<double>("lr", [](RunConfig& c) -> double& { return c.train.lr; }));
    k.push_back({"lr_schedule",
                 [](RunConfig& c, const std::string&, const std::string& v) {
                   c.train.lr_schedule = diffusion::lr_schedule_from_string(v);
                 },
                 [](const RunConfig& c) { return std::string(diffusion::to_string(c.train.lr_schedule)); }});
    k.push_back(number<double>("lr_min", [](RunConfig& c) -> double& { return c.train.lr_min; }));
    k.push_back(number<std::uint64_t>("seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
    k.push_back(number<double>("delta", [](RunConfig& c) -> double& { return c.train.delta; }));
    k.push_back(number<int>("model_dim", [](RunConfig& c) -> int& { return c.train.model.model_dim; }));
    k.push_back(number<int>("blocks", [](RunConfig& c) -> int& { return c.train.model.blocks; }));
    k.push_back(number<int>("heads", [](RunConfig& c) -> int& { return c.train.model.heads; }));
    k.push_back(number<int>("ffn_mult", [](RunConfig& c) -> int& { return c.train.model.ffn_mult; }));
    k.push_back(number<int>("cloud_dim", [](RunConfig& c) -> int& { return c.train.model.cloud_dim; }));
    k.push_back(number<int>("cloud_blocks", [](RunConfig& c) -> int& { return c.train.model.cloud_blocks; }));
    k.push_back(number<int>("cloud_heads", [](RunConfig& c) -> int& { return c.train.model.cloud_heads; }));
    k.push_back(number<int>("cloud_points", [](RunConfig& c) -> int& { return c.train.model.cloud_points; }));
    k.push_back(number<int>("max_text_tokens", [](RunConfig& c) -> int& { return c.train.model.max_text_tokens; }));
    k.push_back(number<double>("workspace_x_min", [](RunConfig& c) -> double& { return c.train.workspace.x_min; }));
    k.push_back(number<double>("workspace_x_max", [](RunConfig& c) -> double& { return c.train.workspace.x_max; }));
    k.push_back(number<double>("workspace_y_min", [](RunConfig& c) -> double& { return c.train.workspace.y_min; }));
    k.push_back(number<double>("workspace_y_max", [](RunConfig& c) -> double& { return c.train.workspace.y_max; }));
    k.push_back(number<double>("workspace_z_max", [](RunConfig& c) -> double& { return c.train.workspace.z_max; }));
    k.push_back({"text_sidecar",
                 [](RunConfig& c, const std::string&, const std::string& v) { c.text_sidecar = v; },
                 [](const RunConfig& c) { return c.text_sidecar; }});
    return k;
  }();
  return table;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second) throw ConfigError("duplicate key '" + key + "'");
  }
  return out;
}

RunConfig run_config_from_text(std::string_view text) {
  RunConfig c;
  for (const auto& [key, value] : parse_key_values(text)) {
    const Key* found = nullptr;
    for (const auto& k : keys())
      if (key == k.name) found = &k;
    if (!found) throw ConfigError("unknown config key '" + key + "'");
    found->set(c, key, value);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_text(ss.str());
}

void RunConfig::validate() const {
  train.model.validate();
  try {
    (void)train.diffusion.schedule();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("noise schedule: ") + e.what());
  }
  if (train.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (train.batch <= 0) throw ConfigError("batch must be positive");
  if (!(train.lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(train.lr_min >= 0.0 && train.lr_min <= train.lr)) throw ConfigError("lr_min must lie in [0, lr]");
  if (!(train.delta > 0.0)) throw ConfigError("delta must be positive");
  const auto& ws = train.workspace;
  if (!(ws.x_min < ws.x_max && ws.y_min < ws.y_max && ws.z_max > 0.0))
    throw ConfigError("workspace extents must be non-empty");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(*this) + "\n";
  return out;
}

}  // namespace sport::config
