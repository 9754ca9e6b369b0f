#pragma once

#include <map>
#include <string>
#include <string_view>

#include "sport/diffusion.hpp"

namespace sport::config {

/// `key = value` lines; `#` starts a comment; blank lines are ignored.
/// Throws ConfigError on malformed lines and duplicate keys.
std::map<std::string, std::string> parse_key_values(std::string_view text);

/// Training run settings read from a config file.
struct RunConfig {
  diffusion::TrainConfig train;
  /// JSON-lines token vectors; empty selects the hash text encoder.
  std::string text_sidecar;

  /// Throws ConfigError when a value is out of range.
  void validate() const;
  /// Flat key-value text that parses back to this config.
  std::string to_text() const;
};

/// Applies the keys on top of the defaults. Throws ConfigError on unknown
/// keys and unparseable values.
RunConfig run_config_from_text(std::string_view text);
/// Throws IoError when the file cannot be read.
RunConfig load_run_config(const std::string& path);

}  // namespace sport::config
