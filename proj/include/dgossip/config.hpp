#pragma once

#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dgossip/engine.hpp"

namespace dgossip {

/// Dotted key ("optimizer.eta0") to the raw value text as written ("0.1", "\"ring\"", "[16, 8]").
using FlatConfig = std::map<std::string, std::string>;

/// Parses `[section]` headers and `key = value` lines; `#` starts a comment.
FlatConfig parse_config_text(std::string_view text);

/// Reads a config file; IoError if unreadable.
FlatConfig read_config_file(const std::string& path);

/// Applies one `key=value` override. Throws ConfigError on malformed input or unknown key.
void apply_override(FlatConfig& flat, std::string_view assignment);

/// Builds a config from defaults plus `flat`. Throws ConfigError naming the first unknown or
/// malformed key. Does not call validate().
ExperimentConfig config_from_flat(const FlatConfig& flat);

bool is_config_key(std::string_view key);

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

/// The same config in the text format parse_config_text reads.
std::string config_to_text(const ExperimentConfig& cfg);

std::string_view to_string(ModelKind kind);
std::string_view to_string(PartitionScheme scheme);
std::string_view to_string(DataSource source);

}  // namespace dgossip
