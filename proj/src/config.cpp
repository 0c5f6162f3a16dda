#include "dgossip/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "dgossip/errors.hpp"

namespace dgossip {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// Strips a trailing `# comment` that is not inside a quoted string.
std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (quoted && line[i] == '\\') {
      ++i;
      continue;
    }
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string unquote(std::string_view key, std::string_view raw) {
  raw = trim(raw);
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    // Quoted values use JSON string escapes.
    const auto parsed = nlohmann::json::parse(raw, nullptr, false);
    if (!parsed.is_string()) throw ConfigError(fmt::format("config key '{}': malformed string {}", key, raw));
    return parsed.get<std::string>();
  }
  if (raw.find_first_of("\"[]") != std::string_view::npos)
    throw ConfigError(fmt::format("config key '{}': malformed string {}", key, raw));
  return std::string(raw);
}

double parse_double(std::string_view key, std::string_view raw) {
  raw = trim(raw);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (raw.empty() || ec != std::errc() || ptr != raw.data() + raw.size())
    throw ConfigError(fmt::format("config key '{}': expected a number, got '{}'", key, raw));
  return v;
}

std::uint64_t parse_uint(std::string_view key, std::string_view raw) {
  raw = trim(raw);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (raw.empty() || ec != std::errc() || ptr != raw.data() + raw.size())
    throw ConfigError(fmt::format("config key '{}': expected a non-negative integer, got '{}'", key, raw));
  return v;
}

bool parse_bool(std::string_view key, std::string_view raw) {
  raw = trim(raw);
  if (raw == "true") return true;
  if (raw == "false") return false;
  throw ConfigError(fmt::format("config key '{}': expected true or false, got '{}'", key, raw));
}

std::vector<std::string_view> list_items(std::string_view key, std::string_view raw) {
  raw = trim(raw);
  if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']')
    throw ConfigError(fmt::format("config key '{}': expected a [list], got '{}'", key, raw));
  raw = trim(raw.substr(1, raw.size() - 2));
  std::vector<std::string_view> items;
  if (raw.empty()) return items;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = raw.find(',', start);
    items.push_back(trim(raw.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return items;
}

template <typename Enum, typename Parse>
Enum parse_enum(std::string_view key, std::string_view raw, Parse parse) {
  const std::string name = unquote(key, raw);
  try {
    return parse(name);
  } catch (const ConfigError&) {
    throw ConfigError(fmt::format("config key '{}': unknown value '{}'", key, name));
  }
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "quadratic") return ModelKind::Quadratic;
  if (name == "logistic") return ModelKind::Logistic;
  if (name == "mlp") return ModelKind::Mlp;
  throw ConfigError("model kind");
}

PartitionScheme parse_scheme(std::string_view name) {
  if (name == "iid") return PartitionScheme::Iid;
  if (name == "dirichlet") return PartitionScheme::Dirichlet;
  if (name == "pathological") return PartitionScheme::Pathological;
  throw ConfigError("partition scheme");
}

DataSource parse_source(std::string_view name) {
  if (name == "synthetic") return DataSource::Synthetic;
  if (name == "csv") return DataSource::Csv;
  throw ConfigError("data source");
}

std::string quote_text(std::string_view s) { return nlohmann::json(s).dump(); }
std::string number(double v) { return fmt::format("{}", v); }
std::string number(std::uint64_t v) { return fmt::format("{}", v); }
std::string boolean(bool v) { return v ? "true" : "false"; }

struct Field {
  std::string_view key;
  std::function<void(ExperimentConfig&, std::string_view key, std::string_view raw)> set;
  std::function<std::string(const ExperimentConfig&)> get;  // raw text form
};

#define DG_DOUBLE(KEY, MEMBER)                                                                           \
  Field {                                                                                                \
    KEY, [](ExperimentConfig& c, std::string_view k, std::string_view r) { c.MEMBER = parse_double(k, r); }, \
        [](const ExperimentConfig& c) { return number(c.MEMBER); }                                       \
  }
#define DG_UINT(KEY, MEMBER)                                                                             \
  Field {                                                                                                \
    KEY,                                                                                                 \
        [](ExperimentConfig& c, std::string_view k, std::string_view r) {                                \
          c.MEMBER = static_cast<decltype(c.MEMBER)>(parse_uint(k, r));                                  \
        },                                                                                               \
        [](const ExperimentConfig& c) { return number(static_cast<std::uint64_t>(c.MEMBER)); }           \
  }
#define DG_STRING(KEY, MEMBER)                                                                           \
  Field {                                                                                                \
    KEY, [](ExperimentConfig& c, std::string_view k, std::string_view r) { c.MEMBER = unquote(k, r); },   \
        [](const ExperimentConfig& c) { return quote_text(c.MEMBER); }                                       \
  }
#define DG_BOOL(KEY, MEMBER)                                                                             \
  Field {                                                                                                \
    KEY, [](ExperimentConfig& c, std::string_view k, std::string_view r) { c.MEMBER = parse_bool(k, r); }, \
        [](const ExperimentConfig& c) { return boolean(c.MEMBER); }                                      \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"algorithm",
            [](ExperimentConfig& c, std::string_view k, std::string_view r) {
              c.algorithm = parse_enum<AlgorithmKind>(k, r, parse_algorithm);
            },
            [](const ExperimentConfig& c) { return quote_text(to_string(c.algorithm)); }},
      DG_DOUBLE("beta", beta),
      DG_UINT("clients", clients),
      DG_UINT("rounds", rounds),
      DG_UINT("local_steps", local_steps),
      DG_DOUBLE("participation", participation),
      DG_UINT("seed", seed),
      DG_UINT("eval_every", eval_every),
      DG_BOOL("diagnostics", diagnostics),
      DG_DOUBLE("init_jitter", init_jitter),
      Field{"targets",
            [](ExperimentConfig& c, std::string_view k, std::string_view r) {
              c.targets.clear();
              for (auto item : list_items(k, r)) c.targets.push_back(parse_double(k, item));
            },
            [](const ExperimentConfig& c) {
              std::vector<std::string> items;
              for (double t : c.targets) items.push_back(number(t));
              return fmt::format("[{}]", fmt::join(items, ", "));
            }},

      Field{"topology.kind",
            [](ExperimentConfig& c, std::string_view k, std::string_view r) {
              c.topology.kind = parse_enum<TopologyKind>(k, r, parse_topology_kind);
            },
            [](const ExperimentConfig& c) { return quote_text(to_string(c.topology.kind)); }},
      DG_UINT("topology.k", topology.k),
      DG_UINT("topology.seed", topology.seed),

      Field{"model.kind",
            [](ExperimentConfig& c, std::string_view k, std::string_view r) {
              c.model.kind = parse_enum<ModelKind>(k, r, parse_model_kind);
            },
            [](const ExperimentConfig& c) { return quote_text(to_string(c.model.kind)); }},
      Field{"model.hidden",
            [](ExperimentConfig& c, std::string_view k, std::string_view r) {
              c.model.hidden.clear();
              for (auto item : list_items(k, r)) c.model.hidden.push_back(parse_uint(k, item));
            },
            [](const ExperimentConfig& c) { return fmt::format("[{}]", fmt::join(c.model.hidden, ", ")); }},
      DG_UINT("model.dim", model.dim),
      DG_DOUBLE("model.heterogeneity", model.heterogeneity),
      DG_BOOL("model.shared_curvature", model.shared_curvature),

      Field{"data.source",
            [](ExperimentConfig& c, std::string_view k, std::string_view r) {
              c.data.source = parse_enum<DataSource>(k, r, parse_source);
            },
            [](const ExperimentConfig& c) { return quote_text(to_string(c.data.source)); }},
      DG_UINT("data.classes", data.classes),
      DG_UINT("data.dim", data.dim),
      DG_UINT("data.per_class", data.per_class),
      DG_UINT("data.test_per_class", data.test_per_class),
      DG_DOUBLE("data.spread", data.spread),
      DG_STRING("data.path", data.path),
      DG_STRING("data.test_path", data.test_path),

      Field{"partition.scheme",
            [](ExperimentConfig& c, std::string_view k, std::string_view r) {
              c.partition.scheme = parse_enum<PartitionScheme>(k, r, parse_scheme);
            },
            [](const ExperimentConfig& c) { return quote_text(to_string(c.partition.scheme)); }},
      DG_DOUBLE("partition.alpha", partition.alpha),
      DG_UINT("partition.classes_per_client", partition.classes_per_client),

      DG_DOUBLE("optimizer.eta0", optimizer.eta0),
      DG_DOUBLE("optimizer.decay", optimizer.decay),
      DG_DOUBLE("optimizer.lambda", optimizer.lambda),
      DG_DOUBLE("optimizer.mu", optimizer.mu),
      DG_DOUBLE("optimizer.grad_floor", optimizer.grad_floor),
      DG_UINT("optimizer.batch_size", optimizer.batch_size),
  };
  return table;
}

#undef DG_DOUBLE
#undef DG_UINT
#undef DG_STRING
#undef DG_BOOL

const Field* find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Quadratic: return "quadratic";
    case ModelKind::Logistic: return "logistic";
    case ModelKind::Mlp: return "mlp";
  }
  return "unknown";
}

std::string_view to_string(PartitionScheme scheme) {
  switch (scheme) {
    case PartitionScheme::Iid: return "iid";
    case PartitionScheme::Dirichlet: return "dirichlet";
    case PartitionScheme::Pathological: return "pathological";
  }
  return "unknown";
}

std::string_view to_string(DataSource source) { return source == DataSource::Csv ? "csv" : "synthetic"; }

FlatConfig parse_config_text(std::string_view text) {
  FlatConfig flat;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    start = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(fmt::format("config line {}: malformed section header", line_no));
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(fmt::format("config line {}: expected key = value", line_no));
    const std::string_view key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("config line {}: empty key", line_no));
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    flat[full] = std::string(trim(line.substr(eq + 1)));
  }
  return flat;
}

FlatConfig read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read config '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(FlatConfig& flat, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError(fmt::format("override '{}' is not KEY=VALUE", assignment));
  const std::string key(trim(assignment.substr(0, eq)));
  if (!is_config_key(key)) throw ConfigError(fmt::format("unknown config key '{}'", key));
  flat[key] = std::string(trim(assignment.substr(eq + 1)));
}

bool is_config_key(std::string_view key) { return find_field(key) != nullptr; }

ExperimentConfig config_from_flat(const FlatConfig& flat) {
  ExperimentConfig cfg;
  for (const auto& [key, raw] : flat) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError(fmt::format("unknown config key '{}'", key));
    f->set(cfg, key, raw);
  }
  return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : fields()) {
    const std::string raw = f.get(cfg);
    nlohmann::json value = nlohmann::json::parse(raw);
    nlohmann::json* node = &out;
    std::string_view key = f.key;
    for (std::size_t dot = key.find('.'); dot != std::string_view::npos; dot = key.find('.')) {
      node = &(*node)[std::string(key.substr(0, dot))];
      key.remove_prefix(dot + 1);
    }
    (*node)[std::string(key)] = std::move(value);
  }
  return out;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  FlatConfig flat;
  std::function<void(const nlohmann::json&, const std::string&)> walk = [&](const nlohmann::json& node,
                                                                            const std::string& prefix) {
    for (auto it = node.begin(); it != node.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (it->is_object()) {
        walk(*it, key);
      } else {
        flat[key] = it->dump();
      }
    }
  };
  if (!j.is_object()) throw ConfigError("config JSON must be an object");
  walk(j, "");
  return config_from_flat(flat);
}

std::string config_to_text(const ExperimentConfig& cfg) {
  std::string top;
  std::map<std::string, std::string> sections;
  for (const auto& f : fields()) {
    const std::string_view key = f.key;
    const std::size_t dot = key.find('.');
    if (dot == std::string_view::npos) {
      top += fmt::format("{} = {}\n", key, f.get(cfg));
    } else {
      sections[std::string(key.substr(0, dot))] += fmt::format("{} = {}\n", key.substr(dot + 1), f.get(cfg));
    }
  }
  for (const auto& [name, body] : sections) top += fmt::format("\n[{}]\n{}", name, body);
  return top;
}

}  // namespace dgossip
