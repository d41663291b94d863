#include "eapnet/config_io.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <variant>
#include <vector>

#include "rng.hpp"

namespace eapnet {

namespace {

using TomlValue = std::variant<int64_t, double, bool, std::string, std::vector<int64_t>>;
using TomlTable = std::map<std::string, std::map<std::string, TomlValue>>;

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

TomlValue parse_value(const std::string& raw, int line_no) {
  const std::string v = trim(raw);
  if (v.empty()) throw std::invalid_argument("toml: empty value at line " + std::to_string(line_no));
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') {
      throw std::invalid_argument("toml: unterminated string at line " + std::to_string(line_no));
    }
    return v.substr(1, v.size() - 2);
  }
  if (v.front() == '[') {
    if (v.back() != ']') {
      throw std::invalid_argument("toml: unterminated array at line " + std::to_string(line_no));
    }
    std::vector<int64_t> items;
    std::stringstream ss(v.substr(1, v.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string token = trim(item);
      if (token.empty()) continue;
      items.push_back(std::stoll(token));
    }
    return items;
  }
  if (v.find('.') != std::string::npos || v.find('e') != std::string::npos ||
      v.find('E') != std::string::npos) {
    return std::stod(v);
  }
  return static_cast<int64_t>(std::stoll(v));
}

TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::invalid_argument("toml: bad section header at line " + std::to_string(line_no));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("toml: expected key = value at line " + std::to_string(line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    table[section][key] = parse_value(line.substr(eq + 1), line_no);
  }
  return table;
}

template <typename T>
T get_as(const TomlValue& v, const std::string& key) {
  if constexpr (std::is_same_v<T, double>) {
    if (std::holds_alternative<int64_t>(v)) return static_cast<double>(std::get<int64_t>(v));
  }
  if (!std::holds_alternative<T>(v)) {
    throw std::invalid_argument("config: wrong type for key \"" + key + "\"");
  }
  return std::get<T>(v);
}

Variant parse_variant(const std::string& s) {
  if (s == "standard") return Variant::Standard;
  if (s == "lightweight") return Variant::Lightweight;
  if (s == "tiny-test") return Variant::TinyTest;
  throw std::invalid_argument("config: unknown variant \"" + s + "\"");
}

void apply_model_keys(ModelConfig& c, const std::map<std::string, TomlValue>& keys) {
  for (const auto& [key, value] : keys) {
    if (key == "variant") continue;  // handled first
    if (key == "block") {
      const std::string s = get_as<std::string>(value, key);
      if (s == "pdub") {
        c.block_kind = BlockKind::Pdub;
      } else if (s == "drdb") {
        c.block_kind = BlockKind::Drdb;
      } else {
        throw std::invalid_argument("config: unknown block kind \"" + s + "\"");
      }
    } else if (key == "blocks") {
      c.num_blocks = static_cast<int>(get_as<int64_t>(value, key));
    } else if (key == "encoder_channels") {
      c.encoder_channels = static_cast<int>(get_as<int64_t>(value, key));
    } else if (key == "trunk_channels") {
      c.trunk_channels = static_cast<int>(get_as<int64_t>(value, key));
    } else if (key == "weight_sharing") {
      c.weight_sharing = get_as<bool>(value, key);
    } else if (key == "align_resolution") {
      const std::string s = get_as<std::string>(value, key);
      if (s == "full") {
        c.align_resolution = AlignRes::Full;
      } else if (s == "half") {
        c.align_resolution = AlignRes::Half;
      } else {
        throw std::invalid_argument("config: unknown alignment resolution \"" + s + "\"");
      }
    } else if (key == "upsample") {
      const std::string s = get_as<std::string>(value, key);
      if (s == "bilinear") {
        c.upsample = UpsampleKind::Bilinear;
      } else if (s == "tconv") {
        c.upsample = UpsampleKind::TransposedConv;
      } else {
        throw std::invalid_argument("config: unknown upsample kind \"" + s + "\"");
      }
    } else if (key == "pdub_dilations" || key == "pdub_widths") {
      const auto items = get_as<std::vector<int64_t>>(value, key);
      if (items.size() != 3) {
        throw std::invalid_argument("config: " + key + " must have exactly 3 entries");
      }
      auto& target = key == "pdub_dilations" ? c.pdub_dilations : c.pdub_widths;
      for (int i = 0; i < 3; ++i) target[i] = static_cast<int>(items[i]);
    } else if (key == "align_mid_channels") {
      c.align_mid_channels = static_cast<int>(get_as<int64_t>(value, key));
    } else if (key == "drdb_growth") {
      c.drdb_growth = static_cast<int>(get_as<int64_t>(value, key));
    } else if (key == "drdb_layers") {
      c.drdb_layers = static_cast<int>(get_as<int64_t>(value, key));
    } else if (key == "seed") {
      c.seed = static_cast<uint64_t>(get_as<int64_t>(value, key));
    } else {
      throw std::invalid_argument("config: unknown model key \"" + key + "\"");
    }
  }
}

ModelConfig model_from_table(const TomlTable& table) {
  const auto* keys = table.count("model") ? &table.at("model")
                     : table.count("")    ? &table.at("")
                                          : nullptr;
  ModelConfig c = ModelConfig::preset(Variant::Lightweight);
  if (keys == nullptr) return c;
  if (auto it = keys->find("variant"); it != keys->end()) {
    c = ModelConfig::preset(parse_variant(get_as<std::string>(it->second, "variant")));
  }
  apply_model_keys(c, *keys);
  c.validate();
  return c;
}

}  // namespace

ModelConfig model_config_from_toml(const std::string& text) {
  return model_from_table(parse_toml(text));
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return model_config_from_toml(ss.str());
}

std::string model_config_to_toml(const ModelConfig& c) {
  std::ostringstream os;
  os << "[model]\n";
  os << "variant = \"" << variant_name(c.variant) << "\"\n";
  os << "block = \"" << (c.block_kind == BlockKind::Pdub ? "pdub" : "drdb") << "\"\n";
  os << "blocks = " << c.num_blocks << "\n";
  os << "encoder_channels = " << c.encoder_channels << "\n";
  os << "trunk_channels = " << c.trunk_channels << "\n";
  os << "weight_sharing = " << (c.weight_sharing ? "true" : "false") << "\n";
  os << "align_resolution = \"" << (c.align_resolution == AlignRes::Full ? "full" : "half")
     << "\"\n";
  os << "upsample = \""
     << (c.upsample == UpsampleKind::Bilinear ? "bilinear" : "tconv") << "\"\n";
  os << "pdub_dilations = [" << c.pdub_dilations[0] << ", " << c.pdub_dilations[1] << ", "
     << c.pdub_dilations[2] << "]\n";
  os << "pdub_widths = [" << c.pdub_widths[0] << ", " << c.pdub_widths[1] << ", "
     << c.pdub_widths[2] << "]\n";
  os << "align_mid_channels = " << c.align_mid_channels << "\n";
  os << "drdb_growth = " << c.drdb_growth << "\n";
  os << "drdb_layers = " << c.drdb_layers << "\n";
  os << "seed = " << c.seed << "\n";
  return os.str();
}

uint64_t config_hash(const ModelConfig& c) { return detail::fnv1a(model_config_to_toml(c)); }

nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["variant"] = variant_name(c.variant);
  j["block"] = c.block_kind == BlockKind::Pdub ? "pdub" : "drdb";
  j["blocks"] = c.num_blocks;
  j["encoder_channels"] = c.encoder_channels;
  j["trunk_channels"] = c.trunk_channels;
  j["weight_sharing"] = c.weight_sharing;
  j["align_resolution"] = c.align_resolution == AlignRes::Full ? "full" : "half";
  j["upsample"] = c.upsample == UpsampleKind::Bilinear ? "bilinear" : "tconv";
  j["pdub_dilations"] = c.pdub_dilations;
  j["pdub_widths"] = c.pdub_widths;
  j["align_mid_channels"] = c.align_mid_channels;
  j["drdb_growth"] = c.drdb_growth;
  j["drdb_layers"] = c.drdb_layers;
  j["seed"] = c.seed;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c = ModelConfig::preset(parse_variant(j.at("variant")));
  c.block_kind = j.at("block") == "pdub" ? BlockKind::Pdub : BlockKind::Drdb;
  c.num_blocks = j.at("blocks");
  c.encoder_channels = j.at("encoder_channels");
  c.trunk_channels = j.at("trunk_channels");
  c.weight_sharing = j.at("weight_sharing");
  c.align_resolution = j.at("align_resolution") == "full" ? AlignRes::Full : AlignRes::Half;
  c.upsample = j.at("upsample") == "bilinear" ? UpsampleKind::Bilinear
                                              : UpsampleKind::TransposedConv;
  for (int i = 0; i < 3; ++i) {
    c.pdub_dilations[i] = j.at("pdub_dilations")[i];
    c.pdub_widths[i] = j.at("pdub_widths")[i];
  }
  c.align_mid_channels = j.at("align_mid_channels");
  c.drdb_growth = j.at("drdb_growth");
  c.drdb_layers = j.at("drdb_layers");
  c.seed = j.at("seed");
  c.validate();
  return c;
}

TrainFileConfig train_config_from_toml(const std::string& text) {
  const TomlTable table = parse_toml(text);
  TrainFileConfig cfg;
  cfg.model = model_from_table(table);

  if (auto it = table.find("schedule"); it != table.end()) {
    for (const auto& [key, value] : it->second) {
      if (key == "base_lr") {
        cfg.schedule.base_lr = get_as<double>(value, key);
      } else if (key == "warmup_steps") {
        cfg.schedule.warmup_steps = get_as<int64_t>(value, key);
      } else if (key == "decay_factor") {
        cfg.schedule.decay_factor = get_as<double>(value, key);
      } else if (key == "decay_interval") {
        cfg.schedule.decay_interval = get_as<int64_t>(value, key);
      } else if (key == "batch_size") {
        cfg.schedule.batch_size = static_cast<int>(get_as<int64_t>(value, key));
      } else {
        throw std::invalid_argument("config: unknown schedule key \"" + key + "\"");
      }
    }
  }
  if (auto it = table.find("train"); it != table.end()) {
    for (const auto& [key, value] : it->second) {
      if (key == "steps") {
        cfg.options.steps = get_as<int64_t>(value, key);
      } else if (key == "patch_size") {
        cfg.options.patch_size = get_as<int64_t>(value, key);
      } else if (key == "patch_overlap") {
        cfg.options.patch_overlap = get_as<int64_t>(value, key);
      } else if (key == "ema_interval") {
        cfg.options.ema_interval = get_as<int64_t>(value, key);
      } else if (key == "ema_decay") {
        cfg.options.ema_decay = get_as<double>(value, key);
      } else if (key == "eval_interval") {
        cfg.options.eval_interval = get_as<int64_t>(value, key);
      } else if (key == "checkpoint_interval") {
        cfg.options.checkpoint_interval = get_as<int64_t>(value, key);
      } else if (key == "holdout_scenes") {
        cfg.options.holdout_scenes = static_cast<int>(get_as<int64_t>(value, key));
      } else if (key == "seed") {
        cfg.options.seed = static_cast<uint64_t>(get_as<int64_t>(value, key));
      } else {
        throw std::invalid_argument("config: unknown train key \"" + key + "\"");
      }
    }
  }
  if (auto it = table.find("loss"); it != table.end()) {
    for (const auto& [key, value] : it->second) {
      if (key == "mu") {
        cfg.options.loss.mu = get_as<double>(value, key);
      } else if (key == "alpha") {
        cfg.options.loss.alpha = get_as<double>(value, key);
      } else if (key == "beta") {
        cfg.options.loss.beta = get_as<double>(value, key);
      } else if (key == "normalization_percentile") {
        cfg.options.loss.normalization_percentile = get_as<double>(value, key);
      } else if (key == "linear_denominator") {
        cfg.options.loss.linear_denominator = get_as<bool>(value, key);
      } else {
        throw std::invalid_argument("config: unknown loss key \"" + key + "\"");
      }
    }
  }
  cfg.options.loss.validate();
  return cfg;
}

TrainFileConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return train_config_from_toml(ss.str());
}

}  // namespace eapnet
