#include "nvist/config.h"

#include <charconv>
#include <fstream>
#include <sstream>

namespace nvist {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& source) {
  KeyValueConfig kv;
  std::istringstream in(text);
  std::string line, section;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (kv.values_.count(full)) throw ConfigError(where + ": duplicate key " + full);
    kv.values_[full] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key " + key + " expects a number, got '" + it->second + "'");
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key " + key + " expects a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config key " + key + " expects true or false, got '" + it->second + "'");
}

void KeyValueConfig::reject_unconsumed() const {
  std::string unknown;
  for (const auto& [k, v] : values_) {
    if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  }
  if (!unknown.empty()) throw ConfigError("unknown config key(s): " + unknown);
}

std::string KeyValueConfig::dump() const {
  std::map<std::string, std::map<std::string, std::string>> sections;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    if (dot == std::string::npos) {
      sections[""][k] = v;
    } else {
      sections[k.substr(0, dot)][k.substr(dot + 1)] = v;
    }
  }
  std::ostringstream os;
  for (const auto& [name, entries] : sections) {
    if (!name.empty()) os << "[" << name << "]\n";
    for (const auto& [k, v] : entries) os << k << " = " << v << "\n";
    os << "\n";
  }
  return os.str();
}

ModelConfig read_model_config(KeyValueConfig& kv) {
  const std::string preset = kv.get_string("model.preset", "toy");
  ModelConfig c;
  if (preset == "toy") {
    c = ModelConfig::toy();
  } else if (preset == "paper") {
    c = ModelConfig::paper();
  } else if (preset == "tiny") {
    c = ModelConfig::tiny();
  } else {
    throw ConfigError("model.preset must be toy, paper or tiny, got '" + preset + "'");
  }
  auto& e = c.encoder;
  e.image_height = kv.get_size("encoder.image_height", e.image_height);
  e.image_width = kv.get_size("encoder.image_width", e.image_width);
  e.patch = kv.get_size("encoder.patch", e.patch);
  e.depth = kv.get_size("encoder.depth", e.depth);
  e.heads = kv.get_size("encoder.heads", e.heads);
  e.width = kv.get_size("encoder.width", e.width);
  auto& d = c.decoder;
  d.vm_resolution = kv.get_size("decoder.vm_resolution", d.vm_resolution);
  d.vm_channels = kv.get_size("decoder.vm_channels", d.vm_channels);
  d.patch = kv.get_size("decoder.patch", d.patch);
  d.depth = kv.get_size("decoder.depth", d.depth);
  d.heads = kv.get_size("decoder.heads", d.heads);
  d.width = kv.get_size("decoder.width", d.width);
  d.adaln_hidden = kv.get_size("decoder.adaln_hidden", d.adaln_hidden);
  d.gate_init = kv.get_double("decoder.gate_init", d.gate_init);
  d.head_scale = kv.get_double("decoder.head_scale", d.head_scale);
  d.head_bias = kv.get_double("decoder.head_bias", d.head_bias);
  c.renderer.hidden = kv.get_size("renderer.hidden", c.renderer.hidden);
  c.renderer.samples = kv.get_size("renderer.samples", c.renderer.samples);
  c.mae.mask_ratio = kv.get_double("mae.mask_ratio", c.mae.mask_ratio);
  c.mae.width = kv.get_size("mae.width", c.mae.width);
  c.mae.depth = kv.get_size("mae.depth", c.mae.depth);
  c.mae.heads = kv.get_size("mae.heads", c.mae.heads);
  c.validate();
  return c;
}

void write_model_config(const ModelConfig& c, KeyValueConfig& kv) {
  auto put = [&](const std::string& k, std::size_t v) { kv.set(k, std::to_string(v)); };
  auto putd = [&](const std::string& k, double v) { kv.set(k, format_double(v)); };
  kv.set("model.preset", "toy");
  put("encoder.image_height", c.encoder.image_height);
  put("encoder.image_width", c.encoder.image_width);
  put("encoder.patch", c.encoder.patch);
  put("encoder.depth", c.encoder.depth);
  put("encoder.heads", c.encoder.heads);
  put("encoder.width", c.encoder.width);
  put("decoder.vm_resolution", c.decoder.vm_resolution);
  put("decoder.vm_channels", c.decoder.vm_channels);
  put("decoder.patch", c.decoder.patch);
  put("decoder.depth", c.decoder.depth);
  put("decoder.heads", c.decoder.heads);
  put("decoder.width", c.decoder.width);
  put("decoder.adaln_hidden", c.decoder.adaln_hidden);
  putd("decoder.gate_init", c.decoder.gate_init);
  putd("decoder.head_scale", c.decoder.head_scale);
  putd("decoder.head_bias", c.decoder.head_bias);
  put("renderer.hidden", c.renderer.hidden);
  put("renderer.samples", c.renderer.samples);
  putd("mae.mask_ratio", c.mae.mask_ratio);
  put("mae.width", c.mae.width);
  put("mae.depth", c.mae.depth);
  put("mae.heads", c.mae.heads);
}

}  // namespace nvist
