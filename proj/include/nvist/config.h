#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "nvist/attention.h"
#include "nvist/model.h"

namespace nvist {

/// Plain-text key=value configuration with [section] headers. Keys are
/// addressed as "section.key". Every getter marks its key as consumed so that
/// leftover keys can be rejected.
class KeyValueConfig {
 public:
  /// Throws ConfigError naming `source` and the line of any malformed entry.
  static KeyValueConfig parse(const std::string& text, const std::string& source = "<config>");
  /// Throws std::runtime_error when the file cannot be read.
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  std::size_t get_size(const std::string& key, std::size_t fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);

  /// Throws ConfigError listing every key no getter asked for.
  void reject_unconsumed() const;

  /// Sections in alphabetical order, keys sorted within each.
  std::string dump() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

/// "model.preset" (toy, paper or tiny) then per-field overrides under
/// [encoder], [decoder], [renderer] and [mae].
ModelConfig read_model_config(KeyValueConfig& kv);
/// Writes every ModelConfig field so read_model_config reproduces it exactly.
void write_model_config(const ModelConfig& config, KeyValueConfig& kv);

}  // namespace nvist
