#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace lstrl {

// Flat `key = value` configuration document with `#` comments. Every key a
// command reads is marked consumed; leftovers are rejected by name so typos
// surface instead of silently using defaults.
class RunConfig {
 public:
  RunConfig() = default;

  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_string(const std::string& text);

  // CLI override (`--set key=value`); replaces any file value.
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_real(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_size_list(const std::string& key,
                                         std::vector<std::size_t> fallback) const;
  std::vector<std::string> get_str_list(const std::string& key,
                                        std::vector<std::string> fallback) const;

  // Throws ConfigError naming the first key nobody consumed.
  void require_all_consumed() const;

 private:
  void parse_line(const std::string& line, int lineno);

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

}  // namespace lstrl
