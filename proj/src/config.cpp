#include "lstrl/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "lstrl/error.hpp"

namespace lstrl {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return from_string(buf.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) cfg.parse_line(line, ++lineno);
  return cfg;
}

void RunConfig::parse_line(const std::string& raw, int lineno) {
  std::string line = raw;
  if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
  line = trim(line);
  if (line.empty()) return;
  const auto eq = line.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config line " + std::to_string(lineno) +
                      " is not `key = value`: " + trim(raw));
  const std::string key = trim(line.substr(0, eq));
  const std::string value = trim(line.substr(eq + 1));
  if (key.empty())
    throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
  if (values_.count(key))
    throw ConfigError("duplicate config key '" + key + "' at line " +
                      std::to_string(lineno));
  values_[key] = value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (trim(key).empty()) throw ConfigError("--set with empty key");
  values_[trim(key)] = trim(value);
}

std::string RunConfig::get_str(const std::string& key, const std::string& fallback) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::int64_t RunConfig::get_int(const std::string& key, std::int64_t fallback) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const std::int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + it->second +
                      "'");
  }
}

double RunConfig::get_real(const std::string& key, double fallback) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a real, got '" + it->second + "'");
  }
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::size_t> RunConfig::get_size_list(const std::string& key,
                                                  std::vector<std::size_t> fallback) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<std::size_t> out;
  for (const auto& tok : split_csv(it->second)) {
    try {
      const long long v = std::stoll(tok);
      if (v < 0) throw std::invalid_argument("negative");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects a comma list of sizes, got '" +
                        it->second + "'");
    }
  }
  return out;
}

std::vector<std::string> RunConfig::get_str_list(const std::string& key,
                                                 std::vector<std::string> fallback) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  return split_csv(it->second);
}

void RunConfig::require_all_consumed() const {
  for (const auto& [key, value] : values_) {
    if (!consumed_.count(key))
      throw ConfigError("unknown config key '" + key + "'");
  }
}

}  // namespace lstrl
