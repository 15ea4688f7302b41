#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace egcnn {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Plain-text key=value settings. Blank lines and lines starting with '#' are ignored.
class RunConfig {
 public:
  RunConfig() = default;

  static RunConfig parse(std::istream& in, const std::string& origin = "<config>") {
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (cfg.values_.count(key) && !is_list_key(key))
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      cfg.append(key, trim(t.substr(eq + 1)));
    }
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path + "'");
    return parse(in, path);
  }

  /// Throw on the first key not in `allowed`.
  void require_known(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : values_)
      if (!allowed.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  /// Repeated keys accumulate with '\n' separators (used for list-valued options).
  void append(const std::string& key, const std::string& value) {
    auto [it, inserted] = values_.try_emplace(key, value);
    if (!inserted) it->second += "\n" + value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback = {}) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string to_string() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) {
      std::istringstream lines(v);
      std::string item;
      bool any = false;
      while (std::getline(lines, item)) {
        os << k << '=' << item << '\n';
        any = true;
      }
      if (!any) os << k << "=\n";
    }
    return os.str();
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write config '" + path + "'");
    out << to_string();
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

 private:
  static bool is_list_key(const std::string& key) { return key == "branch"; }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace egcnn
