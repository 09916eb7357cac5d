#pragma once

// Flat key=value run configuration: one assignment per line, '#' comments,
// duplicate and unknown keys rejected. Every command resolves its defaults
// through one of these and echoes the result next to its outputs.

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace evseek {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  bool has(const std::string& key) const;

  // Typed getters; conversion failures name the key. The defaulted forms
  // fall back when the key is absent.
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_string_list(
      const std::string& key, const std::vector<std::string>& fallback) const;

  // Throws ConfigError naming the first key not in `allowed`.
  void check_known(const std::set<std::string>& allowed) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::string raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

// Comma-separated parsing used by both config values and CLI flags.
std::vector<std::string> split_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text,
                                      const std::string& what);
std::vector<int> parse_int_list(const std::string& text,
                                const std::string& what);

}  // namespace evseek
