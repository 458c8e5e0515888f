#pragma once

#include <boost/property_tree/ptree.hpp>

#include <optional>
#include <string>
#include <vector>

namespace deduct {

/// INI-style configuration (`[section]` headers, `key = value` lines).
/// Parsing is delegated to boost::property_tree; this wrapper adds typed
/// lookups that raise ConfigError with the offending `section.key`.
class IniConfig {
 public:
  IniConfig() = default;
  static IniConfig load(const std::string& path);
  static IniConfig parse(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  long long get_int(const std::string& section, const std::string& key, long long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                  const std::vector<double>& fallback) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

 private:
  std::optional<std::string> raw(const std::string& section, const std::string& key) const;
  boost::property_tree::ptree tree_;
};

/// Parses "0,0.5,1.6" into doubles; throws ConfigError on junk.
std::vector<double> parse_double_list(const std::string& text);

}  // namespace deduct
