#include "deduct/config.hpp"

#include "deduct/error.hpp"

#include <boost/property_tree/ini_parser.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

namespace deduct {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// Strips trailing "# comment" / "; comment" which the ini parser keeps.
std::string strip_comment(const std::string& v) {
  const auto pos = v.find_first_of("#;");
  return trim(pos == std::string::npos ? v : v.substr(0, pos));
}

double to_double(const std::string& text, const std::string& where) {
  double out = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  const auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ConfigError("expected a number for " + where + ", got '" + text + "'");
  }
  return out;
}

}  // namespace

IniConfig IniConfig::load(const std::string& path) {
  IniConfig cfg;
  try {
    boost::property_tree::ini_parser::read_ini(path, cfg.tree_);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cannot read config " + path + ": " + e.message());
  }
  return cfg;
}

IniConfig IniConfig::parse(const std::string& text) {
  IniConfig cfg;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, cfg.tree_);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("bad config text: " + e.message());
  }
  return cfg;
}

std::optional<std::string> IniConfig::raw(const std::string& section,
                                          const std::string& key) const {
  const auto sec = tree_.get_child_optional(section);
  if (!sec) return std::nullopt;
  const auto val = sec->get_optional<std::string>(key);
  if (!val) return std::nullopt;
  return strip_comment(*val);
}

bool IniConfig::has(const std::string& section, const std::string& key) const {
  return raw(section, key).has_value();
}

std::string IniConfig::get_string(const std::string& section, const std::string& key,
                                  const std::string& fallback) const {
  return raw(section, key).value_or(fallback);
}

double IniConfig::get_double(const std::string& section, const std::string& key,
                             double fallback) const {
  const auto v = raw(section, key);
  return v ? to_double(*v, section + "." + key) : fallback;
}

long long IniConfig::get_int(const std::string& section, const std::string& key,
                             long long fallback) const {
  const auto v = raw(section, key);
  if (!v) return fallback;
  long long out = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
    throw ConfigError("expected an integer for " + section + "." + key + ", got '" + *v + "'");
  }
  return out;
}

bool IniConfig::get_bool(const std::string& section, const std::string& key,
                         bool fallback) const {
  const auto v = raw(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ConfigError("expected a boolean for " + section + "." + key + ", got '" + *v + "'");
}

std::vector<double> IniConfig::get_doubles(const std::string& section, const std::string& key,
                                           const std::vector<double>& fallback) const {
  const auto v = raw(section, key);
  return v ? parse_double_list(*v) : fallback;
}

void IniConfig::set(const std::string& section, const std::string& key,
                    const std::string& value) {
  tree_.put(boost::property_tree::ptree::path_type(section + "." + key, '.'), value);
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty entry in list '" + text + "'");
    out.push_back(to_double(item, "list '" + text + "'"));
  }
  return out;
}

}  // namespace deduct
