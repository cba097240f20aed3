// Flat "key = value" text files: checkpoint manifests, dataset manifests,
// and CLI config files all share this format. '#' starts a comment.
#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rcf/tensor.hpp"

namespace rcf {

using KvPairs = std::vector<std::pair<std::string, std::string>>;

inline std::string kv_trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline KvPairs read_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path);
  KvPairs kv;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = kv_trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw format_error(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    kv.emplace_back(kv_trim(t.substr(0, eq)), kv_trim(t.substr(eq + 1)));
  }
  return kv;
}

inline void write_kv_file(const std::string& path, const KvPairs& kv) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw io_error("cannot open for writing: " + path);
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  if (!os) throw io_error("write failed: " + path);
}

inline const std::string* kv_find(const KvPairs& kv, const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return &v;
  return nullptr;
}

inline std::string kv_get(const KvPairs& kv, const std::string& key) {
  if (const auto* v = kv_find(kv, key)) return *v;
  throw format_error("missing key '" + key + "'");
}

// Round-trip-exact double formatting for kv files: shortest of %.15g/%.16g/%.17g
// that parses back to the same bits, so 0.9 prints as "0.9".
inline std::string kv_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return std::string(buf);
}

inline std::vector<size_t> parse_size_list(const std::string& s) {
  std::vector<size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = kv_trim(item);
    if (t.empty()) continue;
    out.push_back(std::stoull(t));
  }
  return out;
}

inline std::string join_size_list(const std::vector<size_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace rcf
