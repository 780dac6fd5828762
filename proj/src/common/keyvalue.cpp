#include "octqsm/keyvalue.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "byte_io.hpp"

namespace octqsm::kv {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto at = s.find(sep, start);
    parts.push_back(trim(s.substr(start, at - start)));
    if (at == std::string::npos) break;
    start = at + 1;
  }
  return parts;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& p : split(s)) {
    std::size_t used = 0;
    const int v = std::stoi(p, &used);
    if (used != p.size()) throw std::invalid_argument("not an integer: '" + p + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& p : split(s)) {
    std::size_t used = 0;
    const double v = std::stod(p, &used);
    if (used != p.size()) throw std::invalid_argument("not a number: '" + p + "'");
    out.push_back(v);
  }
  return out;
}

std::array<int, 3> parse_triple(const std::string& s) {
  const auto v = parse_ints(s);
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw std::invalid_argument("expected 1 or 3 comma-separated integers, got '" + s + "'");
}

Map parse(const std::string& text, const std::string& origin) {
  Map out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument(origin + ":" + std::to_string(number) + ": expected key=value");
    out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return out;
}

Map read_file(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path.string());
  return parse(std::string(bytes.begin(), bytes.end()), path.string());
}

std::string serialize(const Map& map) {
  std::string out;
  for (const auto& [k, v] : map) out += k + "=" + v + "\n";
  return out;
}

Map with_prefix(const Map& map, const std::string& prefix) {
  Map out;
  for (const auto& [k, v] : map)
    if (k.rfind(prefix, 0) == 0) out[k.substr(prefix.size())] = v;
  return out;
}

}  // namespace octqsm::kv
