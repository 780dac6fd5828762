#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

// Flat key=value text: one pair per line, '#' starts a comment line, blank lines ignored.
namespace octqsm::kv {

using Map = std::map<std::string, std::string>;

std::vector<std::string> split(const std::string& s, char sep = ',');
std::string trim(const std::string& s);

/// Shortest form that round-trips a double (%.17g).
std::string format_double(double v);

std::vector<int> parse_ints(const std::string& s);
std::vector<double> parse_doubles(const std::string& s);
/// "n" or "a,b,c".
std::array<int, 3> parse_triple(const std::string& s);

Map parse(const std::string& text, const std::string& origin = "<text>");
Map read_file(const std::filesystem::path& path);
std::string serialize(const Map& map);

/// Entries of `map` whose key starts with `prefix`, with the prefix removed.
Map with_prefix(const Map& map, const std::string& prefix);

}  // namespace octqsm::kv
