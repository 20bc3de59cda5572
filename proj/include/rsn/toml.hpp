#pragma once

#include <string>

#include <json.hpp>

namespace rsn {

// Minimal TOML subset sufficient for pipeline configs: line comments (#),
// [table] / [table.sub] headers, bare keys, and scalar values (quoted
// strings with \\ \" \n \t escapes, integers, floats, booleans) plus
// single-line arrays of scalars. Parsed into a JSON object tree.
nlohmann::json toml_parse(const std::string& text);
nlohmann::json toml_parse_file(const std::string& path);

} // namespace rsn
