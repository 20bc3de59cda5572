#pragma once

#include <cstdint>
#include <string>

namespace rsn {

// Lowercase hex SHA-256.
std::string sha256_bytes(const void* data, std::size_t len);
std::string sha256_string(const std::string& s);
std::string sha256_file(const std::string& path);

} // namespace rsn
