#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace tracekit {

// SHA-256 of a byte string, lowercase hex. Used for artifact manifests.
std::string sha256_hex(std::string_view data);

// SHA-256 of a file's contents.
std::string sha256_file(const std::string& path);

}  // namespace tracekit
