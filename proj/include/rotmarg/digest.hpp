#pragma once
#include <string>
#include <string_view>

namespace rotmarg {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents; throws DataError if it cannot be read.
std::string file_sha256(const std::string& path);

} // namespace rotmarg
