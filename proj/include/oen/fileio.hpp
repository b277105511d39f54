#pragma once

#include <string>

namespace oen {

// Reads a whole file; throws std::runtime_error if missing/unreadable.
std::string read_file_bytes(const std::string& path);

// Writes via a temp file in the same directory plus rename, so failures never
// leave a partial file at `path`.
void atomic_write_file(const std::string& path, const std::string& content);

bool file_exists(const std::string& path);

}  // namespace oen
