#pragma once

#include <string>
#include <vector>

#include "json.hpp"

// Checkpoint container: one JSON header line (format, version, section tag,
// architecture metadata) followed by the flat parameter array as raw
// little-endian doubles. Denoisers and heads share the container and differ
// by section tag.

namespace mdlab {

inline constexpr const char* kCkptFormat = "mdlab-ckpt";
inline constexpr int kCkptVersion = 1;

void save_checkpoint(const std::string& path, const nlohmann::json& header,
                     const std::vector<double>& params);

// Returns the header; fills params. Validates format/version and that the
// section matches when expected_section is non-empty.
nlohmann::json load_checkpoint(const std::string& path, const std::string& expected_section,
                               std::vector<double>& params);

}  // namespace mdlab
