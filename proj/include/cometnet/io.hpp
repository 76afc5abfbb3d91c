#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace cometnet {

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partial artifact.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);

/// Stable pretty-printed form used for every JSON artifact.
std::string dump_json(const nlohmann::json& j);

}  // namespace cometnet
