#pragma once

#include <json.hpp>

#include <filesystem>

namespace spx {

nlohmann::json read_json_file(const std::filesystem::path & path);
// Two-space indented dump with a trailing newline.
void write_json_file(const nlohmann::json & j, const std::filesystem::path & path);

} // namespace spx
