#include "spx/json_io.hpp"

#include "spx/error.hpp"

#include <fstream>

namespace spx {

nlohmann::json read_json_file(const std::filesystem::path & path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), ErrorCode::kIo, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception & e) {
        fail(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
    }
}

void write_json_file(const nlohmann::json & j, const std::filesystem::path & path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), ErrorCode::kIo, "cannot write " + path.string());
    os << j.dump(2) << '\n';
    require(os.good(), ErrorCode::kIo, "write failed for " + path.string());
}

} // namespace spx
