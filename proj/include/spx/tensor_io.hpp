#pragma once

#include "spx/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace spx {

// SPXT tensor file:
//   "SPXT" | u32 version=1 | u8 dtype | u8 ndim=2 | u64 rows | u64 cols | payload
// All fields little-endian, payload row-major. dtype 0 is float32 (the standard
// encoding); dtype 1 is float64 for lossless storage.
enum class TensorDtype : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

inline constexpr std::uint32_t kTensorVersion = 1;

std::string encode_tensor(const Matrix & m, TensorDtype dtype = TensorDtype::kFloat32);
Matrix decode_tensor(const std::string & bytes);

void tensor_codec_write(const Matrix & m, const std::filesystem::path & path,
                        TensorDtype dtype = TensorDtype::kFloat32);
Matrix tensor_codec_read(const std::filesystem::path & path);

// Round every entry to the nearest float32 so the value survives the codec exactly.
Matrix round_to_float32(Matrix m);

} // namespace spx
