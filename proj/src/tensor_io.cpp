#include "spx/tensor_io.hpp"

#include "spx/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace spx {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'X', 'T'};
constexpr std::size_t kHeaderSize = 4 + 4 + 1 + 1 + 8 + 8;

template <typename T>
void put_le(std::string & out, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>(u & 0xFF));
        u = static_cast<U>(u >> 8);
    }
}

template <typename T>
T get_le(const std::string & in, std::size_t offset) {
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = sizeof(T); i-- > 0;) {
        u = static_cast<U>((u << 8) | static_cast<unsigned char>(in[offset + i]));
    }
    return static_cast<T>(u);
}

} // namespace

std::string encode_tensor(const Matrix & m, TensorDtype dtype) {
    require(m.all_finite(), ErrorCode::kNonFinite, "encode_tensor: matrix has non-finite entries");
    const std::size_t elem = dtype == TensorDtype::kFloat32 ? 4 : 8;
    std::string out;
    out.reserve(kHeaderSize + m.size() * elem);
    out.append(kMagic, 4);
    put_le<std::uint32_t>(out, kTensorVersion);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    put_le<std::uint8_t>(out, 2);
    put_le<std::uint64_t>(out, m.rows());
    put_le<std::uint64_t>(out, m.cols());
    for (double v : m.data()) {
        if (dtype == TensorDtype::kFloat32) {
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        } else {
            put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    return out;
}

Matrix decode_tensor(const std::string & bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        fail(ErrorCode::kBadMagic, "tensor: bad magic");
    }
    require(bytes.size() >= kHeaderSize, ErrorCode::kTruncated, "tensor: truncated header");
    const auto version = get_le<std::uint32_t>(bytes, 4);
    require(version == kTensorVersion, ErrorCode::kUnsupportedFormat,
            "tensor: unsupported version " + std::to_string(version));
    const auto dtype = get_le<std::uint8_t>(bytes, 8);
    require(dtype <= 1, ErrorCode::kUnsupportedFormat, "tensor: unsupported dtype " + std::to_string(dtype));
    const auto ndim = get_le<std::uint8_t>(bytes, 9);
    require(ndim == 2, ErrorCode::kUnsupportedFormat, "tensor: expected ndim 2, got " + std::to_string(ndim));
    const auto rows = get_le<std::uint64_t>(bytes, 10);
    const auto cols = get_le<std::uint64_t>(bytes, 18);

    const std::uint64_t elem = dtype == 0 ? 4 : 8;
    constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
    if ((cols != 0 && rows > kMax / cols) || (rows * cols > kMax / elem) ||
        rows * cols > std::numeric_limits<std::size_t>::max() / sizeof(double)) {
        fail(ErrorCode::kShapeOverflow, "tensor: shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                                            " overflows");
    }
    const std::uint64_t payload = rows * cols * elem;
    const std::uint64_t available = bytes.size() - kHeaderSize;
    require(available >= payload, ErrorCode::kTruncated, "tensor: truncated payload");
    require(available == payload, ErrorCode::kUnsupportedFormat, "tensor: trailing bytes after payload");

    std::vector<double> data(static_cast<std::size_t>(rows * cols));
    std::size_t off = kHeaderSize;
    for (auto & v : data) {
        if (dtype == 0) {
            v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, off)));
            off += 4;
        } else {
            v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, off));
            off += 8;
        }
    }
    Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), std::move(data));
    require(m.all_finite(), ErrorCode::kNonFinite, "tensor: payload has non-finite entries");
    return m;
}

void tensor_codec_write(const Matrix & m, const std::filesystem::path & path, TensorDtype dtype) {
    const std::string bytes = encode_tensor(m, dtype);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(f), ErrorCode::kIo, "write failed: " + path.string());
}

Matrix tensor_codec_read(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_tensor(bytes);
}

Matrix round_to_float32(Matrix m) {
    for (auto & v : m.data()) {
        v = static_cast<double>(static_cast<float>(v));
    }
    return m;
}

} // namespace spx
