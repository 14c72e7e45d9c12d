#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace spx {

// xoshiro256** seeded through splitmix64. The generator and every distribution
// below are implemented here (no std:: distributions) so that a seed yields the
// same draws with any standard library.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0);

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept;
    // Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    // Unbiased integer in [0, n); n > 0.
    std::uint64_t uniform_index(std::uint64_t n) noexcept;
    // Standard normal via the Marsaglia polar method.
    double normal() noexcept;

    // Independent stream derived from (seed, stream id).
    SeededRng child(std::uint64_t stream_id) const noexcept;
    SeededRng child(std::string_view name) const noexcept;

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> s_{};
};

std::uint64_t splitmix64(std::uint64_t & state) noexcept;
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

} // namespace spx
