#pragma once

#include <cstdint>
#include <string_view>

namespace fbsr {

/// Well-mixed child seed for an independent random stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

/// Stable 64-bit hash (FNV-1a) for naming streams.
std::uint64_t stable_hash(std::string_view text);

}  // namespace fbsr
