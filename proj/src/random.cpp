#include "dosegnn/random.hpp"

namespace dosegnn {

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
    SplitMix64 rng(seed ^ fnv1a(name.data(), name.size()));
    return rng.next();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    SplitMix64 rng(seed ^ (0xD1B54A32D192ED03ULL * (index + 1)));
    return rng.next();
}

}  // namespace dosegnn
