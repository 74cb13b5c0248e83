#pragma once

// Deterministic random streams addressed by (master seed, path).
//
// The generator state of a stream is a pure function of its master seed and
// its path, so substreams can be created in any order, on any thread, and
// always replay the same draws. The engine is xoshiro256**; the state is
// filled by running SplitMix64 over a hash of the path.

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <vector>

namespace hcdb {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t x) {
    return splitmix64(x);
}

inline constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace detail

class RngStream {
public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t master_seed, std::vector<std::uint64_t> path = {})
        : master_seed_(master_seed), path_(std::move(path)) {
        reseed();
    }

    RngStream(std::uint64_t master_seed, std::initializer_list<std::uint64_t> path)
        : RngStream(master_seed, std::vector<std::uint64_t>(path)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t result = detail::rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = detail::rotl(s_[3], 45);
        return result;
    }

    // Uniform on the open interval (0, 1) with 53 random bits.
    double uniform() {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Independent substream at path + {index}.
    RngStream child(std::uint64_t index) const {
        std::vector<std::uint64_t> p = path_;
        p.push_back(index);
        return RngStream(master_seed_, std::move(p));
    }

    std::uint64_t master_seed() const { return master_seed_; }
    const std::vector<std::uint64_t>& path() const { return path_; }

private:
    void reseed() {
        std::uint64_t h = detail::mix64(master_seed_ ^ 0x6A09E667F3BCC909ULL);
        std::uint64_t depth = 0;
        for (std::uint64_t p : path_) {
            ++depth;
            h = detail::mix64(h ^ detail::mix64(p + depth * 0xD1B54A32D192ED03ULL));
        }
        std::uint64_t sm = h;
        for (auto& word : s_) word = detail::splitmix64(sm);
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
    }

    std::uint64_t master_seed_;
    std::vector<std::uint64_t> path_;
    std::uint64_t s_[4]{};
};

}  // namespace hcdb
