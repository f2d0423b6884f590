#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace ptffsr {

// splitmix64 finalizer. Used both to derive child seeds from (seed, tag,
// user, round, ...) tuples and as the bit mixer inside RandomStream helpers.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stream purposes keep independent derivations from one global seed.
enum class RngPurpose : std::uint64_t {
    model_init = 1,
    client_round = 2,
    server_round = 3,
    shuffle = 4,
    synth = 5,
    tool = 6,
};

inline std::uint64_t derive_seed(std::uint64_t seed, RngPurpose purpose,
                                 std::initializer_list<std::uint64_t> parts = {}) {
    std::uint64_t s = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(purpose)));
    for (std::uint64_t p : parts) s = splitmix64(s ^ splitmix64(p));
    return s;
}

// mt19937_64 with hand-rolled uniform draws. std::uniform_*_distribution is
// implementation-defined, which would make golden files and checkpoints
// compiler-specific; these helpers keep every byte of output portable.
class RandomStream {
  public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Unbiased integer in [0, bound) via rejection sampling.
    std::uint64_t next_below(std::uint64_t bound) {
        // bound == 0 is a caller bug; keep the check cheap.
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            std::uint64_t r = engine_();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform double in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform double in [lo, hi).
    double next_double(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace ptffsr
