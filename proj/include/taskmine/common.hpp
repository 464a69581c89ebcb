#ifndef TASKMINE_COMMON_HPP
#define TASKMINE_COMMON_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace taskmine {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// splitmix64 step; used to derive per-stage and per-episode seeds from one
/// global seed so every stage is independently re-runnable.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t s = root ^ (0xa0761d6478bd642fULL * (stream + 1));
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    return a ^ (b << 1);
}

/// Seeded RNG with portable helpers. The standard distributions are
/// implementation-defined, so all draws go through these.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next() { return eng_(); }

    /// Uniform in [0, 1).
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform in {0, ..., n-1}. n must be positive.
    std::size_t below(std::size_t n) {
        // modulo bias is negligible for the small n used here
        return static_cast<std::size_t>(next() % n);
    }

    template <class T>
    const T& pick(const std::vector<T>& v) {
        return v[below(v.size())];
    }

    bool chance(double p) { return uniform01() < p; }

  private:
    std::mt19937_64 eng_;
};

/// FNV-1a 64-bit, hex-encoded. Stable across platforms; keys the LLM
/// record/replay store.
inline std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

} // namespace taskmine

#endif
