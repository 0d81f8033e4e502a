#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dat {

// 64-bit FNV-1a over arbitrary bytes.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic random stream derived from (master_seed, component label, index).
// Adding a new labelled consumer never perturbs existing streams.
class RngStream {
  public:
    RngStream(uint64_t master_seed, std::string_view label, uint64_t index = 0) {
        uint64_t h = fnv1a64(&master_seed, sizeof(master_seed));
        h = fnv1a64(label.data(), label.size(), h);
        h = fnv1a64(&index, sizeof(index), h);
        state_ = h;
        // burn one output so near-identical hashes decorrelate
        splitmix64(state_);
    }

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0,n), n >= 1
    int uniform_int(int n) { return int(next_u64() % uint64_t(n)); }

    // standard normal, Box-Muller
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

  private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dat
