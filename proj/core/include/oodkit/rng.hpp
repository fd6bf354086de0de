#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace oodkit {

/// Seeded source of uniforms and normals with a platform-independent draw
/// sequence. std::mt19937_64 output is fixed by the standard; the standard
/// distributions are not, so conversions are done here.
///
/// Normals come from Box-Muller: each pair of uniforms (u1, u2) yields
/// r*cos(t) first and r*sin(t) on the following call.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in the open interval (0, 1), 53 bits of resolution.
    double uniform() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace oodkit
