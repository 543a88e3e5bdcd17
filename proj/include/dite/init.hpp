#pragma once

#include <cmath>
#include <cstdint>

#include "dite/tensor.hpp"

namespace dite {

// Deterministic parameter initialization. splitmix64 + Box-Muller is fully
// specified (unlike std::normal_distribution), so a fixed seed gives the
// same parameters on every platform and across float/double builds.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in (0, 1]
    double next_unit() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// He-style normal fill: std = sqrt(2 / fan_in).
template <class T>
void fill_he_normal(Tensor<T>& t, std::int64_t fan_in, SeededRng& rng) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in > 0 ? fan_in : 1));
    for (auto& v : t.data) v = static_cast<T>(rng.next_normal() * std_dev);
}

template <class T>
void fill_constant(Tensor<T>& t, T v) {
    for (auto& e : t.data) e = v;
}

}  // namespace dite
