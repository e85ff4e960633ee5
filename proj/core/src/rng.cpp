#include "evfl/rng.hpp"

#include <cmath>

#include "evfl/errors.hpp"

namespace evfl {

double Rng::gaussian(double mean, double stddev) {
    // Box-Muller with a cached spare; (0,1] for the log argument.
    if (has_spare_) {
        has_spare_ = false;
        return mean + stddev * spare_;
    }
    double u1 = 1.0 - unit();
    double u2 = unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw DomainError("Rng::index: empty range");
    std::uint64_t m = n;
    std::uint64_t bound = (0 - m) % m;  // 2^64 mod n
    for (;;) {
        std::uint64_t x = next_u64();
        if (x >= bound) return static_cast<std::size_t>(x % m);
    }
}

std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                          std::uint64_t b, std::uint64_t c) {
    return mix_seed(master ^ mix_seed(a ^ mix_seed(b ^ mix_seed(c))));
}

}  // namespace evfl
