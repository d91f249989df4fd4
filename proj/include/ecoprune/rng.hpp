#ifndef ECOPRUNE_RNG_HPP
#define ECOPRUNE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

#include "tensor.hpp"

namespace ecoprune {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace detail

// Seeded stream with explicit uniform/normal implementations so that the
// sequence is identical across platforms. Substreams are derived by
// hashing, so (seed, trajectory id, step) addresses a unique stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(detail::splitmix64(seed)) {}

    Rng derive(std::uint64_t a, std::uint64_t b = 0) const {
        std::uint64_t s = detail::splitmix64(seed_mix_ ^ detail::splitmix64(a) ^
                                             detail::splitmix64(b ^ 0x51ed2701ULL));
        Rng r(s);
        return r;
    }

    // uniform in (0,1), never returning an exact endpoint
    double uniform() {
        std::uint64_t u = gen_();
        double v = (static_cast<double>(u >> 11) + 0.5) * 0x1.0p-53;
        return v;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller from two fresh uniforms; no state beyond the generator
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

    Tensor normal_tensor(std::vector<std::size_t> shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (double& v : t.data) v = normal();
        return t;
    }

private:
    friend class RngSeedAccess;
    std::mt19937_64 gen_;
    std::uint64_t seed_mix_ = gen_();  // consumed once, marks the stream identity
};

}  // namespace ecoprune

#endif
