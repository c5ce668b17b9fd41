#include "rlim/rng.hpp"

#include <cmath>
#include <numbers>

namespace rlim {
namespace {

constexpr std::uint64_t kPhiloxM = 0xD2B74407B1CE6E93ULL;
constexpr std::uint64_t kPhiloxW = 0x9E3779B97F4A7C15ULL;

inline void philox_round(std::uint64_t& x0, std::uint64_t& x1, std::uint64_t key) {
    const unsigned __int128 prod = static_cast<unsigned __int128>(kPhiloxM) * x0;
    const std::uint64_t hi = static_cast<std::uint64_t>(prod >> 64);
    const std::uint64_t lo = static_cast<std::uint64_t>(prod);
    x0 = hi ^ key ^ x1;
    x1 = lo;
}

// Philox2x64-10: counter (c0,c1), key k0.
inline void philox2x64(std::uint64_t c0, std::uint64_t c1, std::uint64_t key,
                       std::uint64_t out[2]) {
    std::uint64_t x0 = c0, x1 = c1, k = key;
    for (int round = 0; round < 10; ++round) {
        philox_round(x0, x1, k);
        k += kPhiloxW;
    }
    out[0] = x0;
    out[1] = x1;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

Rng::Rng(std::uint64_t seed, std::string_view stream)
    : seed_(seed), stream_hash_(fnv1a64(stream)), stream_(stream) {}

Rng Rng::derive(std::string_view label) const {
    std::string child = stream_;
    child += '/';
    child += label;
    return Rng(seed_, child);
}

void Rng::refill_block() {
    philox2x64(counter_++, stream_hash_, seed_, buf_);
    buf_pos_ = 0;
}

std::uint64_t Rng::next_u64() {
    if (buf_pos_ >= 2) refill_block();
    return buf_[buf_pos_++];
}

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform01_open() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
}

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = uniform01_open();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
}

DistFamily dist_family_from_string(const std::string& name) {
    if (name == "gaussian") return DistFamily::gaussian;
    if (name == "uniform") return DistFamily::uniform;
    throw InvalidConfigError("unknown distribution family: '" + name + "'");
}

std::string to_string(DistFamily family) {
    return family == DistFamily::gaussian ? "gaussian" : "uniform";
}

Eigen::VectorXd sample_centered(Rng& rng, const DistKind& dist, Eigen::Index n) {
    if (dist.variance < 0.0)
        throw InvalidConfigError("sample_centered: negative variance " +
                                 std::to_string(dist.variance));
    Eigen::VectorXd out(n);
    if (dist.variance == 0.0) {
        out.setZero();
        return out;
    }
    const double sd = std::sqrt(dist.variance);
    if (dist.family == DistFamily::gaussian) {
        for (Eigen::Index i = 0; i < n; ++i) out[i] = sd * rng.normal();
    } else {
        const double half_width = std::sqrt(3.0) * sd;
        for (Eigen::Index i = 0; i < n; ++i)
            out[i] = rng.uniform(-half_width, half_width);
    }
    return out;
}

}  // namespace rlim
