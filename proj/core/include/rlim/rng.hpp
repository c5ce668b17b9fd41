#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "rlim/errors.hpp"

namespace rlim {

// Counter-based deterministic random stream (Philox2x64-10).
//
// A stream is identified by (seed, label). The label hash sits in the high
// word of the 128-bit counter, so distinct labels index disjoint counter
// ranges and never collide. Draws depend only on (seed, label, position):
// identical streams reproduce bit-identical sequences on any thread layout.
class Rng {
public:
    Rng(std::uint64_t seed, std::string_view stream);

    std::uint64_t seed() const { return seed_; }
    const std::string& stream() const { return stream_; }

    // Child stream "<parent>/<label>"; statistically independent of the parent.
    Rng derive(std::string_view label) const;

    std::uint64_t next_u64();
    // Uniform on [0,1) with 53 random bits.
    double uniform01();
    // Uniform on (0,1]; safe as a log() argument.
    double uniform01_open();
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller (pair cached).
    double normal();

private:
    Rng() = default;
    void refill_block();

    std::uint64_t seed_ = 0;
    std::uint64_t stream_hash_ = 0;
    std::string stream_;
    std::uint64_t counter_ = 0;

    std::uint64_t buf_[2] = {0, 0};
    int buf_pos_ = 2;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

enum class DistFamily { gaussian, uniform };

struct DistKind {
    DistFamily family = DistFamily::gaussian;
    double variance = 1.0;
};

DistFamily dist_family_from_string(const std::string& name);
std::string to_string(DistFamily family);

// n i.i.d. centered samples with the stated variance. Uniform support is
// [-sqrt(3 var), +sqrt(3 var)].
Eigen::VectorXd sample_centered(Rng& rng, const DistKind& dist, Eigen::Index n);

std::uint64_t fnv1a64(std::string_view text);

}  // namespace rlim
