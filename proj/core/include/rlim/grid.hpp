#pragma once

#include <vector>

#include "rlim/errors.hpp"

namespace rlim {

// Uniform grid on [0,1] with points s_j = j / n_steps, j in [0:n_steps].
struct SGrid {
    int n_steps = 200;

    SGrid() = default;
    explicit SGrid(int steps) : n_steps(steps) {
        if (steps < 1) throw InvalidConfigError("SGrid: n_steps must be >= 1");
    }

    int size() const { return n_steps + 1; }
    double ds() const { return 1.0 / n_steps; }
    double s(int j) const { return static_cast<double>(j) / n_steps; }

    std::vector<double> points() const {
        std::vector<double> pts(static_cast<std::size_t>(size()));
        for (int j = 0; j < size(); ++j) pts[static_cast<std::size_t>(j)] = s(j);
        return pts;
    }
};

}  // namespace rlim
