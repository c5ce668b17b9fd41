#pragma once

#include <cmath>
#include <functional>
#include <string>

#include <Eigen/Core>

#include "rlim/errors.hpp"
#include "rlim/grid.hpp"

namespace rlim {

using OdeRhs = std::function<Eigen::VectorXd(double s, const Eigen::VectorXd& y)>;

namespace detail {
inline void check_finite(const Eigen::VectorXd& v, double s, const char* where) {
    if (!v.allFinite())
        throw OverflowError(std::string("non-finite state in ") + where +
                                " at s=" + std::to_string(s),
                            s, v.norm());
}
}  // namespace detail

// One classical 4-stage Runge-Kutta step.  ds may be negative (backward
// integration).  Throws OverflowError on non-finite intermediates.
template <class F>
Eigen::VectorXd rk4_step(F&& f, const Eigen::VectorXd& y, double s, double ds) {
    const Eigen::VectorXd k1 = f(s, y);
    detail::check_finite(k1, s, "rk4 stage 1");
    const Eigen::VectorXd k2 = f(s + 0.5 * ds, y + (0.5 * ds) * k1);
    detail::check_finite(k2, s + 0.5 * ds, "rk4 stage 2");
    const Eigen::VectorXd k3 = f(s + 0.5 * ds, y + (0.5 * ds) * k2);
    detail::check_finite(k3, s + 0.5 * ds, "rk4 stage 3");
    const Eigen::VectorXd k4 = f(s + ds, y + ds * k3);
    detail::check_finite(k4, s + ds, "rk4 stage 4");
    Eigen::VectorXd out = y + (ds / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::check_finite(out, s + ds, "rk4 update");
    return out;
}

// Integrates y' = f(s,y) across the whole grid, forward from y(0) or backward
// from y(1).  Returns the trajectory at every grid node (index = grid node).
template <class F>
std::vector<Eigen::VectorXd> rk4_integrate(F&& f, const Eigen::VectorXd& y0,
                                           const SGrid& grid, bool forward = true) {
    std::vector<Eigen::VectorXd> traj(static_cast<std::size_t>(grid.size()));
    const double ds = grid.ds();
    if (forward) {
        traj[0] = y0;
        for (int j = 0; j < grid.n_steps; ++j)
            traj[static_cast<std::size_t>(j + 1)] =
                rk4_step(f, traj[static_cast<std::size_t>(j)], grid.s(j), ds);
    } else {
        traj[static_cast<std::size_t>(grid.n_steps)] = y0;
        for (int j = grid.n_steps; j > 0; --j)
            traj[static_cast<std::size_t>(j - 1)] =
                rk4_step(f, traj[static_cast<std::size_t>(j)], grid.s(j), -ds);
    }
    return traj;
}

}  // namespace rlim
