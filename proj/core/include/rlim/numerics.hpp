#pragma once

#include <functional>

#include <Eigen/Core>

#include "rlim/errors.hpp"

namespace rlim {

// RMS norm ||v||_Dbar = sqrt( (1/D) sum v_d^2 ).
inline double rms_norm(const Eigen::VectorXd& v) {
    if (v.size() == 0) throw InvalidInputError("rms_norm: empty vector");
    return std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

// RMS inner product <u,v>_Dbar = (1/D) sum u_d v_d.
inline double rms_dot(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    if (u.size() != v.size() || u.size() == 0)
        throw InvalidInputError("rms_dot: size mismatch or empty");
    return u.dot(v) / static_cast<double>(u.size());
}

// Central-difference gradient, one coordinate at a time.
inline Eigen::VectorXd finite_diff_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    double h) {
    if (h <= 0.0) throw InvalidInputError("finite_diff_gradient: h must be > 0");
    Eigen::VectorXd grad(x.size());
    Eigen::VectorXd xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double fp = f(xp);
        xp[i] = orig - h;
        const double fm = f(xp);
        xp[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// Ordinary least squares y = a + b x; returns (intercept, slope, stderr of slope).
struct OlsFit {
    double intercept = 0.0;
    double slope = 0.0;
    double slope_stderr = 0.0;
    double r2 = 0.0;
};

OlsFit ols_fit(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

}  // namespace rlim
