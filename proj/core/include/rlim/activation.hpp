#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "rlim/errors.hpp"

namespace rlim {

enum class ActivationKind { tanh_act, linear, smooth_custom };

// Scalar nonlinearity with derivatives up to third order.  Derivatives above
// first order must be bounded by c_rho (linear growth of rho itself is fine).
struct ActivationSpec {
    ActivationKind kind = ActivationKind::tanh_act;
    double a = 1.0;  // slope, meaningful for kind == linear only
    std::function<double(double)> rho;
    std::function<double(double)> d1;
    std::function<double(double)> d2;
    std::function<double(double)> d3;
    double c_rho = 1.0;

    static ActivationSpec make_tanh() {
        ActivationSpec act;
        act.kind = ActivationKind::tanh_act;
        act.rho = [](double x) { return std::tanh(x); };
        act.d1 = [](double x) {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        };
        act.d2 = [](double x) {
            const double t = std::tanh(x);
            return -2.0 * t * (1.0 - t * t);
        };
        act.d3 = [](double x) {
            const double t = std::tanh(x);
            const double s = 1.0 - t * t;
            return -2.0 * s * (s - 2.0 * t * t);
        };
        act.c_rho = 2.0;
        return act;
    }

    static ActivationSpec make_linear(double slope) {
        ActivationSpec act;
        act.kind = ActivationKind::linear;
        act.a = slope;
        act.rho = [slope](double x) { return slope * x; };
        act.d1 = [slope](double) { return slope; };
        act.d2 = [](double) { return 0.0; };
        act.d3 = [](double) { return 0.0; };
        act.c_rho = std::abs(slope);
        return act;
    }

    static ActivationSpec make_custom(std::function<double(double)> rho,
                                      std::function<double(double)> d1,
                                      std::function<double(double)> d2,
                                      std::function<double(double)> d3, double c_rho) {
        ActivationSpec act;
        act.kind = ActivationKind::smooth_custom;
        act.rho = std::move(rho);
        act.d1 = std::move(d1);
        act.d2 = std::move(d2);
        act.d3 = std::move(d3);
        act.c_rho = c_rho;
        return act;
    }
};

inline ActivationSpec activation_from_name(const std::string& name, double a) {
    if (name == "tanh") return ActivationSpec::make_tanh();
    if (name == "linear") return ActivationSpec::make_linear(a);
    throw InvalidConfigError("unknown activation kind: '" + name + "'");
}

}  // namespace rlim
