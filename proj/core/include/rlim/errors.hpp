#pragma once

#include <stdexcept>
#include <string>

namespace rlim {

// Configuration rejected before any computation starts.
class InvalidConfigError : public std::runtime_error {
public:
    explicit InvalidConfigError(const std::string& what) : std::runtime_error(what) {}
};

class InvalidInputError : public std::runtime_error {
public:
    explicit InvalidInputError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value encountered mid-computation. Carries enough context to
// locate the blow-up (training step / layer / ODE position).
class OverflowError : public std::runtime_error {
public:
    OverflowError(const std::string& what, double s, double norm)
        : std::runtime_error(what), s_position(s), state_norm(norm) {}
    double s_position = 0.0;
    double state_norm = 0.0;
};

class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), last_residual(residual) {}
    double last_residual = 0.0;
};

// Raised when two runs that must share coupled randomness do not.
class CouplingError : public std::runtime_error {
public:
    explicit CouplingError(const std::string& what) : std::runtime_error(what) {}
};

class IllConditionedCovarianceError : public std::runtime_error {
public:
    IllConditionedCovarianceError(const std::string& what, double min_eig)
        : std::runtime_error(what), min_eigenvalue(min_eig) {}
    double min_eigenvalue = 0.0;
};

class UnderdeterminedFitError : public std::runtime_error {
public:
    explicit UnderdeterminedFitError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace rlim
