#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "rlim/grid.hpp"
#include "rlim/resnet.hpp"
#include "rlim/skeleton.hpp"

namespace rlim {

enum class CurveInterp { linear, hermite };

// Grid-sampled vector-valued function of s with node derivatives, so queries
// between nodes can use cubic Hermite dense output.
struct Curve {
    Eigen::MatrixXd v;   // dim x (n_steps+1)
    Eigen::MatrixXd dv;  // node derivatives, same shape

    Eigen::VectorXd eval(const SGrid& grid, double s, CurveInterp interp) const;
    Eigen::VectorXd at_node(int j) const { return v.col(j); }
};

struct LinearLimitConfig {
    double a = 1.0;  // activation slope
    HPConfig hp;
    Eigen::VectorXd x;       // single datapoint (the limit system is N = 1)
    Eigen::VectorXd y_star;
    int K = 1;               // computes training steps 0..K-1
    SGrid grid{200};
    CurveInterp interp = CurveInterp::hermite;

    void validate() const;
};

// Second-moment description of the linear-activation limit law, built one
// training step at a time.  Index k ranges over completed steps.
struct CovarianceState {
    LinearLimitConfig cfg;
    int steps_done = 0;

    // Column k of Gamma^H: (Gamma^H_{i,k}(s))_{i<=k}, dimension k+1.
    std::vector<Curve> gamma_h_col;
    std::vector<Curve> gamma_b_col;
    // Lambda_{k,i}(s) = E[H_k B_i] for i<k (row) and E[H_i B_k] (col).
    std::vector<Curve> lambda_row;
    std::vector<Curve> lambda_col;
    std::vector<double> lambda_diag;  // Lambda_{k,k}, constant in s
    // Cross-covariances with the embedding rows.
    std::vector<Curve> xi_h_in, xi_h_out, xi_b_in, xi_b_out;
    std::vector<Eigen::VectorXd> y_list;

    // Assembled (k+1)x(k+1) matrices at an arbitrary s (interpolated).
    Eigen::MatrixXd gamma_h_at(double s, int k) const;
    Eigen::MatrixXd gamma_b_at(double s, int k) const;
    // Lambda(i,j) = E[H_i(s) B_j(s)].
    Eigen::MatrixXd lambda_at(double s, int k) const;
    Eigen::MatrixXd gamma_h_node(int node, int k) const;
    Eigen::MatrixXd gamma_b_node(int node, int k) const;
    Eigen::MatrixXd lambda_node(int node, int k) const;

    const std::vector<Eigen::VectorXd>& outputs() const { return y_list; }

    std::string to_json() const;
};

// Interaction matrix M_k(s) built from the linear-case skeleton gradients and
// the past covariance slices (k x k).
Eigen::MatrixXd linear_m_matrix(const Eigen::MatrixXd& gamma_h,
                                const Eigen::MatrixXd& gamma_b, int k, double a,
                                const HPConfig& hp);
Eigen::MatrixXd linear_m_matrix(const CovarianceState& state, int node, int k);

// Appends training step k (forward covariance ODEs, outputs, backward ODEs,
// diagonal closure).  Requires state complete through step k-1.
void linear_limit_step(CovarianceState& state, int k);

CovarianceState linear_limit_run(const LinearLimitConfig& cfg);

// Limit coordinate trajectories coupled to one embedding row pair:
// H_j(s) = xi^{H,in}_j(s).w_in / sigma_in^2 + xi^{H,out}_j(s).w_out / sigma_out^2.
struct CoupledSample {
    Eigen::VectorXd H;  // H_0(s)..H_k(s)
    Eigen::VectorXd B;
};

CoupledSample coupled_limit_sample(const CovarianceState& state,
                                   const Eigen::VectorXd& w_in_row,
                                   const Eigen::VectorXd& w_out_row, double s);

// Coupled reconstruction for all D rows at once: returns the R^D vector of
// per-coordinate limit values H_k(s) for the given embedding matrices.
Eigen::VectorXd coupled_limit_hidden(const CovarianceState& state,
                                     const Eigen::MatrixXd& w_in,
                                     const Eigen::MatrixXd& w_out, int k, double s);
Eigen::VectorXd coupled_limit_backward(const CovarianceState& state,
                                       const Eigen::MatrixXd& w_in,
                                       const Eigen::MatrixXd& w_out, int k, double s);

}  // namespace rlim
