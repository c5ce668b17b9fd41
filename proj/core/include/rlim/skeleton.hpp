#pragma once

#include <vector>

#include <Eigen/Core>

#include "rlim/activation.hpp"

namespace rlim {

// Path coordinates (z^h_j, z^b_j), indexed from 0.  Evaluation at training
// step k reads only the first k entries of each (non-anticipativity).
struct PathPoint {
    Eigen::VectorXd z_h;
    Eigen::VectorXd z_b;
};

// Second-moment slices Gamma^H(s,s), Gamma^B(s,s) at one fixed s.
struct CovSlices {
    Eigen::MatrixXd gamma_h;
    Eigen::MatrixXd gamma_b;
};

// Deterministic skeleton vectors of step k with the gradients of their
// entries in the path coordinates.  Gradient convention:
//   grad_h_vF(r, i) = d vF_i / d z^h_r,
// upper triangular because entry i only reads coordinates r <= i.
struct SkeletonVectors {
    Eigen::VectorXd vF;  // k entries
    Eigen::VectorXd vG;
    Eigen::VectorXd p;   // p_0 .. p_{k-1}
    Eigen::VectorXd q;
    Eigen::MatrixXd grad_h_vF;  // k x k
    Eigen::MatrixXd grad_b_vF;
    Eigen::MatrixXd grad_h_vG;
    Eigen::MatrixXd grad_b_vG;
};

SkeletonVectors skeleton_vectors(const CovSlices& cov, const PathPoint& path, int k,
                                 const ActivationSpec& act, double eta_u, double eta_v);

// p_k = z^h_k - eta_u vF^T gamma_col, one step past the vectors in `sv`.
double skeleton_p_next(const SkeletonVectors& sv, double z_h_k,
                       const Eigen::VectorXd& gamma_h_col, double eta_u);
double skeleton_q_next(const SkeletonVectors& sv, double z_b_k,
                       const Eigen::VectorXd& gamma_b_col, double eta_v);

// Finite-dimensional skeleton maps evaluated on fixed trajectories
// h_j(s), b_j(s) in R^D.  Returns f_j, g_j for j = 0..k (f_0 = g_0 = 0).
struct SkeletonEvalFinite {
    std::vector<Eigen::VectorXd> f;
    std::vector<Eigen::VectorXd> g;
};

SkeletonEvalFinite finite_skeleton_eval(const std::vector<Eigen::VectorXd>& h_traj,
                                        const std::vector<Eigen::VectorXd>& b_traj,
                                        const PathPoint& path, int k,
                                        const ActivationSpec& act, double eta_u,
                                        double eta_v);

// Mean-field skeleton maps for one realization (H_j, B_j).  The scalar
// expectations E[H_j F_j], E[B_j G_j] are injected so the same recursion
// serves analytic tests and particle averages.  Returns F_j, G_j, j = 0..k.
struct SkeletonEvalMeanField {
    Eigen::VectorXd F;
    Eigen::VectorXd G;
};

SkeletonEvalMeanField mf_skeleton_eval(const Eigen::VectorXd& h_sample,
                                       const Eigen::VectorXd& b_sample,
                                       const Eigen::VectorXd& e_hf,
                                       const Eigen::VectorXd& e_bg,
                                       const PathPoint& path, int k,
                                       const ActivationSpec& act, double eta_u,
                                       double eta_v);

// Phi^{+-}(m, i, d): signed sum over increasing index paths from i to i+d of
// length m, with alternating eta_u Gamma^H / eta_v Gamma^B factors.  Closed
// form of the skeleton-vector gradients for linear activations; used as an
// independent oracle against recursion differentiation.
double linear_phi(int sign, int m, int i, int d, const CovSlices& cov, double a,
                  double eta_u, double eta_v);

// Gradient matrices of step k assembled from Phi^{+-} (linear activation).
struct LinearSkeletonGradients {
    Eigen::MatrixXd grad_h_vF;
    Eigen::MatrixXd grad_b_vF;
    Eigen::MatrixXd grad_h_vG;
    Eigen::MatrixXd grad_b_vG;
};

LinearSkeletonGradients linear_skeleton_gradients(const CovSlices& cov, int k, double a,
                                                  double eta_u, double eta_v);

}  // namespace rlim
