#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rlim/activation.hpp"
#include "rlim/grid.hpp"
#include "rlim/resnet.hpp"
#include "rlim/rng.hpp"
#include "rlim/skeleton.hpp"

namespace rlim {

struct DmftConfig {
    int P = 2000;            // particle count (expectation over embeddings)
    int n_mc = 2000;         // Gaussian-field draws per grid point
    double picard_tol = 1e-4;
    int picard_max_iters = 50;
    ActivationSpec act = ActivationSpec::make_tanh();
    HPConfig hp;
    Eigen::VectorXd x;
    Eigen::VectorXd y_star;
    int K = 1;
    SGrid grid{100};
    int threads = 0;

    void validate() const;
};

struct PicardDiagnostics {
    int k = 0;
    bool forward = true;
    std::vector<double> residuals;
};

// Per-particle limit trajectories tied to embedding row samples.  H[k] and
// B[k] are P x grid matrices: row i is particle i's trajectory at step k.
struct ParticleEnsemble {
    Eigen::MatrixXd w_in;   // P x d_in
    Eigen::MatrixXd w_out;  // P x d_out
    std::vector<Eigen::MatrixXd> H;
    std::vector<Eigen::MatrixXd> B;
    std::vector<Eigen::VectorXd> y_list;
    std::vector<PicardDiagnostics> diagnostics;
    // Particle order used for every reduction; sorted by embedding rows so
    // that permuting particle storage cannot change any output bit.
    std::vector<int> canonical;

    int particles() const { return static_cast<int>(w_in.rows()); }
    ParticleEnsemble permuted(const std::vector<int>& perm) const;
};

// (1/P) sum_i H^i_{<=k}(s) H^i_{<=k}(s)^T per grid node (and the B analogue),
// reduced in canonical particle order.
std::vector<CovSlices> empirical_covariances(const ParticleEnsemble& ens,
                                             const SGrid& grid, int k_h, int k_b);

struct GaussianFieldSample {
    // per grid node: z_h is dim_h x n_mc, z_b is dim_b x n_mc
    std::vector<Eigen::MatrixXd> z_h;
    std::vector<Eigen::MatrixXd> z_b;
};

// Draws the Gaussian field with block-diagonal covariance
// diag(sigma_u^2 Gamma^H, sigma_v^2 Gamma^B) at each grid node, clamping tiny
// negative eigenvalues at zero (finite-P noise).
GaussianFieldSample gaussian_field_draws(const std::vector<CovSlices>& cov,
                                         double sigma_u2, double sigma_v2, int n_mc,
                                         Rng& rng);

// PSD square root with eigenvalue clamp; throws IllConditionedCovarianceError
// when an eigenvalue is below -1e-6 * trace.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov);

ParticleEnsemble make_ensemble(const DmftConfig& cfg, const Rng& rng,
                               const std::optional<Eigen::MatrixXd>& coupled_w_in =
                                   std::nullopt,
                               const std::optional<Eigen::MatrixXd>& coupled_w_out =
                                   std::nullopt);

// Picard fixed-point pass building H_k (forward from s=0).
void dmft_forward_step(ParticleEnsemble& ens, int k, const DmftConfig& cfg,
                       const Rng& rng);
// Output y_k, boundary at s=1, Picard pass building B_k (backward).
void dmft_backward_step(ParticleEnsemble& ens, int k, const DmftConfig& cfg,
                        const Rng& rng);

struct DmftResult {
    ParticleEnsemble ensemble;
    std::vector<Eigen::VectorXd> y_list;
};

DmftResult dmft_run(const DmftConfig& cfg, const Rng& rng,
                    const std::optional<Eigen::MatrixXd>& coupled_w_in = std::nullopt,
                    const std::optional<Eigen::MatrixXd>& coupled_w_out = std::nullopt);

std::string dmft_summary_json(const DmftResult& result, const DmftConfig& cfg);

// Large finite network standing in for the limit in the nonlinear case.
// Shares the embedding-row streams with any model trained from the same seed,
// so per-coordinate comparison against its leading D rows is valid.
TrainRecord reference_proxy(const ShapeConfig& shape_big, const HPConfig& hp,
                            const ActivationSpec& act, const Dataset& data, int K,
                            const std::vector<int>& record_layers, const Rng& rng);

}  // namespace rlim
