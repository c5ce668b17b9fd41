#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rlim/activation.hpp"
#include "rlim/rng.hpp"

namespace rlim {

struct ShapeConfig {
    int L = 1;      // depth
    int M = 1;      // hidden width per block
    int D = 1;      // embedding dimension
    int d_in = 1;
    int d_out = 1;

    void validate() const;
    // Total parameter count D (d_in + d_out) + 2 L M D.
    long long param_count() const {
        return static_cast<long long>(D) * (d_in + d_out) +
               2LL * L * M * D;
    }
};

// Scaled learning rates and init standard deviations of the MLU regime.
// Embedding matrices stay frozen (their learning rates are pinned to zero).
struct HPConfig {
    double eta_u = 1.0;
    double eta_v = 1.0;
    double sigma_u = 1.0;
    double sigma_v = 1.0;
    double sigma_in = 1.0;
    double sigma_out = 1.0;
    DistFamily dist = DistFamily::gaussian;
    std::optional<double> clip_bound;  // clamp on scalar intermediates in backward

    void validate() const;
};

struct ResNetParams {
    Eigen::MatrixXd w_in;   // D x d_in
    Eigen::MatrixXd w_out;  // D x d_out
    std::vector<Eigen::MatrixXd> U;  // L matrices, D x M
    std::vector<Eigen::MatrixXd> V;  // L matrices, D x M
};

struct ParamGrads {
    Eigen::MatrixXd w_in;
    Eigen::MatrixXd w_out;
    std::vector<Eigen::MatrixXd> U;
    std::vector<Eigen::MatrixXd> V;
};

struct Dataset {
    std::vector<Eigen::VectorXd> x;       // inputs, each d_in
    std::vector<Eigen::VectorXd> y_star;  // targets, each d_out

    int size() const { return static_cast<int>(x.size()); }
    void validate(const ShapeConfig& shape) const;
};

struct ForwardResult {
    std::vector<Eigen::VectorXd> hidden;  // h^(0..L), each R^D
    Eigen::VectorXd y;                    // R^{d_out}
};

// Trajectory of one training run.  Step 0 is the untrained model; states are
// recorded before each update, plus once after the final update.
struct TrainRecord {
    ShapeConfig shape;
    std::vector<int> record_layers;  // always contains L
    // embedding coupling identity: models sharing it drew identical
    // (w_in, w_out) rows and may be compared coordinatewise.
    std::string coupling_key;
    Eigen::MatrixXd w_in;   // copy for limit-side reconstruction
    Eigen::MatrixXd w_out;

    struct Step {
        // hidden[layer_idx][datapoint] in R^D; layer_idx indexes record_layers
        std::vector<std::vector<Eigen::VectorXd>> hidden;
        std::vector<Eigen::VectorXd> y;  // per datapoint
        double loss = 0.0;
    };
    std::vector<Step> steps;  // size K+1
};

ResNetParams init_params(const ShapeConfig& shape, const HPConfig& hp, const Rng& rng);

// Identifies the embedding-row stream; equal keys mean coupled embeddings.
std::string embedding_coupling_key(const ShapeConfig& shape, const HPConfig& hp,
                                   const Rng& rng);

ForwardResult forward(const ResNetParams& params, const ActivationSpec& act,
                      const Eigen::VectorXd& x);

struct LossAndGrad {
    double loss = 0.0;
    ParamGrads grads;
};

LossAndGrad loss_and_grad(const ResNetParams& params, const ActivationSpec& act,
                          const Dataset& data, const HPConfig& hp);

void gd_step(ResNetParams& params, const ParamGrads& grads, const ShapeConfig& shape,
             const HPConfig& hp);

TrainRecord train(const ShapeConfig& shape, const HPConfig& hp, const ActivationSpec& act,
                  const Dataset& data, int K, std::vector<int> record_layers,
                  const Rng& rng);

}  // namespace rlim
