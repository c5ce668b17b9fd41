#include "rlim/resnet.hpp"

#include <algorithm>
#include <cmath>

#include "rlim/errors.hpp"

namespace rlim {

void ShapeConfig::validate() const {
    if (L < 1 || M < 1 || D < 1 || d_in < 1 || d_out < 1)
        throw InvalidConfigError("ShapeConfig: all of L, M, D, d_in, d_out must be >= 1");
}

void HPConfig::validate() const {
    if (eta_u < 0 || eta_v < 0 || sigma_u < 0 || sigma_v < 0 || sigma_in < 0 ||
        sigma_out < 0)
        throw InvalidConfigError("HPConfig: learning rates and init STDs must be >= 0");
    if (clip_bound && *clip_bound <= 0)
        throw InvalidConfigError("HPConfig: clip_bound must be > 0 when set");
}

void Dataset::validate(const ShapeConfig& shape) const {
    if (x.empty() || x.size() != y_star.size())
        throw InvalidConfigError("Dataset: need N >= 1 paired samples");
    for (const auto& xi : x)
        if (xi.size() != shape.d_in) throw InvalidConfigError("Dataset: x dimension mismatch");
    for (const auto& yi : y_star)
        if (yi.size() != shape.d_out)
            throw InvalidConfigError("Dataset: y_star dimension mismatch");
}

namespace {

// Row-major fill so models sharing (seed, D) draw identical embedding rows
// regardless of the other shape parameters.
Eigen::MatrixXd sample_matrix(Rng rng, const DistKind& dist, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        m.row(r) = sample_centered(rng, dist, cols).transpose();
    return m;
}

inline double clamp_opt(double v, const std::optional<double>& bound) {
    if (!bound) return v;
    return std::clamp(v, -*bound, *bound);
}

}  // namespace

std::string embedding_coupling_key(const ShapeConfig& shape, const HPConfig& hp,
                                   const Rng& rng) {
    // D is deliberately absent: row-major draws make the first D rows of a
    // larger model's embeddings coincide with a smaller model's, so models of
    // different widths sharing (seed, stream) are still coupled.
    return "seed=" + std::to_string(rng.seed()) + ";stream=" + rng.stream() +
           ";din=" + std::to_string(shape.d_in) + ";dout=" + std::to_string(shape.d_out) +
           ";sin=" + std::to_string(hp.sigma_in) + ";sout=" + std::to_string(hp.sigma_out) +
           ";dist=" + to_string(hp.dist);
}

ResNetParams init_params(const ShapeConfig& shape, const HPConfig& hp, const Rng& rng) {
    shape.validate();
    hp.validate();
    ResNetParams params;
    const double d = static_cast<double>(shape.D);
    params.w_in = sample_matrix(rng.derive("init.Win"),
                                {hp.dist, hp.sigma_in * hp.sigma_in}, shape.D, shape.d_in);
    params.w_out = sample_matrix(rng.derive("init.Wout"),
                                 {hp.dist, hp.sigma_out * hp.sigma_out}, shape.D,
                                 shape.d_out);
    params.U.reserve(static_cast<std::size_t>(shape.L));
    params.V.reserve(static_cast<std::size_t>(shape.L));
    for (int l = 0; l < shape.L; ++l) {
        params.U.push_back(sample_matrix(rng.derive("init.U." + std::to_string(l)),
                                         {hp.dist, d * hp.sigma_u * hp.sigma_u}, shape.D,
                                         shape.M));
        params.V.push_back(sample_matrix(rng.derive("init.V." + std::to_string(l)),
                                         {hp.dist, d * hp.sigma_v * hp.sigma_v}, shape.D,
                                         shape.M));
    }
    return params;
}

ForwardResult forward(const ResNetParams& params, const ActivationSpec& act,
                      const Eigen::VectorXd& x) {
    const int L = static_cast<int>(params.U.size());
    const auto D = params.w_in.rows();
    const double block_scale =
        1.0 / (static_cast<double>(params.U[0].cols()) * static_cast<double>(L));
    ForwardResult res;
    res.hidden.resize(static_cast<std::size_t>(L) + 1);
    res.hidden[0] = params.w_in * x;
    Eigen::VectorXd pre;
    for (int l = 0; l < L; ++l) {
        const Eigen::VectorXd& h = res.hidden[static_cast<std::size_t>(l)];
        pre = (params.U[static_cast<std::size_t>(l)].transpose() * h) /
              static_cast<double>(D);
        pre = pre.unaryExpr(act.rho);
        if (!pre.allFinite())
            throw OverflowError("forward: non-finite activation at layer " +
                                    std::to_string(l + 1),
                                static_cast<double>(l + 1) / L, h.norm());
        res.hidden[static_cast<std::size_t>(l) + 1] =
            h + block_scale * (params.V[static_cast<std::size_t>(l)] * pre);
    }
    res.y = (params.w_out.transpose() * res.hidden.back()) / static_cast<double>(D);
    if (!res.y.allFinite())
        throw OverflowError("forward: non-finite output", 1.0, res.hidden.back().norm());
    return res;
}

LossAndGrad loss_and_grad(const ResNetParams& params, const ActivationSpec& act,
                          const Dataset& data, const HPConfig& hp) {
    const int L = static_cast<int>(params.U.size());
    const auto D = params.w_in.rows();
    const auto M = params.U[0].cols();
    const double block_scale = 1.0 / (static_cast<double>(M) * static_cast<double>(L));
    const double inv_n = 1.0 / static_cast<double>(data.size());

    LossAndGrad out;
    out.grads.w_in = Eigen::MatrixXd::Zero(params.w_in.rows(), params.w_in.cols());
    out.grads.w_out = Eigen::MatrixXd::Zero(params.w_out.rows(), params.w_out.cols());
    out.grads.U.assign(static_cast<std::size_t>(L), Eigen::MatrixXd::Zero(D, M));
    out.grads.V.assign(static_cast<std::size_t>(L), Eigen::MatrixXd::Zero(D, M));

    for (int i = 0; i < data.size(); ++i) {
        // Forward, keeping pre-activations for the backward sweep.
        std::vector<Eigen::VectorXd> hidden(static_cast<std::size_t>(L) + 1);
        std::vector<Eigen::VectorXd> pre(static_cast<std::size_t>(L));
        hidden[0] = params.w_in * data.x[static_cast<std::size_t>(i)];
        for (int l = 0; l < L; ++l) {
            Eigen::VectorXd z = (params.U[static_cast<std::size_t>(l)].transpose() *
                                 hidden[static_cast<std::size_t>(l)]) /
                                static_cast<double>(D);
            if (hp.clip_bound)
                z = z.unaryExpr([&](double v) { return clamp_opt(v, hp.clip_bound); });
            if (!z.allFinite())
                throw OverflowError("loss_and_grad: non-finite pre-activation at layer " +
                                        std::to_string(l + 1),
                                    static_cast<double>(l + 1) / L,
                                    hidden[static_cast<std::size_t>(l)].norm());
            pre[static_cast<std::size_t>(l)] = z;
            hidden[static_cast<std::size_t>(l) + 1] =
                hidden[static_cast<std::size_t>(l)] +
                block_scale * (params.V[static_cast<std::size_t>(l)] * z.unaryExpr(act.rho));
        }
        const Eigen::VectorXd y =
            (params.w_out.transpose() * hidden.back()) / static_cast<double>(D);
        const Eigen::VectorXd err = y - data.y_star[static_cast<std::size_t>(i)];
        out.loss += 0.5 * inv_n * err.squaredNorm();

        // Backward.
        const Eigen::VectorXd dy = inv_n * err;
        out.grads.w_out += hidden.back() * dy.transpose() / static_cast<double>(D);
        Eigen::VectorXd gh = params.w_out * dy / static_cast<double>(D);
        for (int l = L - 1; l >= 0; --l) {
            const auto lu = static_cast<std::size_t>(l);
            // c = per-unit backward scalar (1/(ML)) V^T g
            Eigen::VectorXd c = block_scale * (params.V[lu].transpose() * gh);
            if (hp.clip_bound)
                c = c.unaryExpr([&](double v) { return clamp_opt(v, hp.clip_bound); });
            const Eigen::VectorXd rho_pre = pre[lu].unaryExpr(act.rho);
            const Eigen::VectorXd d1_pre = pre[lu].unaryExpr(act.d1);
            out.grads.V[lu] += gh * (block_scale * rho_pre).transpose();
            const Eigen::VectorXd cd1 = c.cwiseProduct(d1_pre);
            out.grads.U[lu] += hidden[lu] * cd1.transpose() / static_cast<double>(D);
            gh += params.U[lu] * cd1 / static_cast<double>(D);
            if (!gh.allFinite())
                throw OverflowError("loss_and_grad: non-finite backward state at layer " +
                                        std::to_string(l),
                                    static_cast<double>(l) / L, gh.norm());
        }
        out.grads.w_in += gh * data.x[static_cast<std::size_t>(i)].transpose();
    }
    return out;
}

void gd_step(ResNetParams& params, const ParamGrads& grads, const ShapeConfig& shape,
             const HPConfig& hp) {
    const double scale = static_cast<double>(shape.L) * static_cast<double>(shape.M) *
                         static_cast<double>(shape.D);
    for (std::size_t l = 0; l < params.U.size(); ++l) {
        params.U[l] -= hp.eta_u * scale * grads.U[l];
        params.V[l] -= hp.eta_v * scale * grads.V[l];
    }
    // w_in, w_out frozen: eta_in = eta_out = 0.
}

TrainRecord train(const ShapeConfig& shape, const HPConfig& hp, const ActivationSpec& act,
                  const Dataset& data, int K, std::vector<int> record_layers,
                  const Rng& rng) {
    shape.validate();
    hp.validate();
    data.validate(shape);
    if (K < 0) throw InvalidConfigError("train: K must be >= 0");
    if (std::find(record_layers.begin(), record_layers.end(), shape.L) ==
        record_layers.end())
        record_layers.push_back(shape.L);
    std::sort(record_layers.begin(), record_layers.end());
    for (int l : record_layers)
        if (l < 0 || l > shape.L)
            throw InvalidConfigError("train: record layer out of range: " +
                                     std::to_string(l));

    ResNetParams params = init_params(shape, hp, rng);

    TrainRecord record;
    record.shape = shape;
    record.record_layers = record_layers;
    record.coupling_key = embedding_coupling_key(shape, hp, rng);
    record.w_in = params.w_in;
    record.w_out = params.w_out;
    record.steps.reserve(static_cast<std::size_t>(K) + 1);

    for (int k = 0; k <= K; ++k) {
        TrainRecord::Step step;
        step.hidden.resize(record_layers.size());
        double loss = 0.0;
        for (int i = 0; i < data.size(); ++i) {
            ForwardResult fwd;
            try {
                fwd = forward(params, act, data.x[static_cast<std::size_t>(i)]);
            } catch (const OverflowError& e) {
                throw OverflowError(std::string(e.what()) + " (training step " +
                                        std::to_string(k) + ")",
                                    e.s_position, e.state_norm);
            }
            for (std::size_t li = 0; li < record_layers.size(); ++li)
                step.hidden[li].push_back(
                    fwd.hidden[static_cast<std::size_t>(record_layers[li])]);
            step.y.push_back(fwd.y);
            loss += 0.5 *
                    (fwd.y - data.y_star[static_cast<std::size_t>(i)]).squaredNorm() /
                    data.size();
        }
        step.loss = loss;
        record.steps.push_back(std::move(step));

        if (k == K) break;
        LossAndGrad lg;
        try {
            lg = loss_and_grad(params, act, data, hp);
        } catch (const OverflowError& e) {
            throw OverflowError(std::string(e.what()) + " (training step " +
                                    std::to_string(k) + ")",
                                e.s_position, e.state_norm);
        }
        gd_step(params, lg.grads, shape, hp);
    }
    return record;
}

}  // namespace rlim
