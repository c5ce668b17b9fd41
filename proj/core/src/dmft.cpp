#include "rlim/dmft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "rlim/errors.hpp"
#include "rlim/parallel.hpp"

namespace rlim {

void DmftConfig::validate() const {
    hp.validate();
    if (P < 100) throw InvalidConfigError("DmftConfig: P must be >= 100");
    if (n_mc < 1) throw InvalidConfigError("DmftConfig: n_mc must be >= 1");
    if (picard_tol <= 0) throw InvalidConfigError("DmftConfig: picard_tol must be > 0");
    if (picard_max_iters < 1)
        throw InvalidConfigError("DmftConfig: picard_max_iters must be >= 1");
    if (K < 1) throw InvalidConfigError("DmftConfig: K must be >= 1");
    if (x.size() == 0 || y_star.size() == 0)
        throw InvalidConfigError("DmftConfig: x and y_star must be non-empty");
}

namespace {

std::vector<int> canonical_order(const Eigen::MatrixXd& w_in,
                                 const Eigen::MatrixXd& w_out) {
    std::vector<int> order(static_cast<std::size_t>(w_in.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        for (Eigen::Index c = 0; c < w_in.cols(); ++c) {
            if (w_in(a, c) != w_in(b, c)) return w_in(a, c) < w_in(b, c);
        }
        for (Eigen::Index c = 0; c < w_out.cols(); ++c) {
            if (w_out(a, c) != w_out(b, c)) return w_out(a, c) < w_out(b, c);
        }
        return false;
    });
    return order;
}

}  // namespace

ParticleEnsemble ParticleEnsemble::permuted(const std::vector<int>& perm) const {
    ParticleEnsemble out = *this;
    const int P = particles();
    for (int i = 0; i < P; ++i) {
        out.w_in.row(i) = w_in.row(perm[static_cast<std::size_t>(i)]);
        out.w_out.row(i) = w_out.row(perm[static_cast<std::size_t>(i)]);
        for (std::size_t k = 0; k < H.size(); ++k)
            out.H[k].row(i) = H[k].row(perm[static_cast<std::size_t>(i)]);
        for (std::size_t k = 0; k < B.size(); ++k)
            out.B[k].row(i) = B[k].row(perm[static_cast<std::size_t>(i)]);
    }
    out.canonical = canonical_order(out.w_in, out.w_out);
    return out;
}

std::vector<CovSlices> empirical_covariances(const ParticleEnsemble& ens,
                                             const SGrid& grid, int k_h, int k_b) {
    const int G = grid.size();
    const int P = ens.particles();
    const double inv_p = 1.0 / static_cast<double>(P);
    std::vector<CovSlices> out(static_cast<std::size_t>(G));
    for (int j = 0; j < G; ++j) {
        Eigen::MatrixXd gh = Eigen::MatrixXd::Zero(k_h + 1, k_h + 1);
        Eigen::MatrixXd gb = Eigen::MatrixXd::Zero(k_b >= 0 ? k_b + 1 : 0,
                                                   k_b >= 0 ? k_b + 1 : 0);
        Eigen::VectorXd hv(k_h + 1), bv(std::max(k_b + 1, 0));
        for (int idx : ens.canonical) {
            for (int a = 0; a <= k_h; ++a)
                hv[a] = ens.H[static_cast<std::size_t>(a)](idx, j);
            for (int a = 0; a <= k_b; ++a)
                bv[a] = ens.B[static_cast<std::size_t>(a)](idx, j);
            gh.noalias() += hv * hv.transpose();
            if (k_b >= 0) gb.noalias() += bv * bv.transpose();
        }
        gh *= inv_p;
        gb *= inv_p;
        out[static_cast<std::size_t>(j)].gamma_h = 0.5 * (gh + gh.transpose());
        out[static_cast<std::size_t>(j)].gamma_b = 0.5 * (gb + gb.transpose());
    }
    return out;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov) {
    if (cov.rows() == 0) return cov;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::VectorXd& vals = eig.eigenvalues();
    const double trace = std::max(cov.trace(), 0.0);
    if (vals.minCoeff() < -1e-6 * std::max(trace, 1e-300))
        throw IllConditionedCovarianceError(
            "psd_sqrt: covariance has a significantly negative eigenvalue " +
                std::to_string(vals.minCoeff()),
            vals.minCoeff());
    Eigen::VectorXd clamped = vals.cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
}

GaussianFieldSample gaussian_field_draws(const std::vector<CovSlices>& cov,
                                         double sigma_u2, double sigma_v2, int n_mc,
                                         Rng& rng) {
    GaussianFieldSample out;
    out.z_h.reserve(cov.size());
    out.z_b.reserve(cov.size());
    for (const auto& slice : cov) {
        const Eigen::MatrixXd lh = psd_sqrt(sigma_u2 * slice.gamma_h);
        const Eigen::MatrixXd lb = psd_sqrt(sigma_v2 * slice.gamma_b);
        Eigen::MatrixXd xh(slice.gamma_h.rows(), n_mc);
        Eigen::MatrixXd xb(slice.gamma_b.rows(), n_mc);
        for (int m = 0; m < n_mc; ++m) {
            for (Eigen::Index r = 0; r < xh.rows(); ++r) xh(r, m) = rng.normal();
            for (Eigen::Index r = 0; r < xb.rows(); ++r) xb(r, m) = rng.normal();
        }
        out.z_h.push_back(lh * xh);
        out.z_b.push_back(lb * xb);
    }
    return out;
}

ParticleEnsemble make_ensemble(const DmftConfig& cfg, const Rng& rng,
                               const std::optional<Eigen::MatrixXd>& coupled_w_in,
                               const std::optional<Eigen::MatrixXd>& coupled_w_out) {
    cfg.validate();
    ParticleEnsemble ens;
    const auto d_in = cfg.x.size();
    const auto d_out = cfg.y_star.size();
    ens.w_in.resize(cfg.P, d_in);
    ens.w_out.resize(cfg.P, d_out);
    Rng rin = rng.derive("init.Win");
    Rng rout = rng.derive("init.Wout");
    const DistKind din{cfg.hp.dist, cfg.hp.sigma_in * cfg.hp.sigma_in};
    const DistKind dout{cfg.hp.dist, cfg.hp.sigma_out * cfg.hp.sigma_out};
    for (int i = 0; i < cfg.P; ++i) {
        ens.w_in.row(i) = sample_centered(rin, din, d_in).transpose();
        ens.w_out.row(i) = sample_centered(rout, dout, d_out).transpose();
    }
    if (coupled_w_in) {
        if (coupled_w_in->rows() > cfg.P || coupled_w_in->cols() != d_in ||
            !coupled_w_out || coupled_w_out->rows() != coupled_w_in->rows())
            throw CouplingError("make_ensemble: coupled rows exceed P or shape mismatch");
        // Coupled mode replaces the leading rows; with a shared seed the rows
        // drawn here already coincide, this covers externally supplied rows.
        ens.w_in.topRows(coupled_w_in->rows()) = *coupled_w_in;
        ens.w_out.topRows(coupled_w_out->rows()) = *coupled_w_out;
    }
    ens.canonical = canonical_order(ens.w_in, ens.w_out);
    return ens;
}

namespace {

struct DriftCoefficients {
    // Deterministic drift pieces per grid node; `vec` contracts against the
    // past trajectory stack, `scalar` multiplies the current step's state.
    std::vector<Eigen::VectorXd> vec;
    std::vector<double> scalar;
};

// f(s_j) for every particle: vec_j . traj_{<k}(s_j) (+ scalar_j h_k(s_j)).
Eigen::VectorXd drift_values_at_node(const DriftCoefficients& co,
                                     const std::vector<Eigen::MatrixXd>& past, int k,
                                     int node, const Eigen::MatrixXd* current) {
    const int P = static_cast<int>(past.empty() ? current->rows() : past[0].rows());
    Eigen::VectorXd f = Eigen::VectorXd::Zero(P);
    const Eigen::VectorXd& c = co.vec[static_cast<std::size_t>(node)];
    for (int a = 0; a < k; ++a)
        f += c[a] * past[static_cast<std::size_t>(a)].col(node);
    if (current != nullptr)
        f += co.scalar[static_cast<std::size_t>(node)] * current->col(node);
    return f;
}

// Quadrature update over one grid interval (classical RK4 collapses to
// Simpson when the right-hand side does not depend on the integrated state).
// Midpoint values of the coefficients and trajectories use linear
// interpolation; the fixed point is Monte-Carlo limited well before this
// matters.
Eigen::VectorXd interval_increment(const DriftCoefficients& co,
                                   const std::vector<Eigen::MatrixXd>& past, int k,
                                   int node, double ds, const Eigen::MatrixXd* current) {
    const Eigen::VectorXd f0 = drift_values_at_node(co, past, k, node, current);
    const Eigen::VectorXd f1 = drift_values_at_node(co, past, k, node + 1, current);
    const int P = static_cast<int>(f0.size());
    // midpoint: average coefficients and trajectories
    Eigen::VectorXd fm = Eigen::VectorXd::Zero(P);
    const Eigen::VectorXd cm = 0.5 * (co.vec[static_cast<std::size_t>(node)] +
                                      co.vec[static_cast<std::size_t>(node) + 1]);
    for (int a = 0; a < k; ++a)
        fm += cm[a] * 0.5 *
              (past[static_cast<std::size_t>(a)].col(node) +
               past[static_cast<std::size_t>(a)].col(node + 1));
    if (current != nullptr) {
        const double sm = 0.5 * (co.scalar[static_cast<std::size_t>(node)] +
                                 co.scalar[static_cast<std::size_t>(node) + 1]);
        fm += sm * 0.5 * (current->col(node) + current->col(node + 1));
    }
    return (ds / 6.0) * (f0 + 4.0 * fm + f1);
}

enum class Pass { forward, backward };

// Picard iteration driver shared by the forward and backward passes.
// The pass-specific part is the Monte-Carlo estimate of the deterministic
// drift coefficients from the current covariance state.
template <class CoeffFn>
PicardDiagnostics picard_iterate(Eigen::MatrixXd& state, int k, const DmftConfig& cfg,
                                 Pass pass, const std::vector<Eigen::MatrixXd>& past,
                                 const Eigen::MatrixXd* current_h, CoeffFn&& coeffs,
                                 const Eigen::VectorXd& boundary) {
    const SGrid& grid = cfg.grid;
    const int G = grid.size();
    const double ds = grid.ds();
    PicardDiagnostics diag;
    diag.k = k;
    diag.forward = pass == Pass::forward;

    for (int iter = 0; iter < cfg.picard_max_iters; ++iter) {
        const DriftCoefficients co = coeffs(state);
        Eigen::MatrixXd next(state.rows(), state.cols());
        if (pass == Pass::forward) {
            next.col(0) = boundary;
            for (int j = 0; j < G - 1; ++j)
                next.col(j + 1) =
                    next.col(j) + interval_increment(co, past, k, j, ds, current_h);
        } else {
            next.col(G - 1) = boundary;
            for (int j = G - 2; j >= 0; --j)
                next.col(j) =
                    next.col(j + 1) - interval_increment(co, past, k, j, ds, current_h);
        }
        if (!next.allFinite())
            throw OverflowError("dmft picard: non-finite trajectory at step " +
                                    std::to_string(k),
                                0.0, state.norm());
        const double residual = (next - state).cwiseAbs().maxCoeff();
        // Damping on oscillating residuals keeps the fixed point unchanged.
        const std::size_t nres = diag.residuals.size();
        bool oscillating = false;
        if (nres >= 2) {
            const double d1 = residual - diag.residuals[nres - 1];
            const double d2 = diag.residuals[nres - 1] - diag.residuals[nres - 2];
            oscillating = (d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0);
        }
        diag.residuals.push_back(residual);
        if (oscillating)
            state = 0.5 * (state + next);
        else
            state = std::move(next);
        if (residual < cfg.picard_tol) return diag;
    }
    throw NonConvergenceError("dmft picard: no convergence at step " + std::to_string(k) +
                                  (pass == Pass::forward ? " (forward)" : " (backward)") +
                                  ", last residual " +
                                  std::to_string(diag.residuals.back()),
                              diag.residuals.back());
}

// Frozen standard normals: one block per grid node, reused across Picard
// iterations (common random numbers) so the fixed-point map is deterministic.
struct FrozenNormals {
    std::vector<Eigen::MatrixXd> xi_h;  // dim_h x n_mc per node
    std::vector<Eigen::MatrixXd> xi_b;
};

FrozenNormals freeze_normals(const DmftConfig& cfg, const Rng& rng, int k, Pass pass,
                             int dim_h, int dim_b) {
    FrozenNormals fz;
    const int G = cfg.grid.size();
    fz.xi_h.resize(static_cast<std::size_t>(G));
    fz.xi_b.resize(static_cast<std::size_t>(G));
    const std::string tag = std::string("dmft.k") + std::to_string(k) +
                            (pass == Pass::forward ? ".fwd" : ".bwd");
    parallel_for(G, cfg.threads, [&](int lo, int hi) {
        for (int j = lo; j < hi; ++j) {
            Rng r = rng.derive(tag + ".node" + std::to_string(j));
            Eigen::MatrixXd xh(dim_h, cfg.n_mc), xb(dim_b, cfg.n_mc);
            for (int m = 0; m < cfg.n_mc; ++m) {
                for (int a = 0; a < dim_h; ++a) xh(a, m) = r.normal();
                for (int a = 0; a < dim_b; ++a) xb(a, m) = r.normal();
            }
            fz.xi_h[static_cast<std::size_t>(j)] = std::move(xh);
            fz.xi_b[static_cast<std::size_t>(j)] = std::move(xb);
        }
    });
    return fz;
}

}  // namespace

void dmft_forward_step(ParticleEnsemble& ens, int k, const DmftConfig& cfg,
                       const Rng& rng) {
    const SGrid& grid = cfg.grid;
    const int G = grid.size();
    const int P = cfg.P;
    const Eigen::VectorXd h0 = ens.w_in * cfg.x;  // per-particle boundary at s=0

    if (k == 0) {
        // F_0 = G_0 = 0 kills the drift: H_0(s) = W_in . x for every s.
        ens.H.push_back(h0.replicate(1, G));
        ens.diagnostics.push_back({0, true, {0.0}});
        return;
    }

    const double su2 = cfg.hp.sigma_u * cfg.hp.sigma_u;
    const double sv2 = cfg.hp.sigma_v * cfg.hp.sigma_v;
    const FrozenNormals fz = freeze_normals(cfg, rng, k, Pass::forward, k + 1, k);

    Eigen::MatrixXd h_state = h0.replicate(1, G);
    ens.H.push_back(h_state);  // slot for the iterate, updated in place below

    const auto coeffs = [&](const Eigen::MatrixXd& state) {
        ens.H[static_cast<std::size_t>(k)] = state;
        const auto covs = empirical_covariances(ens, grid, k, k - 1);
        DriftCoefficients co;
        co.vec.assign(static_cast<std::size_t>(G), Eigen::VectorXd::Zero(k));
        co.scalar.assign(static_cast<std::size_t>(G), 0.0);
        parallel_for(G, cfg.threads, [&](int lo, int hi) {
            for (int j = lo; j < hi; ++j) {
                const auto ju = static_cast<std::size_t>(j);
                const Eigen::MatrixXd lh = psd_sqrt(su2 * covs[ju].gamma_h);
                const Eigen::MatrixXd lb = psd_sqrt(sv2 * covs[ju].gamma_b);
                const Eigen::MatrixXd zh = lh * fz.xi_h[ju];
                const Eigen::MatrixXd zb = lb * fz.xi_b[ju];
                const CovSlices past_cov{covs[ju].gamma_h.topLeftCorner(k, k),
                                         covs[ju].gamma_b};
                const Eigen::VectorXd gh_col = covs[ju].gamma_h.block(0, k, k, 1);
                Eigen::VectorXd acc = Eigen::VectorXd::Zero(k);
                for (int m = 0; m < cfg.n_mc; ++m) {
                    const PathPoint path{zh.col(m).head(k), zb.col(m)};
                    const SkeletonVectors sv = skeleton_vectors(
                        past_cov, path, k, cfg.act, cfg.hp.eta_u, cfg.hp.eta_v);
                    const double pk =
                        skeleton_p_next(sv, zh(k, m), gh_col, cfg.hp.eta_u);
                    acc += cfg.hp.eta_u * sv2 * cfg.act.d1(pk) * (sv.grad_b_vF * gh_col) +
                           cfg.hp.eta_v * cfg.act.rho(pk) * sv.vG;
                }
                co.vec[ju] = -acc / static_cast<double>(cfg.n_mc);
            }
        });
        return co;
    };

    PicardDiagnostics diag =
        picard_iterate(h_state, k, cfg, Pass::forward, ens.B, nullptr, coeffs, h0);
    ens.H[static_cast<std::size_t>(k)] = h_state;
    ens.diagnostics.push_back(std::move(diag));
    (void)P;
}

void dmft_backward_step(ParticleEnsemble& ens, int k, const DmftConfig& cfg,
                        const Rng& rng) {
    const SGrid& grid = cfg.grid;
    const int G = grid.size();
    const double inv_p = 1.0 / static_cast<double>(cfg.P);

    // y_k = E[H_k(1) W_out], reduced in canonical order.
    Eigen::VectorXd y_k = Eigen::VectorXd::Zero(cfg.y_star.size());
    for (int idx : ens.canonical)
        y_k += ens.H[static_cast<std::size_t>(k)](idx, G - 1) *
               ens.w_out.row(idx).transpose();
    y_k *= inv_p;
    ens.y_list.push_back(y_k);
    const Eigen::VectorXd boundary = ens.w_out * (y_k - cfg.y_star);

    if (k == 0) {
        // All drift terms vanish at k=0 (independence of Z^h_0 and Z^b_0), so
        // B_0 stays at its boundary value.
        ens.B.push_back(boundary.replicate(1, G));
        ens.diagnostics.push_back({0, false, {0.0}});
        return;
    }

    const double su2 = cfg.hp.sigma_u * cfg.hp.sigma_u;
    const double sv2 = cfg.hp.sigma_v * cfg.hp.sigma_v;
    const FrozenNormals fz = freeze_normals(cfg, rng, k, Pass::backward, k + 1, k + 1);

    Eigen::MatrixXd b_state = boundary.replicate(1, G);
    ens.B.push_back(b_state);
    const Eigen::MatrixXd& h_k = ens.H[static_cast<std::size_t>(k)];

    const auto coeffs = [&](const Eigen::MatrixXd& state) {
        ens.B[static_cast<std::size_t>(k)] = state;
        const auto covs = empirical_covariances(ens, grid, k, k);
        DriftCoefficients co;
        co.vec.assign(static_cast<std::size_t>(G), Eigen::VectorXd::Zero(k));
        co.scalar.assign(static_cast<std::size_t>(G), 0.0);
        parallel_for(G, cfg.threads, [&](int lo, int hi) {
            for (int j = lo; j < hi; ++j) {
                const auto ju = static_cast<std::size_t>(j);
                const Eigen::MatrixXd lh = psd_sqrt(su2 * covs[ju].gamma_h);
                const Eigen::MatrixXd lb = psd_sqrt(sv2 * covs[ju].gamma_b);
                const Eigen::MatrixXd zh = lh * fz.xi_h[ju];
                const Eigen::MatrixXd zb = lb * fz.xi_b[ju];
                const CovSlices past_cov{covs[ju].gamma_h.topLeftCorner(k, k),
                                         covs[ju].gamma_b.topLeftCorner(k, k)};
                const Eigen::VectorXd gh_col = covs[ju].gamma_h.block(0, k, k, 1);
                const Eigen::VectorXd gb_col = covs[ju].gamma_b.block(0, k, k, 1);
                Eigen::VectorXd acc = Eigen::VectorXd::Zero(k);
                double acc_scalar = 0.0;
                for (int m = 0; m < cfg.n_mc; ++m) {
                    const PathPoint path{zh.col(m).head(k), zb.col(m).head(k)};
                    const SkeletonVectors sv = skeleton_vectors(
                        past_cov, path, k, cfg.act, cfg.hp.eta_u, cfg.hp.eta_v);
                    const double pk =
                        skeleton_p_next(sv, zh(k, m), gh_col, cfg.hp.eta_u);
                    const double qk =
                        skeleton_q_next(sv, zb(k, m), gb_col, cfg.hp.eta_v);
                    const double r1 = cfg.act.d1(pk);
                    const double r2 = cfg.act.d2(pk);
                    acc += cfg.hp.eta_v * su2 * r1 * (sv.grad_h_vG * gb_col) +
                           cfg.hp.eta_u * r1 * qk * sv.vF +
                           su2 * cfg.hp.eta_u * r2 * qk * (sv.grad_h_vF * gh_col);
                    acc_scalar += -su2 * r2 * qk;
                }
                co.vec[ju] = acc / static_cast<double>(cfg.n_mc);
                co.scalar[ju] = acc_scalar / static_cast<double>(cfg.n_mc);
            }
        });
        return co;
    };

    PicardDiagnostics diag =
        picard_iterate(b_state, k, cfg, Pass::backward, ens.H, &h_k, coeffs, boundary);
    ens.B[static_cast<std::size_t>(k)] = b_state;
    ens.diagnostics.push_back(std::move(diag));
}

DmftResult dmft_run(const DmftConfig& cfg, const Rng& rng,
                    const std::optional<Eigen::MatrixXd>& coupled_w_in,
                    const std::optional<Eigen::MatrixXd>& coupled_w_out) {
    cfg.validate();
    DmftResult result;
    result.ensemble = make_ensemble(cfg, rng, coupled_w_in, coupled_w_out);
    for (int k = 0; k < cfg.K; ++k) {
        dmft_forward_step(result.ensemble, k, cfg, rng);
        dmft_backward_step(result.ensemble, k, cfg, rng);
    }
    result.y_list = result.ensemble.y_list;
    return result;
}

std::string dmft_summary_json(const DmftResult& result, const DmftConfig& cfg) {
    nlohmann::json j;
    j["P"] = cfg.P;
    j["n_mc"] = cfg.n_mc;
    j["K"] = cfg.K;
    j["grid"] = {{"n_steps", cfg.grid.n_steps}};
    nlohmann::json ys = nlohmann::json::array();
    for (const auto& y : result.y_list)
        ys.push_back(std::vector<double>(y.begin(), y.end()));
    j["y"] = ys;

    const ParticleEnsemble& ens = result.ensemble;
    const int K = static_cast<int>(ens.H.size());
    const auto covs = empirical_covariances(ens, cfg.grid, K - 1, K - 1);
    nlohmann::json gh_diag = nlohmann::json::array();
    nlohmann::json gb_diag = nlohmann::json::array();
    for (int k = 0; k < K; ++k) {
        std::vector<double> gh(covs.size()), gb(covs.size());
        for (std::size_t node = 0; node < covs.size(); ++node) {
            gh[node] = covs[node].gamma_h(k, k);
            gb[node] = covs[node].gamma_b(k, k);
        }
        gh_diag.push_back(gh);
        gb_diag.push_back(gb);
    }
    j["gamma_h_diag"] = std::move(gh_diag);
    j["gamma_b_diag"] = std::move(gb_diag);

    nlohmann::json diags = nlohmann::json::array();
    for (const auto& d : ens.diagnostics)
        diags.push_back({{"k", d.k},
                         {"pass", d.forward ? "forward" : "backward"},
                         {"iterations", d.residuals.size()},
                         {"residuals", d.residuals}});
    j["picard"] = std::move(diags);
    return j.dump(2);
}

TrainRecord reference_proxy(const ShapeConfig& shape_big, const HPConfig& hp,
                            const ActivationSpec& act, const Dataset& data, int K,
                            const std::vector<int>& record_layers, const Rng& rng) {
    return train(shape_big, hp, act, data, K, record_layers, rng);
}

}  // namespace rlim
