#include "rlim/linear_limit.hpp"

#include <cmath>
#include <cstdlib>

#include <nlohmann/json.hpp>

#include "rlim/errors.hpp"
#include "rlim/ode.hpp"

namespace rlim {

namespace {

// Locates the grid interval containing s and the local coordinate t in [0,1].
inline void locate(const SGrid& grid, double s, int& j, double& t) {
    const double u = s * grid.n_steps;
    j = static_cast<int>(std::floor(u + 1e-9));
    if (j < 0) j = 0;
    if (j >= grid.n_steps) j = grid.n_steps - 1;
    t = u - j;
    if (t < 0.0) t = 0.0;
    if (t > 1.0) t = 1.0;
}

}  // namespace

Eigen::VectorXd Curve::eval(const SGrid& grid, double s, CurveInterp interp) const {
    int j;
    double t;
    locate(grid, s, j, t);
    if (t == 0.0) return v.col(j);
    if (t == 1.0) return v.col(j + 1);
    if (interp == CurveInterp::linear) return (1.0 - t) * v.col(j) + t * v.col(j + 1);
    const double ds = grid.ds();
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1;
    const double h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2;
    const double h11 = t3 - t2;
    return h00 * v.col(j) + (h10 * ds) * dv.col(j) + h01 * v.col(j + 1) +
           (h11 * ds) * dv.col(j + 1);
}

void LinearLimitConfig::validate() const {
    hp.validate();
    if (K < 1) throw InvalidConfigError("LinearLimitConfig: K must be >= 1");
    if (x.size() == 0 || y_star.size() == 0)
        throw InvalidConfigError("LinearLimitConfig: x and y_star must be non-empty");
    if (hp.sigma_in <= 0.0 || hp.sigma_out <= 0.0)
        throw InvalidConfigError(
            "LinearLimitConfig: sigma_in and sigma_out must be > 0 (independent "
            "i.i.d. embedding rows are assumed)");
}

namespace {

Eigen::VectorXd grad_loss(const Eigen::VectorXd& y, const Eigen::VectorXd& y_star) {
    return y - y_star;  // squared error, hard-wired
}

struct PastEval {
    Eigen::MatrixXd GH;   // Gamma^H_{\wedge k-1}(s), k x k
    Eigen::MatrixXd GB;
    Eigen::MatrixXd LAM;  // E[H_i B_j], k x k
    Eigen::MatrixXd XBin, XBout, XHin, XHout;  // d x k cross-covariances
    std::vector<Eigen::MatrixXd> M;  // M_i(s), i = 0..k
};

// Evaluates every past quantity step k's ODE coefficients read, at query s.
PastEval eval_past(const CovarianceState& st, double s, int k) {
    const SGrid& grid = st.cfg.grid;
    const CurveInterp interp = st.cfg.interp;
    PastEval pe;
    pe.GH.setZero(k, k);
    pe.GB.setZero(k, k);
    pe.LAM.setZero(k, k);
    const auto d_in = st.cfg.x.size();
    const auto d_out = st.cfg.y_star.size();
    pe.XBin.setZero(d_in, k);
    pe.XBout.setZero(d_out, k);
    pe.XHin.setZero(d_in, k);
    pe.XHout.setZero(d_out, k);

    for (int kk = 0; kk < k; ++kk) {
        const Eigen::VectorXd gh = st.gamma_h_col[kk].eval(grid, s, interp);
        const Eigen::VectorXd gb = st.gamma_b_col[kk].eval(grid, s, interp);
        for (int i = 0; i <= kk; ++i) {
            pe.GH(i, kk) = gh[i];
            pe.GH(kk, i) = gh[i];
            pe.GB(i, kk) = gb[i];
            pe.GB(kk, i) = gb[i];
        }
        if (kk > 0) {
            const Eigen::VectorXd lrow = st.lambda_row[kk].eval(grid, s, interp);
            const Eigen::VectorXd lcol = st.lambda_col[kk].eval(grid, s, interp);
            for (int i = 0; i < kk; ++i) {
                pe.LAM(kk, i) = lrow[i];  // E[H_kk B_i]
                pe.LAM(i, kk) = lcol[i];  // E[H_i B_kk]
            }
        }
        pe.LAM(kk, kk) = st.lambda_diag[kk];
        pe.XHin.col(kk) = st.xi_h_in[kk].eval(grid, s, interp);
        pe.XHout.col(kk) = st.xi_h_out[kk].eval(grid, s, interp);
        pe.XBin.col(kk) = st.xi_b_in[kk].eval(grid, s, interp);
        pe.XBout.col(kk) = st.xi_b_out[kk].eval(grid, s, interp);
    }

    pe.M.resize(static_cast<std::size_t>(k) + 1);
    for (int i = 0; i <= k; ++i)
        pe.M[static_cast<std::size_t>(i)] =
            linear_m_matrix(pe.GH, pe.GB, i, st.cfg.a, st.cfg.hp);
    return pe;
}

// W^H_k(s): row i carries Gamma-vec^H_i(s)^T M_i(s), zero-padded to width k.
Eigen::MatrixXd w_h_matrix(const PastEval& pe, int k) {
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(k, k);
    for (int i = 1; i < k; ++i) {
        const Eigen::VectorXd gvec = pe.GH.block(0, i, i, 1);
        W.block(i, 0, 1, i) = (gvec.transpose() * pe.M[static_cast<std::size_t>(i)]);
    }
    return W;
}

// W^B_k(s): row i carries Gamma-vec^B_i(s)^T Mtilde_i with Mtilde_i = -M_i^T.
Eigen::MatrixXd w_b_matrix(const PastEval& pe, int k) {
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(k, k);
    for (int i = 1; i < k; ++i) {
        const Eigen::VectorXd gvec = pe.GB.block(0, i, i, 1);
        W.block(i, 0, 1, i) =
            -(pe.M[static_cast<std::size_t>(i)] * gvec).transpose();
    }
    return W;
}

Eigen::MatrixXd c_h_matrix(const PastEval& pe, int k) {
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2 * k, 2 * k);
    const Eigen::MatrixXd& Mk = pe.M[static_cast<std::size_t>(k)];
    C.topLeftCorner(k, k) = pe.LAM * Mk.transpose();
    C.topRightCorner(k, k) = w_h_matrix(pe, k);
    C.bottomLeftCorner(k, k) = pe.GB * Mk.transpose() + w_b_matrix(pe, k);
    return C;
}

Eigen::MatrixXd c_b_matrix(const PastEval& pe, int k) {
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2 * k, 2 * k);
    const Eigen::MatrixXd& Mk = pe.M[static_cast<std::size_t>(k)];
    C.topLeftCorner(k, k) = -pe.LAM.transpose() * Mk;
    C.topRightCorner(k, k) = w_b_matrix(pe, k);
    C.bottomLeftCorner(k, k) = -pe.GH * Mk + w_h_matrix(pe, k);
    return C;
}

Curve constant_curve(const Eigen::VectorXd& value, const SGrid& grid) {
    Curve c;
    c.v = value.replicate(1, grid.size());
    c.dv = Eigen::MatrixXd::Zero(value.size(), grid.size());
    return c;
}

Curve curve_from_trajectory(const std::vector<Eigen::VectorXd>& traj,
                            const OdeRhs& rhs, const SGrid& grid) {
    const auto dim = traj[0].size();
    Curve c;
    c.v.resize(dim, grid.size());
    c.dv.resize(dim, grid.size());
    for (int j = 0; j < grid.size(); ++j) {
        c.v.col(j) = traj[static_cast<std::size_t>(j)];
        c.dv.col(j) = rhs(grid.s(j), traj[static_cast<std::size_t>(j)]);
    }
    return c;
}

}  // namespace

Eigen::MatrixXd linear_m_matrix(const Eigen::MatrixXd& gamma_h,
                                const Eigen::MatrixXd& gamma_b, int k, double a,
                                const HPConfig& hp) {
    if (k == 0) return Eigen::MatrixXd(0, 0);
    // Gradients in the linear case are path-independent: evaluate at z = 0.
    PathPoint zero{Eigen::VectorXd::Zero(k), Eigen::VectorXd::Zero(k)};
    const ActivationSpec lin = ActivationSpec::make_linear(a);
    const SkeletonVectors sv =
        skeleton_vectors({gamma_h, gamma_b}, zero, k, lin, hp.eta_u, hp.eta_v);
    const double su2 = hp.sigma_u * hp.sigma_u;
    const double sv2 = hp.sigma_v * hp.sigma_v;
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(k, k);
    const Eigen::MatrixXd GH = gamma_h.topLeftCorner(k, k);
    const Eigen::MatrixXd GB = gamma_b.topLeftCorner(k, k);
    const double inner = (std::getenv("RLIM_MK_VARIANT_B") != nullptr) ? 1.0 : a;
    return -a * (hp.eta_u * sv2 * sv.grad_b_vF.transpose() *
                     (id - inner * hp.eta_v * GB * sv.grad_b_vG) +
                 hp.eta_v * su2 * (id - inner * hp.eta_u * sv.grad_h_vF.transpose() * GH) *
                     sv.grad_h_vG);
}

Eigen::MatrixXd linear_m_matrix(const CovarianceState& state, int node, int k) {
    const PastEval pe = eval_past(state, state.cfg.grid.s(node), k);
    return pe.M[static_cast<std::size_t>(k)];
}

Eigen::MatrixXd CovarianceState::gamma_h_at(double s, int k) const {
    Eigen::MatrixXd G(k + 1, k + 1);
    for (int kk = 0; kk <= k; ++kk) {
        const Eigen::VectorXd col = gamma_h_col[kk].eval(cfg.grid, s, cfg.interp);
        for (int i = 0; i <= kk; ++i) {
            G(i, kk) = col[i];
            G(kk, i) = col[i];
        }
    }
    return G;
}

Eigen::MatrixXd CovarianceState::gamma_b_at(double s, int k) const {
    Eigen::MatrixXd G(k + 1, k + 1);
    for (int kk = 0; kk <= k; ++kk) {
        const Eigen::VectorXd col = gamma_b_col[kk].eval(cfg.grid, s, cfg.interp);
        for (int i = 0; i <= kk; ++i) {
            G(i, kk) = col[i];
            G(kk, i) = col[i];
        }
    }
    return G;
}

Eigen::MatrixXd CovarianceState::lambda_at(double s, int k) const {
    Eigen::MatrixXd L(k + 1, k + 1);
    for (int kk = 0; kk <= k; ++kk) {
        if (kk > 0) {
            const Eigen::VectorXd row = lambda_row[kk].eval(cfg.grid, s, cfg.interp);
            const Eigen::VectorXd col = lambda_col[kk].eval(cfg.grid, s, cfg.interp);
            for (int i = 0; i < kk; ++i) {
                L(kk, i) = row[i];
                L(i, kk) = col[i];
            }
        }
        L(kk, kk) = lambda_diag[kk];
    }
    return L;
}

Eigen::MatrixXd CovarianceState::gamma_h_node(int node, int k) const {
    return gamma_h_at(cfg.grid.s(node), k);
}
Eigen::MatrixXd CovarianceState::gamma_b_node(int node, int k) const {
    return gamma_b_at(cfg.grid.s(node), k);
}
Eigen::MatrixXd CovarianceState::lambda_node(int node, int k) const {
    return lambda_at(cfg.grid.s(node), k);
}

void linear_limit_step(CovarianceState& st, int k) {
    if (k != st.steps_done)
        throw InvalidInputError("linear_limit_step: steps must be appended in order");
    const LinearLimitConfig& cfg = st.cfg;
    const SGrid& grid = cfg.grid;
    const double sin2 = cfg.hp.sigma_in * cfg.hp.sigma_in;
    const double sout2 = cfg.hp.sigma_out * cfg.hp.sigma_out;

    if (k == 0) {
        // Closed-form initialization; W_in and W_out independent makes y_0 = 0.
        st.y_list.push_back(Eigen::VectorXd::Zero(cfg.y_star.size()));
        const Eigen::VectorXd g0 = grad_loss(st.y_list[0], cfg.y_star);
        st.gamma_h_col.push_back(constant_curve(
            Eigen::VectorXd::Constant(1, sin2 * cfg.x.squaredNorm()), grid));
        st.gamma_b_col.push_back(
            constant_curve(Eigen::VectorXd::Constant(1, sout2 * g0.squaredNorm()), grid));
        st.lambda_row.emplace_back();
        st.lambda_col.emplace_back();
        st.lambda_diag.push_back(0.0);
        st.xi_h_in.push_back(constant_curve(sin2 * cfg.x, grid));
        st.xi_h_out.push_back(
            constant_curve(Eigen::VectorXd::Zero(cfg.y_star.size()), grid));
        st.xi_b_in.push_back(constant_curve(Eigen::VectorXd::Zero(cfg.x.size()), grid));
        st.xi_b_out.push_back(constant_curve(sout2 * g0, grid));
        st.steps_done = 1;
        return;
    }

    const auto wrap_overflow = [&](const char* stage, auto&& body) {
        try {
            return body();
        } catch (const OverflowError& e) {
            throw OverflowError(std::string("linear_limit_step k=") + std::to_string(k) +
                                    " " + stage + ": " + e.what(),
                                e.s_position, e.state_norm);
        }
    };

    // (i) forward system for (Gamma-vec^H_k ; Lambda_{k, <k}).
    const OdeRhs rhs_i = [&](double s, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        const PastEval pe = eval_past(st, s, k);
        return c_h_matrix(pe, k) * z;
    };
    Eigen::VectorXd init_i(2 * k);
    {
        const PastEval pe0 = eval_past(st, 0.0, k);
        init_i.head(k).setConstant(sin2 * cfg.x.squaredNorm());
        init_i.tail(k) = pe0.XBin.transpose() * cfg.x;
    }
    const auto traj_i =
        wrap_overflow("step(i)", [&] { return rk4_integrate(rhs_i, init_i, grid, true); });
    const Curve curve_i = curve_from_trajectory(traj_i, rhs_i, grid);

    // Gamma-vec^H_k is now available as a stored curve for steps (ii)-(vi).
    Curve gvec_h_k;
    gvec_h_k.v = curve_i.v.topRows(k);
    gvec_h_k.dv = curve_i.dv.topRows(k);
    Curve lam_row_k;
    lam_row_k.v = curve_i.v.bottomRows(k);
    lam_row_k.dv = curve_i.dv.bottomRows(k);

    // (ii) forward system for (xi^{H,in}_k ; xi^{H,out}_k).
    const auto d_in = cfg.x.size();
    const auto d_out = cfg.y_star.size();
    const OdeRhs rhs_ii = [&](double s, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        (void)z;  // homogeneous in the past cross-covariances, not in z itself
        const PastEval pe = eval_past(st, s, k);
        const Eigen::VectorXd gh = gvec_h_k.eval(grid, s, cfg.interp);
        const Eigen::VectorXd w = pe.M[static_cast<std::size_t>(k)].transpose() * gh;
        Eigen::VectorXd out(d_in + d_out);
        out.head(d_in) = pe.XBin * w;
        out.tail(d_out) = pe.XBout * w;
        return out;
    };
    Eigen::VectorXd init_ii(d_in + d_out);
    init_ii.head(d_in) = sin2 * cfg.x;
    init_ii.tail(d_out).setZero();
    const auto traj_ii = wrap_overflow(
        "step(ii)", [&] { return rk4_integrate(rhs_ii, init_ii, grid, true); });
    const Curve curve_ii = curve_from_trajectory(traj_ii, rhs_ii, grid);

    // (iii) output of step k.
    const Eigen::VectorXd y_k = curve_ii.v.col(grid.n_steps).tail(d_out);
    const Eigen::VectorXd gl_k = grad_loss(y_k, cfg.y_star);

    // (iv) backward system for (Gamma-vec^B_k ; Lambda_{<k, k}).
    const OdeRhs rhs_iv = [&](double s, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        const PastEval pe = eval_past(st, s, k);
        return c_b_matrix(pe, k) * z;
    };
    Eigen::VectorXd term_iv(2 * k);
    {
        const PastEval pe1 = eval_past(st, 1.0, k);
        for (int j = 0; j < k; ++j)
            term_iv[j] = sout2 * gl_k.dot(grad_loss(st.y_list[static_cast<std::size_t>(j)],
                                                    cfg.y_star));
        term_iv.tail(k) = pe1.XHout.transpose() * gl_k;
    }
    const auto traj_iv = wrap_overflow(
        "step(iv)", [&] { return rk4_integrate(rhs_iv, term_iv, grid, false); });
    const Curve curve_iv = curve_from_trajectory(traj_iv, rhs_iv, grid);

    Curve gvec_b_k;
    gvec_b_k.v = curve_iv.v.topRows(k);
    gvec_b_k.dv = curve_iv.dv.topRows(k);
    Curve lam_col_k;
    lam_col_k.v = curve_iv.v.bottomRows(k);
    lam_col_k.dv = curve_iv.dv.bottomRows(k);

    // (v) backward system for (xi^{B,in}_k ; xi^{B,out}_k).
    const OdeRhs rhs_v = [&](double s, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        (void)z;
        const PastEval pe = eval_past(st, s, k);
        const Eigen::VectorXd gb = gvec_b_k.eval(grid, s, cfg.interp);
        const Eigen::VectorXd w = pe.M[static_cast<std::size_t>(k)] * gb;
        Eigen::VectorXd out(d_in + d_out);
        out.head(d_in) = -(pe.XHin * w);
        out.tail(d_out) = -(pe.XHout * w);
        return out;
    };
    Eigen::VectorXd term_v(d_in + d_out);
    term_v.head(d_in).setZero();
    term_v.tail(d_out) = sout2 * gl_k;
    const auto traj_v = wrap_overflow(
        "step(v)", [&] { return rk4_integrate(rhs_v, term_v, grid, false); });
    const Curve curve_v = curve_from_trajectory(traj_v, rhs_v, grid);

    // (vi) diagonal closure.  Lambda_{k,k} is constant in s and has two
    // reconstructions whose agreement checks the whole backward pass.
    const double lam_from_b = cfg.x.dot(curve_v.v.col(0).head(d_in));
    const double lam_from_h = gl_k.dot(curve_ii.v.col(grid.n_steps).tail(d_out));
    const double lam_scale = std::max({1.0, std::abs(lam_from_b), std::abs(lam_from_h)});
    if (std::abs(lam_from_b - lam_from_h) > 1e-8 * lam_scale)
        throw OverflowError("linear_limit_step: Lambda_{k,k} reconstruction mismatch (" +
                                std::to_string(lam_from_b) + " vs " +
                                std::to_string(lam_from_h) + ") at k=" + std::to_string(k),
                            0.0, std::abs(lam_from_b - lam_from_h));

    const OdeRhs rhs_gh_diag = [&](double s, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        (void)z;
        const PastEval pe = eval_past(st, s, k);
        const Eigen::VectorXd gh = gvec_h_k.eval(grid, s, cfg.interp);
        const Eigen::VectorXd lrow = lam_row_k.eval(grid, s, cfg.interp);
        Eigen::VectorXd out(1);
        out[0] = 2.0 * gh.dot(pe.M[static_cast<std::size_t>(k)] * lrow);
        return out;
    };
    const auto traj_gh_diag = wrap_overflow("step(vi) Gamma^H_kk", [&] {
        return rk4_integrate(rhs_gh_diag,
                             Eigen::VectorXd::Constant(1, sin2 * cfg.x.squaredNorm()),
                             grid, true);
    });

    const OdeRhs rhs_gb_diag = [&](double s, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        (void)z;
        const PastEval pe = eval_past(st, s, k);
        const Eigen::VectorXd gb = gvec_b_k.eval(grid, s, cfg.interp);
        const Eigen::VectorXd lcol = lam_col_k.eval(grid, s, cfg.interp);
        Eigen::VectorXd out(1);
        out[0] = -2.0 * gb.dot(pe.M[static_cast<std::size_t>(k)].transpose() * lcol);
        return out;
    };
    const auto traj_gb_diag = wrap_overflow("step(vi) Gamma^B_kk", [&] {
        return rk4_integrate(rhs_gb_diag,
                             Eigen::VectorXd::Constant(1, sout2 * gl_k.squaredNorm()),
                             grid, false);
    });

    // Append row/column k to the state.
    Curve gh_col;
    gh_col.v.resize(k + 1, grid.size());
    gh_col.dv.resize(k + 1, grid.size());
    gh_col.v.topRows(k) = gvec_h_k.v;
    gh_col.dv.topRows(k) = gvec_h_k.dv;
    Curve gb_col;
    gb_col.v.resize(k + 1, grid.size());
    gb_col.dv.resize(k + 1, grid.size());
    gb_col.v.topRows(k) = gvec_b_k.v;
    gb_col.dv.topRows(k) = gvec_b_k.dv;
    for (int j = 0; j < grid.size(); ++j) {
        const auto ju = static_cast<std::size_t>(j);
        gh_col.v(k, j) = traj_gh_diag[ju][0];
        gh_col.dv(k, j) = rhs_gh_diag(grid.s(j), traj_gh_diag[ju])[0];
        gb_col.v(k, j) = traj_gb_diag[ju][0];
        gb_col.dv(k, j) = rhs_gb_diag(grid.s(j), traj_gb_diag[ju])[0];
    }

    st.gamma_h_col.push_back(std::move(gh_col));
    st.gamma_b_col.push_back(std::move(gb_col));
    st.lambda_row.push_back(std::move(lam_row_k));
    st.lambda_col.push_back(std::move(lam_col_k));
    st.lambda_diag.push_back(lam_from_b);
    Curve xi_h_in_k, xi_h_out_k;
    xi_h_in_k.v = curve_ii.v.topRows(d_in);
    xi_h_in_k.dv = curve_ii.dv.topRows(d_in);
    xi_h_out_k.v = curve_ii.v.bottomRows(d_out);
    xi_h_out_k.dv = curve_ii.dv.bottomRows(d_out);
    st.xi_h_in.push_back(std::move(xi_h_in_k));
    st.xi_h_out.push_back(std::move(xi_h_out_k));
    Curve xi_b_in_k, xi_b_out_k;
    xi_b_in_k.v = curve_v.v.topRows(d_in);
    xi_b_in_k.dv = curve_v.dv.topRows(d_in);
    xi_b_out_k.v = curve_v.v.bottomRows(d_out);
    xi_b_out_k.dv = curve_v.dv.bottomRows(d_out);
    st.xi_b_in.push_back(std::move(xi_b_in_k));
    st.xi_b_out.push_back(std::move(xi_b_out_k));
    st.y_list.push_back(y_k);
    st.steps_done = k + 1;
}

CovarianceState linear_limit_run(const LinearLimitConfig& cfg) {
    cfg.validate();
    CovarianceState st;
    st.cfg = cfg;
    for (int k = 0; k < cfg.K; ++k) linear_limit_step(st, k);
    return st;
}

CoupledSample coupled_limit_sample(const CovarianceState& st,
                                   const Eigen::VectorXd& w_in_row,
                                   const Eigen::VectorXd& w_out_row, double s) {
    const double sin2 = st.cfg.hp.sigma_in * st.cfg.hp.sigma_in;
    const double sout2 = st.cfg.hp.sigma_out * st.cfg.hp.sigma_out;
    if (sin2 == 0.0 || sout2 == 0.0)
        throw InvalidConfigError(
            "coupled_limit_sample: reconstruction requires sigma_in, sigma_out > 0");
    CoupledSample out;
    out.H.resize(st.steps_done);
    out.B.resize(st.steps_done);
    for (int k = 0; k < st.steps_done; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        out.H[k] = st.xi_h_in[ku].eval(st.cfg.grid, s, st.cfg.interp).dot(w_in_row) / sin2 +
                   st.xi_h_out[ku].eval(st.cfg.grid, s, st.cfg.interp).dot(w_out_row) / sout2;
        out.B[k] = st.xi_b_in[ku].eval(st.cfg.grid, s, st.cfg.interp).dot(w_in_row) / sin2 +
                   st.xi_b_out[ku].eval(st.cfg.grid, s, st.cfg.interp).dot(w_out_row) / sout2;
    }
    return out;
}

Eigen::VectorXd coupled_limit_hidden(const CovarianceState& st,
                                     const Eigen::MatrixXd& w_in,
                                     const Eigen::MatrixXd& w_out, int k, double s) {
    const double sin2 = st.cfg.hp.sigma_in * st.cfg.hp.sigma_in;
    const double sout2 = st.cfg.hp.sigma_out * st.cfg.hp.sigma_out;
    if (sin2 == 0.0 || sout2 == 0.0)
        throw InvalidConfigError("coupled_limit_hidden: sigma_in, sigma_out must be > 0");
    if (k >= st.steps_done)
        throw InvalidInputError("coupled_limit_hidden: step index beyond computed state");
    const auto ku = static_cast<std::size_t>(k);
    return w_in * (st.xi_h_in[ku].eval(st.cfg.grid, s, st.cfg.interp) / sin2) +
           w_out * (st.xi_h_out[ku].eval(st.cfg.grid, s, st.cfg.interp) / sout2);
}

Eigen::VectorXd coupled_limit_backward(const CovarianceState& st,
                                       const Eigen::MatrixXd& w_in,
                                       const Eigen::MatrixXd& w_out, int k, double s) {
    const double sin2 = st.cfg.hp.sigma_in * st.cfg.hp.sigma_in;
    const double sout2 = st.cfg.hp.sigma_out * st.cfg.hp.sigma_out;
    if (sin2 == 0.0 || sout2 == 0.0)
        throw InvalidConfigError("coupled_limit_backward: sigma_in, sigma_out must be > 0");
    if (k >= st.steps_done)
        throw InvalidInputError("coupled_limit_backward: step index beyond computed state");
    const auto ku = static_cast<std::size_t>(k);
    return w_in * (st.xi_b_in[ku].eval(st.cfg.grid, s, st.cfg.interp) / sin2) +
           w_out * (st.xi_b_out[ku].eval(st.cfg.grid, s, st.cfg.interp) / sout2);
}

std::string CovarianceState::to_json() const {
    nlohmann::json j;
    j["grid"] = {{"n_steps", cfg.grid.n_steps}};
    j["a"] = cfg.a;
    j["K"] = steps_done;
    j["interp"] = cfg.interp == CurveInterp::hermite ? "hermite" : "linear";
    nlohmann::json ys = nlohmann::json::array();
    for (const auto& y : y_list) ys.push_back(std::vector<double>(y.begin(), y.end()));
    j["y"] = ys;

    const int k = steps_done - 1;
    const auto matrix_rows = [](const Eigen::MatrixXd& m) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
            rows.push_back(row);
        }
        return rows;
    };
    nlohmann::json nodes = nlohmann::json::array();
    for (int node = 0; node < cfg.grid.size(); ++node) {
        nlohmann::json e;
        e["s"] = cfg.grid.s(node);
        e["gamma_h"] = matrix_rows(gamma_h_node(node, k));
        e["gamma_b"] = matrix_rows(gamma_b_node(node, k));
        e["lambda_hb"] = matrix_rows(lambda_node(node, k));
        nodes.push_back(std::move(e));
    }
    j["cov"] = std::move(nodes);
    return j.dump(2);
}

}  // namespace rlim
