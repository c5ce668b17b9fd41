#include "rlim/skeleton.hpp"

#include <map>
#include <tuple>

#include "rlim/errors.hpp"
#include "rlim/numerics.hpp"

namespace rlim {

namespace {

void check_path(const PathPoint& path, int k) {
    if (path.z_h.size() < k || path.z_b.size() < k)
        throw InvalidInputError("skeleton: path shorter than step index k");
}

void check_cov(const CovSlices& cov, int k) {
    if (cov.gamma_h.rows() < k || cov.gamma_h.cols() < k || cov.gamma_b.rows() < k ||
        cov.gamma_b.cols() < k)
        throw InvalidInputError("skeleton: covariance slices smaller than step index k");
}

}  // namespace

SkeletonVectors skeleton_vectors(const CovSlices& cov, const PathPoint& path, int k,
                                 const ActivationSpec& act, double eta_u, double eta_v) {
    check_path(path, k);
    if (k > 0) check_cov(cov, k);

    SkeletonVectors sv;
    sv.vF.resize(k);
    sv.vG.resize(k);
    sv.p.resize(k);
    sv.q.resize(k);
    sv.grad_h_vF = Eigen::MatrixXd::Zero(k, k);
    sv.grad_b_vF = Eigen::MatrixXd::Zero(k, k);
    sv.grad_h_vG = Eigen::MatrixXd::Zero(k, k);
    sv.grad_b_vG = Eigen::MatrixXd::Zero(k, k);

    // dp(r, j) = d p_j / d z^h-or-b_r, built alongside the values.
    Eigen::MatrixXd dp_h = Eigen::MatrixXd::Zero(k, k);
    Eigen::MatrixXd dp_b = Eigen::MatrixXd::Zero(k, k);
    Eigen::MatrixXd dq_h = Eigen::MatrixXd::Zero(k, k);
    Eigen::MatrixXd dq_b = Eigen::MatrixXd::Zero(k, k);

    for (int j = 0; j < k; ++j) {
        double pj = path.z_h[j];
        double qj = path.z_b[j];
        for (int i = 0; i < j; ++i) {
            pj -= eta_u * sv.vF[i] * cov.gamma_h(i, j);
            qj -= eta_v * sv.vG[i] * cov.gamma_b(i, j);
        }
        sv.p[j] = pj;
        sv.q[j] = qj;

        for (int r = 0; r <= j; ++r) {
            double dph = (r == j) ? 1.0 : 0.0;
            double dpb = 0.0;
            double dqh = 0.0;
            double dqb = (r == j) ? 1.0 : 0.0;
            for (int i = r; i < j; ++i) {
                dph -= eta_u * sv.grad_h_vF(r, i) * cov.gamma_h(i, j);
                dpb -= eta_u * sv.grad_b_vF(r, i) * cov.gamma_h(i, j);
                dqh -= eta_v * sv.grad_h_vG(r, i) * cov.gamma_b(i, j);
                dqb -= eta_v * sv.grad_b_vG(r, i) * cov.gamma_b(i, j);
            }
            dp_h(r, j) = dph;
            dp_b(r, j) = dpb;
            dq_h(r, j) = dqh;
            dq_b(r, j) = dqb;
        }

        const double r1 = act.d1(pj);
        const double r2 = act.d2(pj);
        sv.vF[j] = r1 * qj;
        sv.vG[j] = act.rho(pj);
        for (int r = 0; r <= j; ++r) {
            sv.grad_h_vF(r, j) = r2 * dp_h(r, j) * qj + r1 * dq_h(r, j);
            sv.grad_b_vF(r, j) = r2 * dp_b(r, j) * qj + r1 * dq_b(r, j);
            sv.grad_h_vG(r, j) = r1 * dp_h(r, j);
            sv.grad_b_vG(r, j) = r1 * dp_b(r, j);
        }
    }
    return sv;
}

double skeleton_p_next(const SkeletonVectors& sv, double z_h_k,
                       const Eigen::VectorXd& gamma_h_col, double eta_u) {
    if (gamma_h_col.size() != sv.vF.size())
        throw InvalidInputError("skeleton_p_next: column length mismatch");
    return z_h_k - eta_u * sv.vF.dot(gamma_h_col);
}

double skeleton_q_next(const SkeletonVectors& sv, double z_b_k,
                       const Eigen::VectorXd& gamma_b_col, double eta_v) {
    if (gamma_b_col.size() != sv.vG.size())
        throw InvalidInputError("skeleton_q_next: column length mismatch");
    return z_b_k - eta_v * sv.vG.dot(gamma_b_col);
}

SkeletonEvalFinite finite_skeleton_eval(const std::vector<Eigen::VectorXd>& h_traj,
                                        const std::vector<Eigen::VectorXd>& b_traj,
                                        const PathPoint& path, int k,
                                        const ActivationSpec& act, double eta_u,
                                        double eta_v) {
    check_path(path, k);
    if (static_cast<int>(h_traj.size()) < k || static_cast<int>(b_traj.size()) < k)
        throw InvalidInputError("finite_skeleton_eval: trajectories shorter than k");

    const Eigen::Index D = h_traj.empty() ? 1 : h_traj[0].size();
    SkeletonEvalFinite out;
    out.f.assign(static_cast<std::size_t>(k) + 1, Eigen::VectorXd::Zero(D));
    out.g.assign(static_cast<std::size_t>(k) + 1, Eigen::VectorXd::Zero(D));
    for (int j = 0; j < k; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const double arg = path.z_h[j] + rms_dot(h_traj[ju], out.f[ju]);
        const double bracket = path.z_b[j] + rms_dot(b_traj[ju], out.g[ju]);
        out.f[ju + 1] = out.f[ju] - eta_u * act.d1(arg) * bracket * h_traj[ju];
        out.g[ju + 1] = out.g[ju] - eta_v * act.rho(arg) * b_traj[ju];
    }
    return out;
}

SkeletonEvalMeanField mf_skeleton_eval(const Eigen::VectorXd& h_sample,
                                       const Eigen::VectorXd& b_sample,
                                       const Eigen::VectorXd& e_hf,
                                       const Eigen::VectorXd& e_bg,
                                       const PathPoint& path, int k,
                                       const ActivationSpec& act, double eta_u,
                                       double eta_v) {
    check_path(path, k);
    if (h_sample.size() < k || b_sample.size() < k || e_hf.size() < k || e_bg.size() < k)
        throw InvalidInputError("mf_skeleton_eval: realization/oracle shorter than k");

    SkeletonEvalMeanField out;
    out.F = Eigen::VectorXd::Zero(k + 1);
    out.G = Eigen::VectorXd::Zero(k + 1);
    for (int j = 0; j < k; ++j) {
        const double arg = path.z_h[j] + e_hf[j];
        const double bracket = path.z_b[j] + e_bg[j];
        out.F[j + 1] = out.F[j] - eta_u * act.d1(arg) * bracket * h_sample[j];
        out.G[j + 1] = out.G[j] - eta_v * act.rho(arg) * b_sample[j];
    }
    return out;
}

double linear_phi(int sign, int m, int i, int d, const CovSlices& cov, double a,
                  double eta_u, double eta_v) {
    if (sign != 1 && sign != -1) throw InvalidInputError("linear_phi: sign must be +-1");
    if (m < 0 || d < 0 || m > d) return 0.0;
    if (m == 0) return d == 0 ? 1.0 : 0.0;
    check_cov(cov, i + d + 1);

    // Kernel factor along a path edge: parity of the edge position alternates
    // between eta_u Gamma^H and eta_v Gamma^B, starting from `sign`.
    const auto kernel = [&](int parity_sign, int u, int v) {
        return parity_sign > 0 ? eta_u * cov.gamma_h(u, v) : eta_v * cov.gamma_b(u, v);
    };

    // Memoized recursion over the disjoint split of increasing paths by their
    // second-to-last node: Phi(m, i, d) = -a sum_{d'} Phi(m-1, i, d') K(i+d', i+d).
    std::map<std::tuple<int, int>, double> memo;  // keyed on (m, d); i, sign fixed
    std::function<double(int, int)> phi = [&](int mm, int dd) -> double {
        if (mm == 0) return dd == 0 ? 1.0 : 0.0;
        if (mm > dd) return 0.0;
        const auto key = std::make_tuple(mm, dd);
        if (auto it = memo.find(key); it != memo.end()) return it->second;
        const int last_parity = ((mm - 1) % 2 == 0) ? sign : -sign;
        double acc = 0.0;
        for (int dprev = mm - 1; dprev <= dd - 1; ++dprev)
            acc += phi(mm - 1, dprev) * kernel(last_parity, i + dprev, i + dd);
        acc *= -a;
        memo[key] = acc;
        return acc;
    };
    return phi(m, d);
}

LinearSkeletonGradients linear_skeleton_gradients(const CovSlices& cov, int k, double a,
                                                  double eta_u, double eta_v) {
    LinearSkeletonGradients g;
    g.grad_h_vF = Eigen::MatrixXd::Zero(k, k);
    g.grad_b_vF = Eigen::MatrixXd::Zero(k, k);
    g.grad_h_vG = Eigen::MatrixXd::Zero(k, k);
    g.grad_b_vG = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < k; ++i) {
        for (int d = 0; d + i < k; ++d) {
            double hF = 0.0, bF = 0.0, hG = 0.0, bG = 0.0;
            for (int m = 0; m <= d; ++m) {
                if (m % 2 == 1) {
                    hF += linear_phi(-1, m, i, d, cov, a, eta_u, eta_v);
                    bG += linear_phi(+1, m, i, d, cov, a, eta_u, eta_v);
                } else {
                    bF += linear_phi(+1, m, i, d, cov, a, eta_u, eta_v);
                    hG += linear_phi(-1, m, i, d, cov, a, eta_u, eta_v);
                }
            }
            g.grad_h_vF(i, i + d) = a * hF;
            g.grad_b_vF(i, i + d) = a * bF;
            g.grad_h_vG(i, i + d) = a * hG;
            g.grad_b_vG(i, i + d) = a * bG;
        }
    }
    return g;
}

}  // namespace rlim
