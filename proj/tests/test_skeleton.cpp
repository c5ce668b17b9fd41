#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rlim/numerics.hpp"
#include "rlim/rng.hpp"
#include "rlim/skeleton.hpp"

using namespace rlim;

namespace {

// Random symmetric PSD matrix with unit-scale entries.
Eigen::MatrixXd random_psd(Rng& rng, int n) {
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    return a * a.transpose() / n + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

PathPoint random_path(Rng& rng, int k) {
    PathPoint p{Eigen::VectorXd(k), Eigen::VectorXd(k)};
    for (int i = 0; i < k; ++i) {
        p.z_h[i] = rng.normal();
        p.z_b[i] = rng.normal();
    }
    return p;
}

}  // namespace

TEST_CASE("skeleton vectors: k=1 base case") {
    Rng rng(5, "sv1");
    const CovSlices cov{random_psd(rng, 1), random_psd(rng, 1)};
    const PathPoint path = random_path(rng, 1);
    const auto act = ActivationSpec::make_tanh();
    const auto sv = skeleton_vectors(cov, path, 1, act, 0.7, 1.3);
    CHECK(sv.vF[0] == doctest::Approx(act.d1(path.z_h[0]) * path.z_b[0]).epsilon(1e-14));
    CHECK(sv.vG[0] == doctest::Approx(act.rho(path.z_h[0])).epsilon(1e-14));
}

TEST_CASE("skeleton vectors: linear k=1 gradients") {
    Rng rng(6, "sv2");
    const CovSlices cov{random_psd(rng, 1), random_psd(rng, 1)};
    const PathPoint path = random_path(rng, 1);
    const double a = 0.8;
    const auto sv =
        skeleton_vectors(cov, path, 1, ActivationSpec::make_linear(a), 1.0, 1.0);
    CHECK(sv.grad_b_vF(0, 0) == doctest::Approx(a).epsilon(1e-14));
    CHECK(sv.grad_h_vG(0, 0) == doctest::Approx(a).epsilon(1e-14));
    CHECK(sv.grad_h_vF(0, 0) == 0.0);
    CHECK(sv.grad_b_vG(0, 0) == 0.0);
}

TEST_CASE("skeleton vectors: gradients match central finite differences") {
    const auto act = ActivationSpec::make_tanh();
    const double eta_u = 0.9, eta_v = 1.1, h = 1e-6;
    for (int k = 1; k <= 4; ++k) {
        Rng rng(100 + static_cast<std::uint64_t>(k), "svfd");
        const CovSlices cov{random_psd(rng, k), random_psd(rng, k)};
        const PathPoint path = random_path(rng, k);
        const auto sv = skeleton_vectors(cov, path, k, act, eta_u, eta_v);
        for (int comp = 0; comp < k; ++comp) {
            for (bool wrt_h : {true, false}) {
                const auto f = [&](const Eigen::VectorXd& z) {
                    PathPoint p = path;
                    (wrt_h ? p.z_h : p.z_b) = z;
                    return skeleton_vectors(cov, p, k, act, eta_u, eta_v).vF[comp];
                };
                const auto g = [&](const Eigen::VectorXd& z) {
                    PathPoint p = path;
                    (wrt_h ? p.z_h : p.z_b) = z;
                    return skeleton_vectors(cov, p, k, act, eta_u, eta_v).vG[comp];
                };
                const Eigen::VectorXd base = wrt_h ? path.z_h : path.z_b;
                const Eigen::VectorXd fdF = finite_diff_gradient(f, base, h);
                const Eigen::VectorXd fdG = finite_diff_gradient(g, base, h);
                for (int r = 0; r < k; ++r) {
                    const double aF =
                        wrt_h ? sv.grad_h_vF(r, comp) : sv.grad_b_vF(r, comp);
                    const double aG =
                        wrt_h ? sv.grad_h_vG(r, comp) : sv.grad_b_vG(r, comp);
                    CHECK(std::abs(aF - fdF[r]) <
                          1e-6 * std::max(1.0, std::abs(fdF[r])));
                    CHECK(std::abs(aG - fdG[r]) <
                          1e-6 * std::max(1.0, std::abs(fdG[r])));
                }
            }
        }
    }
}

TEST_CASE("skeleton vectors: strict upper triangularity is exact") {
    const auto act = ActivationSpec::make_tanh();
    for (int k : {2, 4, 6}) {
        Rng rng(40 + static_cast<std::uint64_t>(k), "ut");
        const CovSlices cov{random_psd(rng, k), random_psd(rng, k)};
        const auto sv = skeleton_vectors(cov, random_path(rng, k), k, act, 1.0, 1.0);
        for (int r = 0; r < k; ++r)
            for (int c = 0; c < r; ++c) {
                CHECK(sv.grad_h_vF(r, c) == 0.0);
                CHECK(sv.grad_b_vF(r, c) == 0.0);
                CHECK(sv.grad_h_vG(r, c) == 0.0);
                CHECK(sv.grad_b_vG(r, c) == 0.0);
            }
    }
}

TEST_CASE("skeleton vectors: non-anticipativity in the path") {
    const auto act = ActivationSpec::make_tanh();
    const int k = 3, K = 6;
    Rng rng(77, "na");
    const CovSlices cov{random_psd(rng, K), random_psd(rng, K)};
    PathPoint path = random_path(rng, K);
    const auto sv1 = skeleton_vectors(cov, path, k, act, 1.0, 1.0);
    for (int j = k; j < K; ++j) {
        path.z_h[j] += 17.0;
        path.z_b[j] -= 5.0;
    }
    const auto sv2 = skeleton_vectors(cov, path, k, act, 1.0, 1.0);
    CHECK((sv1.vF - sv2.vF).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sv1.vG - sv2.vG).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("finite skeleton: base and first unrolling") {
    const int D = 8;
    Rng rng(9, "fs");
    std::vector<Eigen::VectorXd> h_traj, b_traj;
    for (int j = 0; j < 3; ++j) {
        h_traj.push_back(sample_centered(rng, {DistFamily::gaussian, 1.0}, D));
        b_traj.push_back(sample_centered(rng, {DistFamily::gaussian, 1.0}, D));
    }
    const PathPoint path = random_path(rng, 3);
    const double a = 1.3, eta_u = 0.7, eta_v = 0.4;
    const auto lin = ActivationSpec::make_linear(a);

    SUBCASE("k=0 gives the zero maps") {
        const auto ev = finite_skeleton_eval(h_traj, b_traj, path, 0, lin, eta_u, eta_v);
        CHECK(ev.f[0].cwiseAbs().maxCoeff() == 0.0);
        CHECK(ev.g[0].cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("k=1 linear unrolls to the closed form") {
        const auto ev = finite_skeleton_eval(h_traj, b_traj, path, 1, lin, eta_u, eta_v);
        const Eigen::VectorXd f1 = -eta_u * a * path.z_b[0] * h_traj[0];
        const Eigen::VectorXd g1 = -eta_v * a * path.z_h[0] * b_traj[0];
        CHECK((ev.f[1] - f1).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((ev.g[1] - g1).cwiseAbs().maxCoeff() < 1e-14);
    }
    SUBCASE("zero learning rates freeze the maps") {
        const auto ev = finite_skeleton_eval(h_traj, b_traj, path, 3, lin, 0.0, 0.0);
        for (const auto& f : ev.f) CHECK(f.cwiseAbs().maxCoeff() == 0.0);
        for (const auto& g : ev.g) CHECK(g.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("skeleton boundedness: linear growth in the path bound (tanh)") {
    // || f_k(c z) ||_Dbar / c stays within a factor 2 across c in {1,10,100}.
    const int D = 64, k = 4;
    Rng rng(11, "bound");
    std::vector<Eigen::VectorXd> h_traj, b_traj;
    for (int j = 0; j < k; ++j) {
        h_traj.push_back(sample_centered(rng, {DistFamily::gaussian, 1.0}, D));
        b_traj.push_back(sample_centered(rng, {DistFamily::gaussian, 1.0}, D));
    }
    const PathPoint base = random_path(rng, k);
    const auto act = ActivationSpec::make_tanh();
    std::vector<double> ratios;
    for (double c : {1.0, 10.0, 100.0}) {
        PathPoint scaled{c * base.z_h, c * base.z_b};
        const auto ev = finite_skeleton_eval(h_traj, b_traj, scaled, k, act, 1.0, 1.0);
        ratios.push_back(rms_norm(ev.f[k]) / c);
    }
    // At-most-linear growth: scaling the path never more than doubles the
    // per-unit response (tanh saturation can only shrink it).
    const double hi = *std::max_element(ratios.begin(), ratios.end());
    CHECK(hi <= 2.0 * ratios[0]);
}

TEST_CASE("mean-field skeleton: Eq contraction identity to 1e-12") {
    // With oracle expectations built from the same covariance as the skeleton
    // vectors, F_k = -eta_u vF . H and G_k = -eta_v vG . B exactly.
    const auto act = ActivationSpec::make_tanh();
    const double eta_u = 0.8, eta_v = 1.2;
    for (int k = 1; k <= 5; ++k) {
        Rng rng(200 + static_cast<std::uint64_t>(k), "mf");
        const CovSlices cov{random_psd(rng, k), random_psd(rng, k)};
        const PathPoint path = random_path(rng, k);
        Eigen::VectorXd H(k), B(k);
        for (int j = 0; j < k; ++j) {
            H[j] = rng.normal();
            B[j] = rng.normal();
        }
        const auto sv = skeleton_vectors(cov, path, k, act, eta_u, eta_v);
        Eigen::VectorXd e_hf(k), e_bg(k);
        for (int j = 0; j < k; ++j) {
            double hf = 0.0, bg = 0.0;
            for (int i = 0; i < j; ++i) {
                hf -= eta_u * sv.vF[i] * cov.gamma_h(i, j);
                bg -= eta_v * sv.vG[i] * cov.gamma_b(i, j);
            }
            e_hf[j] = hf;
            e_bg[j] = bg;
        }
        const auto mf = mf_skeleton_eval(H, B, e_hf, e_bg, path, k, act, eta_u, eta_v);
        double contracted_f = 0.0, contracted_g = 0.0;
        for (int i = 0; i < k; ++i) {
            contracted_f += sv.vF[i] * H[i];
            contracted_g += sv.vG[i] * B[i];
        }
        CHECK(std::abs(mf.F[k] + eta_u * contracted_f) < 1e-12);
        CHECK(std::abs(mf.G[k] + eta_v * contracted_g) < 1e-12);
    }
}

TEST_CASE("mean-field skeleton: zero path with linear activation vanishes") {
    const auto lin = ActivationSpec::make_linear(0.9);
    const int k = 4;
    Rng rng(33, "mz");
    const CovSlices cov{random_psd(rng, k), random_psd(rng, k)};
    const PathPoint zero{Eigen::VectorXd::Zero(k), Eigen::VectorXd::Zero(k)};
    const auto sv = skeleton_vectors(cov, zero, k, lin, 1.0, 1.0);
    CHECK(sv.vF.cwiseAbs().maxCoeff() == 0.0);
    CHECK(sv.vG.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("linear case: skeleton vectors are linear in the path") {
    const auto lin = ActivationSpec::make_linear(1.1);
    const int k = 5;
    Rng rng(44, "lin");
    const CovSlices cov{random_psd(rng, k), random_psd(rng, k)};
    const PathPoint p1 = random_path(rng, k);
    const PathPoint p2 = random_path(rng, k);
    const PathPoint sum{p1.z_h + p2.z_h, p1.z_b + p2.z_b};
    const PathPoint zero{Eigen::VectorXd::Zero(k), Eigen::VectorXd::Zero(k)};
    const auto v1 = skeleton_vectors(cov, p1, k, lin, 0.6, 0.8).vF;
    const auto v2 = skeleton_vectors(cov, p2, k, lin, 0.6, 0.8).vF;
    const auto vs = skeleton_vectors(cov, sum, k, lin, 0.6, 0.8).vF;
    const auto v0 = skeleton_vectors(cov, zero, k, lin, 0.6, 0.8).vF;
    CHECK((vs - v1 - v2 + v0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("linear phi: base cases and single path") {
    Rng rng(55, "phi");
    const int k = 4;
    const CovSlices cov{random_psd(rng, k), random_psd(rng, k)};
    const double a = 0.7, eta_u = 0.9, eta_v = 1.2;
    CHECK(linear_phi(+1, 0, 2, 0, cov, a, eta_u, eta_v) == 1.0);
    CHECK(linear_phi(-1, 0, 1, 0, cov, a, eta_u, eta_v) == 1.0);
    CHECK(linear_phi(+1, 1, 1, 1, cov, a, eta_u, eta_v) ==
          doctest::Approx(-a * eta_u * cov.gamma_h(1, 2)).epsilon(1e-14));
    CHECK(linear_phi(-1, 1, 1, 1, cov, a, eta_u, eta_v) ==
          doctest::Approx(-a * eta_v * cov.gamma_b(1, 2)).epsilon(1e-14));
}

TEST_CASE("linear phi assembly equals recursion differentiation to 1e-10") {
    const double a = 0.85, eta_u = 0.9, eta_v = 1.15;
    for (int k = 1; k <= 5; ++k) {
        Rng rng(300 + static_cast<std::uint64_t>(k), "phik");
        const CovSlices cov{random_psd(rng, k), random_psd(rng, k)};
        const auto assembled = linear_skeleton_gradients(cov, k, a, eta_u, eta_v);
        const PathPoint zero{Eigen::VectorXd::Zero(k), Eigen::VectorXd::Zero(k)};
        const auto sv = skeleton_vectors(cov, zero, k, ActivationSpec::make_linear(a),
                                         eta_u, eta_v);
        CHECK((assembled.grad_h_vF - sv.grad_h_vF).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((assembled.grad_b_vF - sv.grad_b_vF).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((assembled.grad_h_vG - sv.grad_h_vG).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((assembled.grad_b_vG - sv.grad_b_vG).cwiseAbs().maxCoeff() < 1e-10);
    }
}
