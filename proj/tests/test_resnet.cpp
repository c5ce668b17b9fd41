#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rlim/numerics.hpp"
#include "rlim/resnet.hpp"

using namespace rlim;

namespace {

Dataset random_dataset(const ShapeConfig& shape, int n, Rng& rng) {
    Dataset data;
    for (int i = 0; i < n; ++i) {
        data.x.push_back(sample_centered(rng, {DistFamily::gaussian, 1.0}, shape.d_in));
        data.y_star.push_back(
            sample_centered(rng, {DistFamily::gaussian, 1.0}, shape.d_out));
    }
    return data;
}

// Flattens trainable parameters for the finite-difference oracle.
Eigen::VectorXd flatten_uv(const ResNetParams& params) {
    Eigen::Index total = 0;
    for (const auto& u : params.U) total += u.size();
    for (const auto& v : params.V) total += v.size();
    Eigen::VectorXd out(total);
    Eigen::Index pos = 0;
    for (const auto& u : params.U) {
        out.segment(pos, u.size()) = Eigen::Map<const Eigen::VectorXd>(u.data(), u.size());
        pos += u.size();
    }
    for (const auto& v : params.V) {
        out.segment(pos, v.size()) = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
        pos += v.size();
    }
    return out;
}

void unflatten_uv(const Eigen::VectorXd& flat, ResNetParams& params) {
    Eigen::Index pos = 0;
    for (auto& u : params.U) {
        Eigen::Map<Eigen::VectorXd>(u.data(), u.size()) = flat.segment(pos, u.size());
        pos += u.size();
    }
    for (auto& v : params.V) {
        Eigen::Map<Eigen::VectorXd>(v.data(), v.size()) = flat.segment(pos, v.size());
        pos += v.size();
    }
}

}  // namespace

TEST_CASE("forward: zero input-weights reduce to the skip path") {
    ShapeConfig shape{3, 4, 5, 2, 2};
    HPConfig hp;
    hp.sigma_u = 0.0;  // U = 0, rho(0) = 0 kills every residual block
    const Rng rng(1, "fw");
    const auto params = init_params(shape, hp, rng);
    Eigen::VectorXd x(2);
    x << 0.3, -1.2;
    const auto res = forward(params, ActivationSpec::make_tanh(), x);
    const Eigen::VectorXd h0 = params.w_in * x;
    for (const auto& h : res.hidden) CHECK((h - h0).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::VectorXd y = params.w_out.transpose() * h0 / shape.D;
    CHECK((res.y - y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward: hand-computed 1x1x1 linear recursion") {
    ShapeConfig shape{1, 1, 1, 1, 1};
    HPConfig hp;
    const Rng rng(2, "hand");
    auto params = init_params(shape, hp, rng);
    params.w_in(0, 0) = 1.0;
    params.w_out(0, 0) = 1.0;
    params.U[0](0, 0) = 1.0;
    params.V[0](0, 0) = 1.0;
    Eigen::VectorXd x(1);
    x << 2.0;
    const auto res = forward(params, ActivationSpec::make_linear(1.0), x);
    CHECK(res.hidden[1][0] == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(res.y[0] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("forward: zero input gives zero output under tanh") {
    ShapeConfig shape{4, 3, 6, 2, 3};
    HPConfig hp;
    const Rng rng(3, "zx");
    const auto params = init_params(shape, hp, rng);
    const auto res =
        forward(params, ActivationSpec::make_tanh(), Eigen::VectorXd::Zero(2));
    CHECK(res.y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("init: zero sigma_u zeroes U; variance scales like D sigma_u^2") {
    ShapeConfig shape{2, 3, 4, 2, 2};
    HPConfig hp;
    hp.sigma_u = 0.0;
    const auto params = init_params(shape, hp, Rng(4, "iz"));
    for (const auto& u : params.U) CHECK(u.cwiseAbs().maxCoeff() == 0.0);

    HPConfig hp2;
    hp2.sigma_u = 0.7;
    double sum_sq = 0.0;
    long long count = 0;
    for (int rep = 0; rep < 10000; ++rep) {
        const auto p = init_params(shape, hp2, Rng(static_cast<std::uint64_t>(rep), "mc"));
        sum_sq += p.U[0].squaredNorm() + p.U[1].squaredNorm();
        count += 2 * shape.D * shape.M;
    }
    const double target = shape.D * hp2.sigma_u * hp2.sigma_u;
    CHECK(std::abs(sum_sq / count - target) / target < 0.05);
}

TEST_CASE("init: determinism across calls") {
    ShapeConfig shape{2, 3, 4, 2, 2};
    HPConfig hp;
    const auto p1 = init_params(shape, hp, Rng(42, "det"));
    const auto p2 = init_params(shape, hp, Rng(42, "det"));
    CHECK((p1.w_in - p2.w_in).cwiseAbs().maxCoeff() == 0.0);
    for (int l = 0; l < shape.L; ++l) {
        CHECK((p1.U[l] - p2.U[l]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((p1.V[l] - p2.V[l]).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("init: embedding rows nest across widths (coupling)") {
    HPConfig hp;
    const auto small = init_params({2, 3, 4, 3, 3}, hp, Rng(9, "nest"));
    const auto big = init_params({5, 7, 16, 3, 3}, hp, Rng(9, "nest"));
    CHECK((big.w_in.topRows(4) - small.w_in).cwiseAbs().maxCoeff() == 0.0);
    CHECK((big.w_out.topRows(4) - small.w_out).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradients: zero at the squared-error minimum") {
    ShapeConfig shape{2, 2, 3, 2, 2};
    HPConfig hp;
    const Rng rng(5, "gz");
    const auto params = init_params(shape, hp, rng);
    const auto act = ActivationSpec::make_tanh();
    Dataset data;
    Eigen::VectorXd x(2);
    x << 0.5, -0.25;
    data.x = {x};
    data.y_star = {forward(params, act, x).y};  // target equals the model output
    const auto lg = loss_and_grad(params, act, data, hp);
    CHECK(lg.loss == doctest::Approx(0.0));
    for (const auto& g : lg.grads.U) CHECK(g.cwiseAbs().maxCoeff() < 1e-16);
    for (const auto& g : lg.grads.V) CHECK(g.cwiseAbs().maxCoeff() < 1e-16);
}

TEST_CASE("gradients: duplicated datapoint equals the single-point gradient") {
    ShapeConfig shape{2, 3, 4, 2, 2};
    HPConfig hp;
    const auto params = init_params(shape, hp, Rng(6, "dup"));
    const auto act = ActivationSpec::make_tanh();
    Rng rng(7, "dupdata");
    Dataset one = random_dataset(shape, 1, rng);
    Dataset two;
    two.x = {one.x[0], one.x[0]};
    two.y_star = {one.y_star[0], one.y_star[0]};
    const auto lg1 = loss_and_grad(params, act, one, hp);
    const auto lg2 = loss_and_grad(params, act, two, hp);
    CHECK(lg1.loss == doctest::Approx(lg2.loss).epsilon(1e-14));
    for (int l = 0; l < shape.L; ++l)
        CHECK((lg1.grads.U[l] - lg2.grads.U[l]).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("gradients: backprop vs central differences on 20 random tiny shapes") {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng shape_rng(1000 + static_cast<std::uint64_t>(trial), "shape");
        const int L = 1 + static_cast<int>(shape_rng.next_u64() % 4);
        const int M = 1 + static_cast<int>(shape_rng.next_u64() % 4);
        const int D = 1 + static_cast<int>(shape_rng.next_u64() % 4);
        ShapeConfig shape{L, M, D, 2, 2};
        HPConfig hp;
        const auto act = trial % 2 == 0 ? ActivationSpec::make_tanh()
                                        : ActivationSpec::make_linear(0.8);
        auto params = init_params(shape, hp, shape_rng.derive("init"));
        Rng data_rng = shape_rng.derive("data");
        const Dataset data = random_dataset(shape, 1 + trial % 2, data_rng);

        const auto lg = loss_and_grad(params, act, data, hp);
        Eigen::VectorXd analytic(flatten_uv(params).size());
        {
            ResNetParams tmp = params;
            tmp.U = lg.grads.U;
            tmp.V = lg.grads.V;
            analytic = flatten_uv(tmp);
        }
        const Eigen::VectorXd x0 = flatten_uv(params);
        const auto f = [&](const Eigen::VectorXd& flat) {
            ResNetParams p = params;
            unflatten_uv(flat, p);
            return loss_and_grad(p, act, data, hp).loss;
        };
        const Eigen::VectorXd numeric = finite_diff_gradient(f, x0, 1e-5);
        const double scale = std::max(1e-12, numeric.cwiseAbs().maxCoeff());
        worst = std::max(worst,
                         (analytic - numeric).cwiseAbs().maxCoeff() / scale);
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("gd_step: zero gradient and zero learning rates leave params fixed") {
    ShapeConfig shape{2, 2, 2, 1, 1};
    HPConfig hp;
    auto params = init_params(shape, hp, Rng(8, "gd"));
    const auto before = params;
    ParamGrads zero;
    zero.w_in = Eigen::MatrixXd::Zero(2, 1);
    zero.w_out = Eigen::MatrixXd::Zero(2, 1);
    zero.U.assign(2, Eigen::MatrixXd::Zero(2, 2));
    zero.V.assign(2, Eigen::MatrixXd::Zero(2, 2));
    gd_step(params, zero, shape, hp);
    for (int l = 0; l < 2; ++l)
        CHECK((params.U[l] - before.U[l]).cwiseAbs().maxCoeff() == 0.0);

    Rng rng(9, "gdd");
    Dataset data = random_dataset(shape, 1, rng);
    const auto act = ActivationSpec::make_tanh();
    auto lg = loss_and_grad(params, act, data, hp);
    HPConfig frozen = hp;
    frozen.eta_u = frozen.eta_v = 0.0;
    auto params2 = params;
    gd_step(params2, lg.grads, shape, frozen);
    for (int l = 0; l < 2; ++l)
        CHECK((params2.U[l] - params.U[l]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gd_step: loss decreases for small eta") {
    ShapeConfig shape{2, 3, 4, 2, 2};
    HPConfig hp;
    hp.eta_u = hp.eta_v = 1e-3;
    auto params = init_params(shape, hp, Rng(10, "desc"));
    const auto act = ActivationSpec::make_tanh();
    Rng rng(11, "descd");
    const Dataset data = random_dataset(shape, 1, rng);
    const auto lg = loss_and_grad(params, act, data, hp);
    gd_step(params, lg.grads, shape, hp);
    const auto after = loss_and_grad(params, act, data, hp);
    CHECK(after.loss < lg.loss);
}

TEST_CASE("train: record layout, determinism, seed sensitivity") {
    ShapeConfig shape{4, 3, 5, 2, 2};
    HPConfig hp;
    const auto act = ActivationSpec::make_linear(0.9);
    Rng rng(12, "trd");
    const Dataset data = random_dataset(shape, 1, rng);

    SUBCASE("K=0 records only the initialization") {
        const auto rec = train(shape, hp, act, data, 0, {shape.L}, Rng(13, "t"));
        CHECK(rec.steps.size() == 1);
    }
    SUBCASE("same seed twice is bit-identical, different seeds differ") {
        const auto r1 = train(shape, hp, act, data, 3, {shape.L}, Rng(14, "t"));
        const auto r2 = train(shape, hp, act, data, 3, {shape.L}, Rng(14, "t"));
        const auto r3 = train(shape, hp, act, data, 3, {shape.L}, Rng(15, "t"));
        for (std::size_t k = 0; k < r1.steps.size(); ++k) {
            CHECK((r1.steps[k].y[0] - r2.steps[k].y[0]).cwiseAbs().maxCoeff() == 0.0);
            CHECK((r1.steps[k].hidden[0][0] - r2.steps[k].hidden[0][0])
                      .cwiseAbs()
                      .maxCoeff() == 0.0);
        }
        CHECK((r1.steps[3].y[0] - r3.steps[3].y[0]).cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("forward: residual telescoping to 1e-12") {
    ShapeConfig shape{6, 4, 8, 3, 3};
    HPConfig hp;
    const auto params = init_params(shape, hp, Rng(16, "tel"));
    const auto act = ActivationSpec::make_tanh();
    Eigen::VectorXd x(3);
    x << 0.2, -0.7, 1.1;
    const auto res = forward(params, act, x);
    // y from the telescoped sum of block contributions
    Eigen::VectorXd acc = params.w_in * x;
    for (int l = 0; l < shape.L; ++l) {
        const Eigen::VectorXd pre =
            (params.U[l].transpose() * res.hidden[static_cast<std::size_t>(l)]) /
            shape.D;
        acc += params.V[l] * pre.unaryExpr(act.rho) /
               (static_cast<double>(shape.M) * shape.L);
    }
    const Eigen::VectorXd y = params.w_out.transpose() * acc / shape.D;
    CHECK((y - res.y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward: permutation equivariance of hidden units") {
    ShapeConfig shape{3, 5, 4, 2, 2};
    HPConfig hp;
    auto params = init_params(shape, hp, Rng(17, "perm"));
    const auto act = ActivationSpec::make_tanh();
    Eigen::VectorXd x(2);
    x << 1.0, -0.5;
    const auto base = forward(params, act, x);
    // jointly permute the M columns of (U^l, V^l)
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(shape.M);
    perm.setIdentity();
    std::swap(perm.indices()[0], perm.indices()[3]);
    std::swap(perm.indices()[1], perm.indices()[4]);
    for (int l = 0; l < shape.L; ++l) {
        params.U[l] = params.U[l] * perm;
        params.V[l] = params.V[l] * perm;
    }
    const auto permuted = forward(params, act, x);
    CHECK((base.y - permuted.y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("MLU scaling: one-step feature update is Theta(1) across shapes") {
    // RMS feature update at a fixed relative layer stays within a factor-4
    // band as (L, M, D) doubles; no systematic log-log drift.
    HPConfig hp;
    const auto act = ActivationSpec::make_tanh();
    std::vector<double> updates, dims;
    for (const auto& [L, M, D] :
         std::vector<std::tuple<int, int, int>>{{8, 16, 16}, {16, 32, 32}, {32, 64, 64}}) {
        ShapeConfig shape{L, M, D, 3, 3};
        Rng rng(21, "mlu");
        auto params = init_params(shape, hp, rng);
        Rng drng(22, "mlud");
        Dataset data = random_dataset(shape, 1, drng);
        const int layer = L / 2;
        const auto before = forward(params, act, data.x[0]);
        const Eigen::VectorXd feat0 =
            ((params.U[layer].transpose() * before.hidden[static_cast<std::size_t>(layer)]) /
             shape.D)
                .unaryExpr(act.rho);
        const auto lg = loss_and_grad(params, act, data, hp);
        gd_step(params, lg.grads, shape, hp);
        const auto after = forward(params, act, data.x[0]);
        const Eigen::VectorXd feat1 =
            ((params.U[layer].transpose() * after.hidden[static_cast<std::size_t>(layer)]) /
             shape.D)
                .unaryExpr(act.rho);
        updates.push_back(rms_norm(feat1 - feat0));
        dims.push_back(static_cast<double>(D));
    }
    const double hi = *std::max_element(updates.begin(), updates.end());
    const double lo = *std::min_element(updates.begin(), updates.end());
    CHECK(hi / lo <= 4.0);
    Eigen::VectorXd lx(3), ly(3);
    for (int i = 0; i < 3; ++i) {
        lx[i] = std::log(dims[static_cast<std::size_t>(i)]);
        ly[i] = std::log(updates[static_cast<std::size_t>(i)]);
    }
    CHECK(std::abs(ols_fit(lx, ly).slope) < 0.25);
}

TEST_CASE("overflow: linear explosion fails fast with layer context") {
    ShapeConfig shape{4, 2, 2, 1, 1};
    HPConfig hp;
    auto params = init_params(shape, hp, Rng(23, "ov"));
    for (auto& u : params.U) u.setConstant(1e154);
    for (auto& v : params.V) v.setConstant(1e154);
    params.w_in.setConstant(1e10);
    Eigen::VectorXd x(1);
    x << 1.0;
    CHECK_THROWS_AS(forward(params, ActivationSpec::make_linear(1.0), x), OverflowError);
}
