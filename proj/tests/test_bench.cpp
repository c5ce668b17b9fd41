#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rlim/bench.hpp"
#include "rlim/errors.hpp"

using namespace rlim;

namespace {

TrainRecord tiny_record(const std::string& key, int D, int steps) {
    TrainRecord rec;
    rec.shape = ShapeConfig{2, 2, D, 2, 2};
    rec.record_layers = {2};
    rec.coupling_key = key;
    rec.w_in = Eigen::MatrixXd::Zero(D, 2);
    rec.w_out = Eigen::MatrixXd::Zero(D, 2);
    for (int k = 0; k <= steps; ++k) {
        TrainRecord::Step step;
        step.hidden = {{Eigen::VectorXd::Constant(D, 1.0 + k)}};
        step.y = {Eigen::VectorXd::Constant(2, 0.5 * k)};
        step.loss = 0.0;
        rec.steps.push_back(step);
    }
    return rec;
}

LimitHidden matching_limit(const TrainRecord& rec) {
    LimitHidden lh;
    lh.coupling_key = rec.coupling_key;
    for (const auto& step : rec.steps) {
        lh.hidden.push_back(step.hidden);
        lh.y.push_back(step.y);
    }
    return lh;
}

}  // namespace

TEST_CASE("delta_h: zero on identical trajectories, RMS of constant offsets") {
    const auto rec = tiny_record("c1", 6, 2);
    auto lh = matching_limit(rec);
    CHECK(delta_h(rec, lh, 1) == 0.0);

    for (auto& per_layer : lh.hidden[1])
        for (auto& v : per_layer) v.array() += 0.75;
    CHECK(delta_h(rec, lh, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("delta_h: refuses uncoupled inputs and mismatched D") {
    const auto rec = tiny_record("c1", 6, 1);
    auto lh = matching_limit(rec);
    lh.coupling_key = "other";
    CHECK_THROWS_AS(delta_h(rec, lh, 0), CouplingError);

    auto lh2 = matching_limit(rec);
    lh2.hidden[0][0][0] = Eigen::VectorXd::Zero(5);
    CHECK_THROWS_AS(delta_h(rec, lh2, 0), CouplingError);
}

TEST_CASE("delta_y: max Euclidean distance over datapoints") {
    const auto rec = tiny_record("c1", 4, 1);
    const std::vector<Eigen::VectorXd> target{rec.steps[1].y[0]};
    CHECK(delta_y(rec, target, 1) == 0.0);
    const std::vector<Eigen::VectorXd> offset{rec.steps[1].y[0] +
                                              Eigen::VectorXd::Constant(2, 0.3)};
    CHECK(delta_y(rec, offset, 1) == doctest::Approx(0.3 * std::sqrt(2.0)));
}

TEST_CASE("fit_rate: recovers planted (alpha, beta) exactly on noiseless data") {
    std::vector<ShapePoint> points;
    const double alpha = 0.67, beta = 0.44;
    for (int D : {8, 16, 32, 64, 128}) {
        const double t1 = rate_t1(RateModel::h_rate, 64, 512, D);
        const double t2 = rate_t2(RateModel::h_rate, 64, 512, D);
        points.push_back({64, 512, D, std::hypot(alpha * t1, beta * t2)});
    }
    const auto fit = fit_rate_points(points, RateModel::h_rate);
    CHECK(std::abs(fit.alpha - alpha) < 1e-6);
    CHECK(std::abs(fit.beta - beta) < 1e-6);
    CHECK(fit.r2 > 1.0 - 1e-10);
}

TEST_CASE("fit_rate: recovers within 15% under 20% multiplicative noise") {
    Rng rng(3, "fitnoise");
    const double alpha = 0.67, beta = 0.44;
    int ok = 0;
    const int trials = 100;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<ShapePoint> points;
        for (int D : {8, 16, 32, 64, 128})
            for (int M : {128, 512}) {
                const double t1 = rate_t1(RateModel::h_rate, 64, M, D);
                const double t2 = rate_t2(RateModel::h_rate, 64, M, D);
                const double noise = 1.0 + 0.2 * rng.normal();
                points.push_back(
                    {64, M, D, std::hypot(alpha * t1, beta * t2) * std::abs(noise)});
            }
        const auto fit = fit_rate_points(points, RateModel::h_rate);
        if (std::abs(fit.alpha - alpha) < 0.15 * alpha &&
            std::abs(fit.beta - beta) < 0.15 * beta)
            ++ok;
    }
    // Monte-Carlo over synthetic sweeps: the bulk must land inside 15%.
    CHECK(ok >= 80);
}

TEST_CASE("fit_rate: single-term data pushes the dead term to zero") {
    std::vector<ShapePoint> points;
    // pure 1/sqrt(D) law across D at several (M, L) so t1/t2 varies
    for (int D : {8, 16, 32, 64})
        for (int M : {64, 256}) points.push_back({64, M, D, 0.44 / std::sqrt(double(D))});
    const auto fit = fit_rate_points(points, RateModel::h_rate);
    CHECK(std::abs(fit.beta - 0.44) < 1e-3);
    const double worst_t1 = rate_t1(RateModel::h_rate, 64, 64, 64);
    CHECK(fit.alpha * worst_t1 < 1e-4);
}

TEST_CASE("fit_rate: degenerate spreads raise underdetermined errors") {
    std::vector<ShapePoint> few{{64, 64, 8, 0.5}, {64, 64, 16, 0.4}, {64, 64, 32, 0.3}};
    CHECK_THROWS_AS(fit_rate_points(few, RateModel::h_rate), UnderdeterminedFitError);

    // constant t1/t2 ratio: D^2/(ML) fixed while D varies
    std::vector<ShapePoint> ray;
    for (int D : {8, 16, 32, 64}) ray.push_back({64, D * D / 16, D, 0.1});
    CHECK_THROWS_AS(fit_rate_points(ray, RateModel::h_rate), UnderdeterminedFitError);
}

TEST_CASE("loglog_slope: exact power laws") {
    std::vector<double> x{10, 100, 1000, 10000}, e1, e2;
    for (double v : x) {
        e1.push_back(std::pow(v, -0.5));
        e2.push_back(std::pow(v, -1.0 / 6.0));
    }
    CHECK(std::abs(loglog_slope(x, e1).slope + 0.5) < 1e-12);
    CHECK(std::abs(loglog_slope(x, e2).slope + 1.0 / 6.0) < 1e-12);
    std::vector<double> bad{1, -2, 3, 4};
    CHECK_THROWS_AS(loglog_slope(x, bad), InvalidInputError);
}

TEST_CASE("histogram_ks: null calibration and power") {
    SUBCASE("false-reject rate at level 0.05 sits in [0.03, 0.08]") {
        int rejects = 0;
        const int trials = 500;
        for (int t = 0; t < trials; ++t) {
            Rng rng(static_cast<std::uint64_t>(t), "ksnull");
            const auto coords = sample_centered(rng, {DistFamily::gaussian, 2.0}, 200);
            if (histogram_ks(coords, 2.0).p_value < 0.05) ++rejects;
        }
        const double rate = static_cast<double>(rejects) / trials;
        CHECK(rate >= 0.03);
        CHECK(rate <= 0.08);
    }
    SUBCASE("wrong variance is rejected hard at D = 1000") {
        Rng rng(9, "kspow");
        const auto coords = sample_centered(rng, {DistFamily::gaussian, 4.0}, 1000);
        CHECK(histogram_ks(coords, 1.0).p_value < 1e-3);
    }
    SUBCASE("input validation") {
        Rng rng(10, "ksbad");
        const auto coords = sample_centered(rng, {DistFamily::gaussian, 1.0}, 100);
        CHECK_THROWS_AS(histogram_ks(coords, 0.0), InvalidInputError);
        CHECK_THROWS_AS(histogram_ks(coords.head(10), 1.0), InvalidInputError);
    }
}

TEST_CASE("binomial table sampler matches moments") {
    BinomialTable table(2000, 0.05);
    Rng rng(17, "bin");
    const int n = 200000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        const double v = static_cast<double>(table.sample(rng.uniform01()));
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean - 100.0) < 3.0 * std::sqrt(95.0 / n));
    CHECK(std::abs(var - 95.0) < 0.05 * 95.0);
}

TEST_CASE("clt gaps: linear and quadratic are zero within 3 se; matched covariance") {
    Rng dir_rng(21, "dirs");
    CltProbe probe;
    probe.n_values = {100, 1000};
    probe.mc_draws = 200000;
    probe.directions.clear();
    for (int j = 0; j < 5; ++j)
        probe.directions.push_back(sample_centered(dir_rng, {DistFamily::gaussian, 1.0}, 3));
    const Rng rng(5, "clt");

    probe.f = CltFunction::linear;
    for (const auto& gap : clt_empirical_gap(probe, rng))
        CHECK(gap.gap < 3.0 * gap.stderr_);

    probe.f = CltFunction::quadratic;
    for (const auto& gap : clt_empirical_gap(probe, rng))
        CHECK(gap.gap < 3.0 * gap.stderr_);
}

TEST_CASE("clt gaps: smooth nonquadratic decays with n") {
    Rng dir_rng(22, "dirs2");
    CltProbe probe;
    probe.n_values = {100, 10000};
    probe.mc_draws = 400000;
    probe.f = CltFunction::cubic_sat;
    probe.directions.clear();
    for (int j = 0; j < 5; ++j)
        probe.directions.push_back(sample_centered(dir_rng, {DistFamily::gaussian, 1.0}, 3));
    const auto gaps = clt_empirical_gap(probe, Rng(6, "clt2"));
    CHECK(gaps[0].gap > 5.0 * gaps[1].gap);  // roughly 1/sqrt(n) = 10x over 2 decades
}

TEST_CASE("csv: deterministic emission and exact round trip") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "rlim_csv_test";
    fs::create_directories(dir);
    const std::string path = (dir / "errors.csv").string();

    SUBCASE("empty record list emits a header-only file") {
        emit_errors_csv({}, path);
        const auto parsed = parse_errors_csv(path);
        CHECK(parsed.empty());
    }
    SUBCASE("round trip reproduces records exactly") {
        std::vector<ErrorRecord> records;
        for (int i = 0; i < 12; ++i) {
            ErrorRecord r;
            r.run_id = "run" + std::to_string(i);
            r.L = 64;
            r.M = 1 << (i % 5);
            r.D = 8 * (i + 1);
            r.P = ShapeConfig{r.L, r.M, r.D, 3, 3}.param_count();
            r.seed = static_cast<std::uint64_t>(i);
            r.k = i % 6;
            r.delta_h = 0.1 / std::sqrt(i + 1.0);
            r.delta_y = 1e-17 * (i + 1);
            r.wall_ms = 0.0;
            records.push_back(r);
        }
        emit_errors_csv(records, path);
        const auto parsed = parse_errors_csv(path);
        REQUIRE(parsed.size() == records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            CHECK(parsed[i].run_id == records[i].run_id);
            CHECK(parsed[i].delta_h == records[i].delta_h);  // bit-exact round trip
            CHECK(parsed[i].delta_y == records[i].delta_y);
            CHECK(parsed[i].P == records[i].P);
        }
    }
}
