#include <algorithm>
#include <cmath>
#include <map>

#include "rlim/bench.hpp"
#include "rlim/errors.hpp"
#include "rlim/numerics.hpp"

namespace rlim {

double rate_t1(RateModel model, int L, int M, int D) {
    const double ml = static_cast<double>(M) * static_cast<double>(L);
    return model == RateModel::h_rate ? std::sqrt(static_cast<double>(D) / ml)
                                      : static_cast<double>(D) / ml;
}

double rate_t2(RateModel /*model*/, int /*L*/, int /*M*/, int D) {
    return 1.0 / std::sqrt(static_cast<double>(D));
}

RateFit fit_rate_points(const std::vector<ShapePoint>& points, RateModel model) {
    if (points.size() < 4)
        throw UnderdeterminedFitError("fit_rate: need >= 4 distinct shapes");
    std::vector<double> t1(points.size()), t2(points.size()), loge(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!(points[i].err > 0.0))
            throw InvalidInputError("fit_rate: errors must be positive");
        t1[i] = rate_t1(model, points[i].L, points[i].M, points[i].D);
        t2[i] = rate_t2(model, points[i].L, points[i].M, points[i].D);
        loge[i] = std::log(points[i].err);
    }
    // alpha and beta separate only if the ratio t1/t2 varies across points.
    const double ratio0 = t1[0] / t2[0];
    bool ratio_varies = false;
    for (std::size_t i = 1; i < points.size(); ++i)
        if (std::abs(t1[i] / t2[i] - ratio0) > 1e-12 * std::abs(ratio0))
            ratio_varies = true;
    if (!ratio_varies)
        throw UnderdeterminedFitError(
            "fit_rate: shapes span a single axis (t1/t2 constant); alpha and beta are "
            "not separately identifiable");

    // Initialization: non-negative least squares on err^2 = A t1^2 + B t2^2.
    double s11 = 0, s12 = 0, s22 = 0, b1 = 0, b2 = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double x1 = t1[i] * t1[i], x2 = t2[i] * t2[i];
        const double y = points[i].err * points[i].err;
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        b1 += x1 * y;
        b2 += x2 * y;
    }
    const double det = s11 * s22 - s12 * s12;
    double A = 0.0, B = 0.0;
    if (std::abs(det) > 1e-300) {
        A = (b1 * s22 - b2 * s12) / det;
        B = (b2 * s11 - b1 * s12) / det;
    }
    const double median_err2 = points[points.size() / 2].err * points[points.size() / 2].err;
    double la = 0.5 * std::log(std::max(A, 1e-12 * median_err2));
    double lb = 0.5 * std::log(std::max(B, 1e-12 * median_err2));

    // Gauss-Newton with Levenberg damping on (log alpha, log beta).
    const auto sum_sq = [&](double la_, double lb_) {
        double ss = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double m2 = std::exp(2 * la_) * t1[i] * t1[i] +
                              std::exp(2 * lb_) * t2[i] * t2[i];
            const double r = loge[i] - 0.5 * std::log(m2);
            ss += r * r;
        }
        return ss;
    };
    double lambda = 1e-6;
    double ss = sum_sq(la, lb);
    for (int iter = 0; iter < 200; ++iter) {
        double j11 = 0, j12 = 0, j22 = 0, g1 = 0, g2 = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double a2 = std::exp(2 * la) * t1[i] * t1[i];
            const double b2_ = std::exp(2 * lb) * t2[i] * t2[i];
            const double m2 = a2 + b2_;
            const double r = loge[i] - 0.5 * std::log(m2);
            const double w1 = -a2 / m2;  // d r / d log alpha
            const double w2 = -b2_ / m2;
            j11 += w1 * w1;
            j12 += w1 * w2;
            j22 += w2 * w2;
            g1 += w1 * r;
            g2 += w2 * r;
        }
        bool stepped = false;
        for (int attempt = 0; attempt < 30; ++attempt) {
            const double d11 = j11 + lambda, d22 = j22 + lambda;
            const double det2 = d11 * d22 - j12 * j12;
            if (std::abs(det2) < 1e-300) break;
            const double dla = -(g1 * d22 - g2 * j12) / det2;
            const double dlb = -(g2 * d11 - g1 * j12) / det2;
            const double la_new = std::clamp(la + dla, -27.0, 27.0);
            const double lb_new = std::clamp(lb + dlb, -27.0, 27.0);
            const double ss_new = sum_sq(la_new, lb_new);
            if (ss_new <= ss) {
                la = la_new;
                lb = lb_new;
                ss = ss_new;
                lambda = std::max(lambda * 0.3, 1e-12);
                stepped = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!stepped || (std::abs(g1) < 1e-14 && std::abs(g2) < 1e-14)) break;
    }

    RateFit fit;
    fit.model = model;
    fit.alpha = std::exp(la);
    fit.beta = std::exp(lb);
    fit.n_points = static_cast<int>(points.size());
    fit.residuals.resize(static_cast<Eigen::Index>(points.size()));
    double mean_loge = 0.0;
    for (double v : loge) mean_loge += v;
    mean_loge /= static_cast<double>(points.size());
    double sst = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double m2 = fit.alpha * fit.alpha * t1[i] * t1[i] +
                          fit.beta * fit.beta * t2[i] * t2[i];
        fit.residuals[static_cast<Eigen::Index>(i)] = loge[i] - 0.5 * std::log(m2);
        sst += (loge[i] - mean_loge) * (loge[i] - mean_loge);
    }
    fit.r2 = sst > 0 ? 1.0 - fit.residuals.squaredNorm() / sst : 1.0;
    return fit;
}

RateFit fit_rate(const std::vector<ErrorRecord>& records, RateModel model, int k) {
    if (k < 0) {
        k = 0;
        for (const auto& r : records)
            if (!r.failed) k = std::max(k, r.k);
    }
    // Seed-average per shape at step k.
    std::map<std::tuple<int, int, int>, std::pair<double, int>> acc;
    for (const auto& r : records) {
        if (r.failed || r.k != k) continue;
        const double err = model == RateModel::h_rate ? r.delta_h : r.delta_y;
        if (!std::isfinite(err)) continue;
        auto& slot = acc[{r.L, r.M, r.D}];
        slot.first += err;
        slot.second += 1;
    }
    std::vector<ShapePoint> points;
    for (const auto& [shape, sum_count] : acc)
        points.push_back({std::get<0>(shape), std::get<1>(shape), std::get<2>(shape),
                          sum_count.first / sum_count.second});
    return fit_rate_points(points, model);
}

SlopeFit loglog_slope(const std::vector<double>& x, const std::vector<double>& err) {
    if (x.size() != err.size() || x.size() < 4)
        throw InvalidInputError("loglog_slope: need >= 4 paired points");
    Eigen::VectorXd lx(static_cast<Eigen::Index>(x.size()));
    Eigen::VectorXd ly(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(err[i] > 0.0))
            throw InvalidInputError("loglog_slope: values must be positive");
        lx[static_cast<Eigen::Index>(i)] = std::log(x[i]);
        ly[static_cast<Eigen::Index>(i)] = std::log(err[i]);
    }
    const OlsFit ols = ols_fit(lx, ly);
    return {ols.slope, ols.slope_stderr, ols.r2, static_cast<int>(x.size())};
}

}  // namespace rlim
