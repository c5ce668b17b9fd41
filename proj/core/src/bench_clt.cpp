#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "rlim/bench.hpp"
#include "rlim/dmft.hpp"
#include "rlim/errors.hpp"
#include "rlim/parallel.hpp"

namespace rlim {

CltFunction clt_function_from_string(const std::string& name) {
    if (name == "linear") return CltFunction::linear;
    if (name == "quadratic") return CltFunction::quadratic;
    if (name == "tanh") return CltFunction::tanh_dir;
    if (name == "gauss_exp") return CltFunction::gauss_exp;
    if (name == "cubic_sat") return CltFunction::cubic_sat;
    throw InvalidConfigError("unknown clt test function: '" + name + "'");
}

std::string to_string(CltFunction f) {
    switch (f) {
        case CltFunction::linear: return "linear";
        case CltFunction::quadratic: return "quadratic";
        case CltFunction::tanh_dir: return "tanh";
        case CltFunction::gauss_exp: return "gauss_exp";
        case CltFunction::cubic_sat: return "cubic_sat";
    }
    return "?";
}

void CltProbe::validate() const {
    if (n_values.empty()) throw InvalidConfigError("CltProbe: empty n grid");
    if (directions.empty()) throw InvalidConfigError("CltProbe: no directions");
    for (long long n : n_values)
        if (n % static_cast<long long>(directions.size()) != 0)
            throw InvalidConfigError(
                "CltProbe: every n must be divisible by the direction count so the "
                "matched covariance is n-independent");
    if (!(sigma2 > 0.0)) throw InvalidConfigError("CltProbe: sigma2 must be > 0");
    if (ydist == CltYDist::two_point && (two_point_p <= 0.0 || two_point_p >= 1.0))
        throw InvalidConfigError("CltProbe: two_point_p must be in (0,1)");
    if (mc_draws < 100) throw InvalidConfigError("CltProbe: mc_draws too small");
}

BinomialTable::BinomialTable(long long n, double p) : n_(n) {
    if (n < 0 || p <= 0.0 || p >= 1.0)
        throw InvalidConfigError("BinomialTable: need n >= 0 and p in (0,1)");
    // pmf by stable recurrence outward from the mode, then cumulative sums.
    const auto mode = static_cast<long long>(std::floor((n + 1) * p));
    const double logp = std::log(p), logq = std::log1p(-p);
    const double log_pmf_mode = std::lgamma(static_cast<double>(n) + 1.0) -
                                std::lgamma(static_cast<double>(mode) + 1.0) -
                                std::lgamma(static_cast<double>(n - mode) + 1.0) +
                                mode * logp + (n - mode) * logq;
    const double sd = std::sqrt(n * p * (1.0 - p));
    lo_ = std::max(0LL, mode - static_cast<long long>(60.0 * sd) - 2);
    const long long hi = std::min(n, mode + static_cast<long long>(60.0 * sd) + 2);
    std::vector<double> pmf(static_cast<std::size_t>(hi - lo_ + 1), 0.0);
    pmf[static_cast<std::size_t>(mode - lo_)] = std::exp(log_pmf_mode);
    for (long long k = mode; k > lo_; --k) {
        // pmf(k-1) = pmf(k) * k (1-p) / ((n-k+1) p)
        const double f = static_cast<double>(k) * (1.0 - p) /
                         (static_cast<double>(n - k + 1) * p);
        pmf[static_cast<std::size_t>(k - 1 - lo_)] =
            pmf[static_cast<std::size_t>(k - lo_)] * f;
    }
    for (long long k = mode; k < hi; ++k) {
        const double f = static_cast<double>(n - k) * p /
                         (static_cast<double>(k + 1) * (1.0 - p));
        pmf[static_cast<std::size_t>(k + 1 - lo_)] =
            pmf[static_cast<std::size_t>(k - lo_)] * f;
    }
    cdf_.resize(pmf.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pmf.size(); ++i) {
        acc += pmf[i];
        cdf_[i] = acc;
    }
    for (auto& c : cdf_) c /= acc;  // normalize the truncated window
}

long long BinomialTable::sample(double u01) const {
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u01);
    const auto idx = static_cast<long long>(it - cdf_.begin());
    return lo_ + std::min(idx, static_cast<long long>(cdf_.size()) - 1);
}

namespace {

struct CltEvaluator {
    CltFunction f;
    Eigen::VectorXd v;    // probe direction for directional functions
    Eigen::MatrixXd A;    // quadratic form

    double operator()(const Eigen::VectorXd& x) const {
        switch (f) {
            case CltFunction::linear: return v.dot(x);
            case CltFunction::quadratic: return x.dot(A * x);
            case CltFunction::tanh_dir: return std::tanh(v.dot(x));
            case CltFunction::gauss_exp: return std::exp(-0.5 * x.squaredNorm());
            case CltFunction::cubic_sat: {
                const double u = v.dot(x);
                return u * u * u / (1.0 + u * u);
            }
        }
        return 0.0;
    }
};

struct MeanVar {
    double mean = 0.0;
    double var = 0.0;  // variance of the mean estimator
};

// Two-pass accumulation over per-thread partial sums keeps the reduction
// order fixed regardless of thread count.
MeanVar estimate(long long draws, int threads,
                 const std::function<double(Rng&, int)>& draw_value, const Rng& rng,
                 const std::string& tag) {
    const int blocks = 64;
    std::vector<double> sum(blocks, 0.0), sumsq(blocks, 0.0);
    const long long per_block = draws / blocks;
    parallel_for(blocks, threads, [&](int lo, int hi) {
        for (int b = lo; b < hi; ++b) {
            Rng r = rng.derive(tag + ".block" + std::to_string(b));
            double s = 0.0, s2 = 0.0;
            for (long long i = 0; i < per_block; ++i) {
                const double val = draw_value(r, b);
                s += val;
                s2 += val * val;
            }
            sum[static_cast<std::size_t>(b)] = s;
            sumsq[static_cast<std::size_t>(b)] = s2;
        }
    });
    double s = 0.0, s2 = 0.0;
    for (int b = 0; b < blocks; ++b) {
        s += sum[static_cast<std::size_t>(b)];
        s2 += sumsq[static_cast<std::size_t>(b)];
    }
    const double total = static_cast<double>(per_block) * blocks;
    MeanVar mv;
    mv.mean = s / total;
    const double var = std::max(s2 / total - mv.mean * mv.mean, 0.0);
    mv.var = var / total;
    return mv;
}

}  // namespace

std::vector<CltGap> clt_empirical_gap(const CltProbe& probe, const Rng& rng) {
    probe.validate();
    const int m = static_cast<int>(probe.directions.size());
    const auto d = probe.directions[0].size();
    for (const auto& dir : probe.directions)
        if (dir.size() != d) throw InvalidConfigError("CltProbe: direction dims differ");

    // Matched covariance: Sigma_n^S = sigma2/m sum_j u_j u_j^T for every n
    // divisible by m.
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);
    for (const auto& u : probe.directions) sigma += u * u.transpose();
    sigma *= probe.sigma2 / m;
    if (probe.sigma_target) sigma = *probe.sigma_target;
    const Eigen::MatrixXd sqrt_sigma = psd_sqrt(sigma);

    CltEvaluator eval;
    eval.f = probe.f;
    eval.v = probe.directions[0].normalized();
    eval.A = Eigen::MatrixXd::Identity(d, d);
    for (Eigen::Index i = 0; i + 1 < d; ++i) eval.A(i, i + 1) = eval.A(i + 1, i) = 0.25;

    // Two-point parameters: centered, variance sigma2, skewed for p != 1/2.
    const double p = probe.two_point_p;
    const double sd = std::sqrt(probe.sigma2);
    const double y_hi = sd * std::sqrt((1.0 - p) / p);
    const double y_lo = -sd * std::sqrt(p / (1.0 - p));

    // Reference E[f(Z)], shared across all n.
    const MeanVar ref = estimate(
        probe.mc_draws, 0,
        [&](Rng& r, int) {
            Eigen::VectorXd xi(d);
            for (Eigen::Index a = 0; a < d; ++a) xi[a] = r.normal();
            return eval(sqrt_sigma * xi);
        },
        rng, "clt.ref");

    std::vector<CltGap> out;
    for (long long n : probe.n_values) {
        const long long per_class = n / m;
        std::optional<BinomialTable> table;
        if (probe.ydist == CltYDist::two_point) table.emplace(per_class, p);
        const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));

        const MeanVar sn = estimate(
            probe.mc_draws, 0,
            [&](Rng& r, int) {
                Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
                for (int j = 0; j < m; ++j) {
                    double class_sum = 0.0;
                    switch (probe.ydist) {
                        case CltYDist::two_point: {
                            const auto successes = table->sample(r.uniform01());
                            class_sum = y_hi * static_cast<double>(successes) +
                                        y_lo * static_cast<double>(per_class - successes);
                            break;
                        }
                        case CltYDist::gaussian:
                            // partial sums of gaussians are gaussian
                            class_sum =
                                std::sqrt(static_cast<double>(per_class) * probe.sigma2) *
                                r.normal();
                            break;
                        case CltYDist::uniform: {
                            const double half = std::sqrt(3.0 * probe.sigma2);
                            for (long long i = 0; i < per_class; ++i)
                                class_sum += r.uniform(-half, half);
                            break;
                        }
                    }
                    x += class_sum * probe.directions[static_cast<std::size_t>(j)];
                }
                return eval(x * inv_sqrt_n);
            },
            rng, "clt.n" + std::to_string(n));

        CltGap gap;
        gap.f_id = to_string(probe.f);
        gap.n = n;
        gap.gap = std::abs(sn.mean - ref.mean);
        gap.stderr_ = std::sqrt(sn.var + ref.var);
        out.push_back(gap);
    }
    return out;
}

}  // namespace rlim
