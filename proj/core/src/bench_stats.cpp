#include <algorithm>
#include <cmath>

#include "rlim/bench.hpp"
#include "rlim/errors.hpp"

namespace rlim {

double kolmogorov_tail(double lambda) {
    if (lambda <= 0.0) return 1.0;
    double sum = 0.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = std::exp(-2.0 * j * j * lambda * lambda);
        sum += (j % 2 == 1 ? term : -term);
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

namespace {
inline double normal_cdf(double x, double sd) {
    return 0.5 * std::erfc(-x / (sd * std::sqrt(2.0)));
}
}  // namespace

HistogramKs histogram_ks(const Eigen::VectorXd& coords, double var_limit, int n_bins) {
    if (coords.size() < 50)
        throw InvalidInputError("histogram_ks: need at least 50 coordinates");
    if (!(var_limit > 0.0))
        throw InvalidInputError("histogram_ks: var_limit must be > 0");
    const double sd = std::sqrt(var_limit);
    std::vector<double> sorted(coords.begin(), coords.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());

    double ks = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double f = normal_cdf(sorted[i], sd);
        ks = std::max(ks, std::abs(f - static_cast<double>(i) / n));
        ks = std::max(ks, std::abs(static_cast<double>(i + 1) / n - f));
    }

    HistogramKs out;
    out.ks_stat = ks;
    out.p_value = kolmogorov_tail(std::sqrt(n) * ks);

    const double lo = std::min(sorted.front(), -4.0 * sd);
    const double hi = std::max(sorted.back(), 4.0 * sd);
    const double width = (hi - lo) / n_bins;
    out.bins.resize(static_cast<std::size_t>(n_bins));
    for (int b = 0; b < n_bins; ++b) {
        auto& bin = out.bins[static_cast<std::size_t>(b)];
        bin.lo = lo + b * width;
        bin.hi = bin.lo + width;
        const double center = 0.5 * (bin.lo + bin.hi);
        bin.pdf_limit = std::exp(-0.5 * center * center / var_limit) /
                        (sd * std::sqrt(2.0 * M_PI));
    }
    for (double v : sorted) {
        int b = static_cast<int>((v - lo) / width);
        b = std::clamp(b, 0, n_bins - 1);
        out.bins[static_cast<std::size_t>(b)].count += 1;
    }
    return out;
}

}  // namespace rlim
