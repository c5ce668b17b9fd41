#include "rlim/numerics.hpp"

#include <cmath>

namespace rlim {

OlsFit ols_fit(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const Eigen::Index n = x.size();
    if (n != y.size() || n < 2) throw InvalidInputError("ols_fit: need >= 2 paired points");
    const double mx = x.mean();
    const double my = y.mean();
    const double sxx = (x.array() - mx).square().sum();
    if (sxx == 0.0) throw InvalidInputError("ols_fit: degenerate x spread");
    const double sxy = ((x.array() - mx) * (y.array() - my)).sum();
    OlsFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    const Eigen::ArrayXd resid = y.array() - (fit.intercept + fit.slope * x.array());
    const double ssr = resid.square().sum();
    const double sst = (y.array() - my).square().sum();
    fit.r2 = sst > 0.0 ? 1.0 - ssr / sst : 1.0;
    fit.slope_stderr = n > 2 ? std::sqrt(ssr / static_cast<double>(n - 2) / sxx) : 0.0;
    return fit;
}

}  // namespace rlim
