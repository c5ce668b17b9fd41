#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rlim/dmft.hpp"
#include "rlim/linear_limit.hpp"
#include "rlim/resnet.hpp"
#include "rlim/rng.hpp"

namespace rlim {

// ---------------------------------------------------------------------------
// Error functionals (finite model vs coupled limit)
// ---------------------------------------------------------------------------

// Target trajectories for one model comparison.  hidden[k][layer][datapoint]
// holds the limit (or proxy) states in R^D at the model's recorded layers.
struct LimitHidden {
    std::string coupling_key;  // must match the compared record's key
    std::vector<std::vector<std::vector<Eigen::VectorXd>>> hidden;
    std::vector<std::vector<Eigen::VectorXd>> y;  // y[k][datapoint]
};

double delta_h(const TrainRecord& record, const LimitHidden& limit, int k);
double delta_y(const TrainRecord& record, const std::vector<Eigen::VectorXd>& y_limit,
               int k);

// ---------------------------------------------------------------------------
// Shape sweeps
// ---------------------------------------------------------------------------

struct SweepShape {
    int L = 1, M = 1, D = 1;
};

enum class CompareTarget { exact_linear_limit, reference_proxy, dmft };
enum class CouplingMode { coupled_embeddings, uncoupled };

CompareTarget compare_target_from_string(const std::string& name);
std::string to_string(CompareTarget target);

struct SweepConfig {
    std::vector<SweepShape> shapes;
    int seeds = 1;                 // seeds base_seed, base_seed+1, ...
    std::uint64_t base_seed = 0;
    int K = 5;
    int d_in = 3, d_out = 3;
    ActivationSpec act = ActivationSpec::make_linear(1.0);
    HPConfig hp;
    Eigen::VectorXd x;       // single datapoint protocol
    Eigen::VectorXd y_star;
    CompareTarget target = CompareTarget::exact_linear_limit;
    CouplingMode coupling = CouplingMode::coupled_embeddings;
    SGrid grid{200};
    ShapeConfig proxy_shape{64, 512, 256, 3, 3};  // reference_proxy target
    int dmft_particles = 2000;
    int dmft_n_mc = 2000;
    double picard_tol = 1e-4;
    int picard_max_iters = 50;
    int threads = 0;
    bool record_timings = false;

    void validate() const;
};

struct ErrorRecord {
    std::string run_id;
    int L = 0, M = 0, D = 0;
    long long P = 0;
    std::uint64_t seed = 0;
    int k = 0;
    double delta_h = 0.0;  // NaN when coupling was off
    double delta_y = 0.0;
    double wall_ms = 0.0;
    bool failed = false;
    std::string error;
};

std::vector<ErrorRecord> run_sweep(const SweepConfig& cfg);

// ---------------------------------------------------------------------------
// Rate fits
// ---------------------------------------------------------------------------

enum class RateModel { h_rate, y_rate };

// Two-term error model ||[alpha t1, beta t2]||_2 with
//   h_rate: (t1, t2) = (sqrt(D/(M L)), 1/sqrt(D))
//   y_rate: (t1, t2) = (D/(M L),       1/sqrt(D)).
struct RateFit {
    RateModel model = RateModel::h_rate;
    double alpha = 0.0;
    double beta = 0.0;
    double r2 = 0.0;
    Eigen::VectorXd residuals;  // log-space residuals, seed-averaged points
    int n_points = 0;
};

struct ShapePoint {
    int L = 0, M = 0, D = 0;
    double err = 0.0;
};

// Seed-averages records at step k (k = -1 means the largest step present),
// then runs the nonlinear least-squares fit in log space.
RateFit fit_rate(const std::vector<ErrorRecord>& records, RateModel model, int k = -1);
RateFit fit_rate_points(const std::vector<ShapePoint>& points, RateModel model);

double rate_t1(RateModel model, int L, int M, int D);
double rate_t2(RateModel model, int L, int M, int D);

struct SlopeFit {
    double slope = 0.0;
    double stderr_ = 0.0;
    double r2 = 0.0;
    int n_points = 0;
};

// OLS slope of log(err) against log(x).
SlopeFit loglog_slope(const std::vector<double>& x, const std::vector<double>& err);

// ---------------------------------------------------------------------------
// Gaussianity checks
// ---------------------------------------------------------------------------

struct HistogramKs {
    struct Bin {
        double lo = 0.0, hi = 0.0;
        int count = 0;
        double pdf_limit = 0.0;  // N(0, var_limit) density at the bin center
    };
    std::vector<Bin> bins;
    double ks_stat = 0.0;
    double p_value = 0.0;
};

HistogramKs histogram_ks(const Eigen::VectorXd& coords, double var_limit,
                         int n_bins = 24);

// Asymptotic Kolmogorov tail Q(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2).
double kolmogorov_tail(double lambda);

// ---------------------------------------------------------------------------
// Quantitative CLT probe
// ---------------------------------------------------------------------------

enum class CltFunction { linear, quadratic, tanh_dir, gauss_exp, cubic_sat };

CltFunction clt_function_from_string(const std::string& name);
std::string to_string(CltFunction f);

enum class CltYDist { two_point, gaussian, uniform };

// S_n = n^{-1/2} sum_i Y_i v_i with directions cycling through `directions`.
// Covariance-matched by default: the Gaussian reference uses Sigma_n^S.
struct CltProbe {
    std::vector<long long> n_values{100, 1000, 10000, 100000};
    CltFunction f = CltFunction::cubic_sat;
    std::vector<Eigen::VectorXd> directions;
    CltYDist ydist = CltYDist::two_point;
    double two_point_p = 0.05;  // skewed so the n^{-1/2} Lindeberg term is visible
    double sigma2 = 1.0;
    long long mc_draws = 1000000;
    std::optional<Eigen::MatrixXd> sigma_target;  // defaults to matched covariance

    void validate() const;
};

struct CltGap {
    std::string f_id;
    long long n = 0;
    double gap = 0.0;
    double stderr_ = 0.0;
};

std::vector<CltGap> clt_empirical_gap(const CltProbe& probe, const Rng& rng);

// Exact-inversion binomial sampler from a tabulated CDF.  Deterministic and
// O(log n) per draw; partial sums of two-point variables reduce to this.
class BinomialTable {
public:
    BinomialTable(long long n, double p);
    long long sample(double u01) const;
    long long n() const { return n_; }

private:
    long long n_ = 0;
    long long lo_ = 0;  // support window offset
    std::vector<double> cdf_;
};

// ---------------------------------------------------------------------------
// CSV emission (schemas fixed; deterministic shortest round-trip formatting)
// ---------------------------------------------------------------------------

std::string format_double(double v);

void emit_errors_csv(const std::vector<ErrorRecord>& records, const std::string& path);
void emit_fits_csv(const std::vector<RateFit>& fits, const std::string& path);
void emit_hist_csv(const std::vector<std::tuple<int, int, HistogramKs>>& hists,
                   const std::string& path);  // (layer, k, histogram)
void emit_clt_csv(const std::vector<CltGap>& gaps, const std::string& path);

std::vector<ErrorRecord> parse_errors_csv(const std::string& path);

}  // namespace rlim
