#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "rlim/bench.hpp"
#include "rlim/errors.hpp"
#include "rlim/numerics.hpp"
#include "rlim/parallel.hpp"

namespace rlim {

double delta_h(const TrainRecord& record, const LimitHidden& limit, int k) {
    if (record.coupling_key.empty() || limit.coupling_key.empty() ||
        record.coupling_key != limit.coupling_key)
        throw CouplingError("delta_h: embedding randomness is not coupled");
    if (k < 0 || k >= static_cast<int>(record.steps.size()) ||
        k >= static_cast<int>(limit.hidden.size()))
        throw InvalidInputError("delta_h: step index out of range");
    const auto& model_step = record.steps[static_cast<std::size_t>(k)].hidden;
    const auto& limit_step = limit.hidden[static_cast<std::size_t>(k)];
    if (model_step.size() != limit_step.size())
        throw InvalidInputError("delta_h: recorded layer count mismatch");
    double worst = 0.0;
    for (std::size_t li = 0; li < model_step.size(); ++li) {
        if (model_step[li].size() != limit_step[li].size())
            throw InvalidInputError("delta_h: datapoint count mismatch");
        for (std::size_t i = 0; i < model_step[li].size(); ++i) {
            const Eigen::VectorXd& h = model_step[li][i];
            const Eigen::VectorXd& H = limit_step[li][i];
            if (h.size() != H.size())
                throw CouplingError("delta_h: embedding dimension mismatch");
            worst = std::max(worst, rms_norm(h - H));
        }
    }
    return worst;
}

double delta_y(const TrainRecord& record, const std::vector<Eigen::VectorXd>& y_limit,
               int k) {
    if (k < 0 || k >= static_cast<int>(record.steps.size()))
        throw InvalidInputError("delta_y: step index out of range");
    const auto& ys = record.steps[static_cast<std::size_t>(k)].y;
    double worst = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        const Eigen::VectorXd& target =
            y_limit.size() == 1 ? y_limit[0] : y_limit.at(i);
        worst = std::max(worst, (ys[i] - target).norm());
    }
    return worst;
}

CompareTarget compare_target_from_string(const std::string& name) {
    if (name == "exact_linear_limit") return CompareTarget::exact_linear_limit;
    if (name == "reference_proxy") return CompareTarget::reference_proxy;
    if (name == "dmft") return CompareTarget::dmft;
    throw InvalidConfigError("unknown comparison target: '" + name + "'");
}

std::string to_string(CompareTarget target) {
    switch (target) {
        case CompareTarget::exact_linear_limit: return "exact_linear_limit";
        case CompareTarget::reference_proxy: return "reference_proxy";
        case CompareTarget::dmft: return "dmft";
    }
    return "?";
}

void SweepConfig::validate() const {
    hp.validate();
    if (shapes.empty()) throw InvalidConfigError("SweepConfig: empty shape grid");
    if (seeds < 1) throw InvalidConfigError("SweepConfig: seeds must be >= 1");
    if (K < 0) throw InvalidConfigError("SweepConfig: K must be >= 0");
    if (x.size() != d_in || y_star.size() != d_out)
        throw InvalidConfigError("SweepConfig: datapoint dimensions mismatch");
    if (target == CompareTarget::exact_linear_limit &&
        act.kind != ActivationKind::linear)
        throw InvalidConfigError(
            "SweepConfig: exact_linear_limit target requires linear activation");
}

namespace {

std::string sweep_run_id(const SweepConfig& cfg, const SweepShape& shape,
                         std::uint64_t seed) {
    const std::string text = to_string(cfg.target) + "/L" + std::to_string(shape.L) +
                             "M" + std::to_string(shape.M) + "D" +
                             std::to_string(shape.D) + "/s" + std::to_string(seed) +
                             "/K" + std::to_string(cfg.K);
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(text)));
    return buf;
}

// Limit states reconstructed from the exact linear covariance solver at the
// model's embedding rows.
LimitHidden exact_limit_hidden(const CovarianceState& state, const TrainRecord& record,
                               int K) {
    LimitHidden lh;
    lh.coupling_key = record.coupling_key;
    lh.hidden.resize(static_cast<std::size_t>(K) + 1);
    lh.y.resize(static_cast<std::size_t>(K) + 1);
    const int L = record.shape.L;
    for (int k = 0; k <= K; ++k) {
        auto& per_layer = lh.hidden[static_cast<std::size_t>(k)];
        per_layer.resize(record.record_layers.size());
        for (std::size_t li = 0; li < record.record_layers.size(); ++li) {
            const double s = static_cast<double>(record.record_layers[li]) / L;
            per_layer[li] = {coupled_limit_hidden(state, record.w_in, record.w_out, k, s)};
        }
        lh.y[static_cast<std::size_t>(k)] = {state.outputs()[static_cast<std::size_t>(k)]};
    }
    return lh;
}

LimitHidden proxy_limit_hidden(const TrainRecord& proxy, const TrainRecord& record,
                               int K) {
    if (proxy.shape.D < record.shape.D)
        throw CouplingError("reference proxy: proxy D must dominate the model's D");
    if (proxy.shape.L % record.shape.L != 0)
        throw CouplingError("reference proxy: proxy depth must be a multiple of model depth");
    if (proxy.w_in.topRows(record.shape.D) != record.w_in ||
        proxy.w_out.topRows(record.shape.D) != record.w_out)
        throw CouplingError("reference proxy: embedding rows differ; runs are uncoupled");
    LimitHidden lh;
    lh.coupling_key = proxy.coupling_key;
    const int stride = proxy.shape.L / record.shape.L;
    lh.hidden.resize(static_cast<std::size_t>(K) + 1);
    lh.y.resize(static_cast<std::size_t>(K) + 1);
    for (int k = 0; k <= K; ++k) {
        auto& per_layer = lh.hidden[static_cast<std::size_t>(k)];
        per_layer.resize(record.record_layers.size());
        for (std::size_t li = 0; li < record.record_layers.size(); ++li) {
            const int proxy_layer = record.record_layers[li] * stride;
            // find proxy_layer in the proxy's recorded layers
            const auto it = std::find(proxy.record_layers.begin(),
                                      proxy.record_layers.end(), proxy_layer);
            if (it == proxy.record_layers.end())
                throw InvalidInputError("reference proxy: layer " +
                                        std::to_string(proxy_layer) + " not recorded");
            const auto pli =
                static_cast<std::size_t>(it - proxy.record_layers.begin());
            const auto& full = proxy.steps[static_cast<std::size_t>(k)].hidden[pli];
            std::vector<Eigen::VectorXd> truncated;
            truncated.reserve(full.size());
            for (const auto& v : full) truncated.push_back(v.head(record.shape.D));
            per_layer[li] = std::move(truncated);
        }
        lh.y[static_cast<std::size_t>(k)] = proxy.steps[static_cast<std::size_t>(k)].y;
    }
    return lh;
}

LimitHidden dmft_limit_hidden(const ParticleEnsemble& ens, const SGrid& grid,
                              const std::vector<Eigen::VectorXd>& y_list,
                              const TrainRecord& record, int K) {
    if (ens.particles() < record.shape.D)
        throw CouplingError("dmft target: ensemble must carry at least D particles");
    if (ens.w_in.topRows(record.shape.D) != record.w_in ||
        ens.w_out.topRows(record.shape.D) != record.w_out)
        throw CouplingError("dmft target: embedding rows differ; runs are uncoupled");
    LimitHidden lh;
    lh.coupling_key = record.coupling_key;
    lh.hidden.resize(static_cast<std::size_t>(K) + 1);
    lh.y.resize(static_cast<std::size_t>(K) + 1);
    const int D = record.shape.D;
    const int L = record.shape.L;
    for (int k = 0; k <= K; ++k) {
        auto& per_layer = lh.hidden[static_cast<std::size_t>(k)];
        per_layer.resize(record.record_layers.size());
        for (std::size_t li = 0; li < record.record_layers.size(); ++li) {
            const double s = static_cast<double>(record.record_layers[li]) / L;
            const double u = s * grid.n_steps;
            const int j0 = std::min(static_cast<int>(std::floor(u + 1e-9)),
                                    grid.n_steps - 1);
            const double t = std::clamp(u - j0, 0.0, 1.0);
            Eigen::VectorXd v(D);
            const auto& Hk = ens.H[static_cast<std::size_t>(k)];
            for (int d = 0; d < D; ++d)
                v[d] = (1.0 - t) * Hk(d, j0) + t * Hk(d, j0 + 1);
            per_layer[li] = {std::move(v)};
        }
        lh.y[static_cast<std::size_t>(k)] = {y_list[static_cast<std::size_t>(k)]};
    }
    return lh;
}

}  // namespace

std::vector<ErrorRecord> run_sweep(const SweepConfig& cfg) {
    cfg.validate();
    Dataset data;
    data.x = {cfg.x};
    data.y_star = {cfg.y_star};

    // Shared comparison targets.
    std::optional<CovarianceState> linear_state;
    if (cfg.target == CompareTarget::exact_linear_limit) {
        LinearLimitConfig lcfg;
        lcfg.a = cfg.act.a;
        lcfg.hp = cfg.hp;
        lcfg.x = cfg.x;
        lcfg.y_star = cfg.y_star;
        lcfg.K = cfg.K + 1;
        lcfg.grid = cfg.grid;
        linear_state = linear_limit_run(lcfg);
    }

    struct SeedTarget {
        std::optional<TrainRecord> proxy;
        std::optional<DmftResult> dmft;
    };
    std::vector<SeedTarget> seed_targets(static_cast<std::size_t>(cfg.seeds));
    int max_d = 0;
    for (const auto& sh : cfg.shapes) max_d = std::max(max_d, sh.D);
    for (int si = 0; si < cfg.seeds; ++si) {
        const Rng rng(cfg.base_seed + static_cast<std::uint64_t>(si), "run");
        if (cfg.target == CompareTarget::reference_proxy) {
            ShapeConfig big = cfg.proxy_shape;
            big.d_in = cfg.d_in;
            big.d_out = cfg.d_out;
            seed_targets[static_cast<std::size_t>(si)].proxy = reference_proxy(
                big, cfg.hp, cfg.act, data, cfg.K, {big.L}, rng);
        } else if (cfg.target == CompareTarget::dmft) {
            DmftConfig dcfg;
            dcfg.P = std::max(cfg.dmft_particles, max_d);
            dcfg.n_mc = cfg.dmft_n_mc;
            dcfg.picard_tol = cfg.picard_tol;
            dcfg.picard_max_iters = cfg.picard_max_iters;
            dcfg.act = cfg.act;
            dcfg.hp = cfg.hp;
            dcfg.x = cfg.x;
            dcfg.y_star = cfg.y_star;
            dcfg.K = cfg.K + 1;
            dcfg.grid = cfg.grid;
            dcfg.threads = cfg.threads;
            seed_targets[static_cast<std::size_t>(si)].dmft = dmft_run(dcfg, rng);
        }
    }

    const int total = static_cast<int>(cfg.shapes.size()) * cfg.seeds;
    std::vector<std::vector<ErrorRecord>> per_run(static_cast<std::size_t>(total));
    parallel_for(total, cfg.threads, [&](int lo, int hi) {
        for (int idx = lo; idx < hi; ++idx) {
            const auto& shape_spec =
                cfg.shapes[static_cast<std::size_t>(idx) / cfg.seeds];
            const int si = idx % cfg.seeds;
            const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(si);
            ShapeConfig shape{shape_spec.L, shape_spec.M, shape_spec.D, cfg.d_in,
                              cfg.d_out};
            ErrorRecord base;
            base.run_id = sweep_run_id(cfg, shape_spec, seed);
            base.L = shape.L;
            base.M = shape.M;
            base.D = shape.D;
            base.P = shape.param_count();
            base.seed = seed;
            auto& rows = per_run[static_cast<std::size_t>(idx)];
            const auto t0 = std::chrono::steady_clock::now();
            try {
                const Rng rng(seed, "run");
                const TrainRecord record =
                    train(shape, cfg.hp, cfg.act, data, cfg.K, {shape.L}, rng);
                std::optional<LimitHidden> lh;
                std::vector<std::vector<Eigen::VectorXd>> y_limit(
                    static_cast<std::size_t>(cfg.K) + 1);
                if (cfg.target == CompareTarget::exact_linear_limit) {
                    lh = exact_limit_hidden(*linear_state, record, cfg.K);
                } else if (cfg.target == CompareTarget::reference_proxy) {
                    lh = proxy_limit_hidden(
                        *seed_targets[static_cast<std::size_t>(si)].proxy, record,
                        cfg.K);
                } else {
                    const auto& dm = *seed_targets[static_cast<std::size_t>(si)].dmft;
                    lh = dmft_limit_hidden(dm.ensemble, cfg.grid, dm.y_list, record,
                                           cfg.K);
                }
                for (int k = 0; k <= cfg.K; ++k)
                    y_limit[static_cast<std::size_t>(k)] =
                        lh->y[static_cast<std::size_t>(k)];

                const auto t1 = std::chrono::steady_clock::now();
                const double wall =
                    cfg.record_timings
                        ? std::chrono::duration<double, std::milli>(t1 - t0).count()
                        : 0.0;
                for (int k = 0; k <= cfg.K; ++k) {
                    ErrorRecord row = base;
                    row.k = k;
                    row.delta_h = cfg.coupling == CouplingMode::coupled_embeddings
                                      ? delta_h(record, *lh, k)
                                      : std::numeric_limits<double>::quiet_NaN();
                    row.delta_y =
                        delta_y(record, y_limit[static_cast<std::size_t>(k)], k);
                    row.wall_ms = wall;
                    rows.push_back(std::move(row));
                }
            } catch (const std::exception& e) {
                ErrorRecord row = base;
                row.failed = true;
                row.error = e.what();
                row.delta_h = std::numeric_limits<double>::quiet_NaN();
                row.delta_y = std::numeric_limits<double>::quiet_NaN();
                rows.push_back(std::move(row));
            }
        }
    });

    std::vector<ErrorRecord> out;
    for (auto& rows : per_run)
        for (auto& r : rows) out.push_back(std::move(r));
    return out;
}

}  // namespace rlim
