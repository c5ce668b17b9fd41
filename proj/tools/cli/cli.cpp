#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "rlim/bench.hpp"
#include "rlim/dmft.hpp"
#include "rlim/errors.hpp"
#include "rlim/linear_limit.hpp"
#include "rlim/resnet.hpp"

namespace rlim::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config schema: unknown keys are rejected with their full dotted path.
// ---------------------------------------------------------------------------

const std::map<std::string, std::set<std::string>> kSchema = {
    {"", {"seed", "threads", "output_dir", "record_timings", "shape", "hp", "activation",
          "data", "train", "grid", "limit", "dmft", "sweep", "clt", "fit"}},
    {"shape", {"L", "M", "D", "d_in", "d_out"}},
    {"hp", {"eta_u", "eta_v", "sigma_u", "sigma_v", "sigma_in", "sigma_out", "dist",
            "clip_bound"}},
    {"activation", {"kind", "a"}},
    {"data", {"x", "y_star", "random"}},
    {"train", {"K", "record_layers", "compare", "dump_hidden"}},
    {"grid", {"n_steps"}},
    {"limit", {"K", "interp"}},
    {"dmft", {"P", "n_mc", "picard_tol", "picard_max_iters", "K"}},
    {"sweep", {"shapes", "seeds", "K", "target", "coupling", "proxy_shape",
               "fit_models"}},
    {"clt", {"f", "n_values", "dim", "n_directions", "two_point_p", "sigma2",
             "mc_draws", "ydist"}},
    {"fit", {"input", "models", "k"}},
};

void check_schema(const json& node, const std::string& prefix) {
    if (!node.is_object()) return;
    const auto it = kSchema.find(prefix);
    if (it == kSchema.end()) return;
    for (const auto& [key, value] : node.items()) {
        if (!it->second.count(key))
            throw InvalidConfigError("unknown config key: '" +
                                     (prefix.empty() ? key : prefix + "." + key) + "'");
        if (value.is_object() && kSchema.count(key)) check_schema(value, key);
    }
}

const json& require(const json& node, const std::string& section,
                    const std::string& key) {
    if (!node.contains(section))
        throw InvalidConfigError("missing required config section: '" + section + "'");
    if (!node[section].contains(key))
        throw InvalidConfigError("missing required config key: '" + section + "." + key +
                                 "'");
    return node[section][key];
}

// ---------------------------------------------------------------------------
// Section readers
// ---------------------------------------------------------------------------

ShapeConfig read_shape(const json& cfg) {
    ShapeConfig shape;
    shape.L = require(cfg, "shape", "L").get<int>();
    shape.M = require(cfg, "shape", "M").get<int>();
    shape.D = require(cfg, "shape", "D").get<int>();
    shape.d_in = cfg["shape"].value("d_in", 3);
    shape.d_out = cfg["shape"].value("d_out", 3);
    shape.validate();
    return shape;
}

HPConfig read_hp(const json& cfg) {
    HPConfig hp;
    if (cfg.contains("hp")) {
        const json& h = cfg["hp"];
        hp.eta_u = h.value("eta_u", 1.0);
        hp.eta_v = h.value("eta_v", 1.0);
        hp.sigma_u = h.value("sigma_u", 1.0);
        hp.sigma_v = h.value("sigma_v", 1.0);
        hp.sigma_in = h.value("sigma_in", 1.0);
        hp.sigma_out = h.value("sigma_out", 1.0);
        hp.dist = dist_family_from_string(h.value("dist", std::string("gaussian")));
        if (h.contains("clip_bound") && !h["clip_bound"].is_null())
            hp.clip_bound = h["clip_bound"].get<double>();
    }
    hp.validate();
    return hp;
}

ActivationSpec read_activation(const json& cfg) {
    std::string kind = "tanh";
    double a = 1.0;
    if (cfg.contains("activation")) {
        kind = cfg["activation"].value("kind", std::string("tanh"));
        a = cfg["activation"].value("a", 1.0);
    }
    return activation_from_name(kind, a);
}

struct DataPoint {
    Eigen::VectorXd x;
    Eigen::VectorXd y_star;
};

DataPoint read_data(const json& cfg, int d_in, int d_out, std::uint64_t seed) {
    DataPoint dp;
    if (cfg.contains("data") && cfg["data"].value("random", false)) {
        Rng rng(seed, "data");
        dp.x = sample_centered(rng, {DistFamily::gaussian, 1.0}, d_in);
        dp.y_star = sample_centered(rng, {DistFamily::gaussian, 1.0}, d_out);
        return dp;
    }
    const json& jx = require(cfg, "data", "x");
    const json& jy = require(cfg, "data", "y_star");
    dp.x.resize(static_cast<Eigen::Index>(jx.size()));
    dp.y_star.resize(static_cast<Eigen::Index>(jy.size()));
    for (std::size_t i = 0; i < jx.size(); ++i)
        dp.x[static_cast<Eigen::Index>(i)] = jx[i].get<double>();
    for (std::size_t i = 0; i < jy.size(); ++i)
        dp.y_star[static_cast<Eigen::Index>(i)] = jy[i].get<double>();
    if (dp.x.size() != d_in || dp.y_star.size() != d_out)
        throw InvalidConfigError("data: x / y_star dimensions disagree with shape");
    return dp;
}

SGrid read_grid(const json& cfg) {
    return SGrid(cfg.contains("grid") ? cfg["grid"].value("n_steps", 200) : 200);
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

struct RunContext {
    json cfg;
    std::uint64_t seed = 0;
    int threads = 0;
    bool record_timings = false;
    fs::path out_dir;
};

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInputError("cannot write " + path.string());
    out << content;
}

RunContext make_context(const std::string& subcommand, json cfg) {
    RunContext ctx;
    ctx.seed = cfg.value("seed", 0ULL);
    if (const char* env = std::getenv("RESNET_LIMITS_SEED")) {
        ctx.seed = std::strtoull(env, nullptr, 10);
        cfg["seed"] = ctx.seed;
    }
    ctx.threads = cfg.value("threads", 0);
    ctx.record_timings = cfg.value("record_timings", false);
    ctx.cfg = cfg;

    char run_id[32];
    std::snprintf(run_id, sizeof(run_id), "%016llx",
                  static_cast<unsigned long long>(
                      fnv1a64(subcommand + "|" + cfg.dump() + "|" +
                              std::to_string(ctx.seed))));
    const fs::path base = cfg.value("output_dir", std::string("out"));
    ctx.out_dir = base / (subcommand + "-" + run_id);
    fs::create_directories(ctx.out_dir);
    write_file(ctx.out_dir / "config.json", cfg.dump(2) + "\n");
    return ctx;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_train(const RunContext& ctx) {
    const json& cfg = ctx.cfg;
    const ShapeConfig shape = read_shape(cfg);
    const HPConfig hp = read_hp(cfg);
    const ActivationSpec act = read_activation(cfg);
    const DataPoint dp = read_data(cfg, shape.d_in, shape.d_out, ctx.seed);
    const int K = cfg.contains("train") ? cfg["train"].value("K", 5) : 5;
    std::vector<int> record_layers{shape.L};
    if (cfg.contains("train") && cfg["train"].contains("record_layers"))
        record_layers = cfg["train"]["record_layers"].get<std::vector<int>>();

    Dataset data;
    data.x = {dp.x};
    data.y_star = {dp.y_star};
    const Rng rng(ctx.seed, "run");
    const TrainRecord record = train(shape, hp, act, data, K, record_layers, rng);

    // Per-step summary.
    std::string csv = "k,loss";
    for (int c = 0; c < shape.d_out; ++c) csv += ",y" + std::to_string(c);
    csv += "\n";
    for (std::size_t k = 0; k < record.steps.size(); ++k) {
        csv += std::to_string(k) + "," + format_double(record.steps[k].loss);
        for (int c = 0; c < shape.d_out; ++c)
            csv += "," + format_double(record.steps[k].y[0][c]);
        csv += "\n";
    }
    write_file(ctx.out_dir / "train_record.csv", csv);

    if (cfg.contains("train") && cfg["train"].value("dump_hidden", false)) {
        json dump;
        dump["record_layers"] = record.record_layers;
        json steps = json::array();
        for (const auto& step : record.steps) {
            json layers = json::array();
            for (const auto& per_layer : step.hidden)
                layers.push_back(
                    std::vector<double>(per_layer[0].begin(), per_layer[0].end()));
            steps.push_back(std::move(layers));
        }
        dump["hidden"] = std::move(steps);
        write_file(ctx.out_dir / "hidden.json", dump.dump() + "\n");
    }

    const std::string compare =
        cfg.contains("train") ? cfg["train"].value("compare", std::string("none"))
                              : "none";
    if (compare != "none") {
        SweepConfig sw;
        sw.shapes = {{shape.L, shape.M, shape.D}};
        sw.seeds = 1;
        sw.base_seed = ctx.seed;
        sw.K = K;
        sw.d_in = shape.d_in;
        sw.d_out = shape.d_out;
        sw.act = act;
        sw.hp = hp;
        sw.x = dp.x;
        sw.y_star = dp.y_star;
        sw.target = compare_target_from_string(compare);
        sw.coupling = CouplingMode::coupled_embeddings;
        sw.grid = read_grid(cfg);
        sw.threads = ctx.threads;
        sw.record_timings = ctx.record_timings;
        if (cfg.contains("sweep") && cfg["sweep"].contains("proxy_shape")) {
            const auto ps = cfg["sweep"]["proxy_shape"].get<std::vector<int>>();
            sw.proxy_shape = ShapeConfig{ps.at(0), ps.at(1), ps.at(2), shape.d_in,
                                         shape.d_out};
        }
        const auto records = run_sweep(sw);
        emit_errors_csv(records, (ctx.out_dir / "errors.csv").string());
        for (const auto& r : records)
            if (r.failed) throw std::runtime_error("comparison run failed: " + r.error);
    }
    return 0;
}

int cmd_limit_linear(const RunContext& ctx) {
    const json& cfg = ctx.cfg;
    const HPConfig hp = read_hp(cfg);
    const ActivationSpec act = read_activation(cfg);
    if (act.kind != ActivationKind::linear)
        throw InvalidConfigError("limit-linear requires activation.kind == 'linear'");
    int d_in = 3, d_out = 3;
    if (cfg.contains("shape")) {
        d_in = cfg["shape"].value("d_in", 3);
        d_out = cfg["shape"].value("d_out", 3);
    }
    const DataPoint dp = read_data(cfg, d_in, d_out, ctx.seed);
    LinearLimitConfig lcfg;
    lcfg.a = act.a;
    lcfg.hp = hp;
    lcfg.x = dp.x;
    lcfg.y_star = dp.y_star;
    lcfg.K = cfg.contains("limit") ? cfg["limit"].value("K", 6) : 6;
    lcfg.grid = read_grid(cfg);
    if (cfg.contains("limit") &&
        cfg["limit"].value("interp", std::string("hermite")) == "linear")
        lcfg.interp = CurveInterp::linear;
    const CovarianceState state = linear_limit_run(lcfg);
    write_file(ctx.out_dir / "limit_linear.json", state.to_json() + "\n");
    return 0;
}

int cmd_limit_dmft(const RunContext& ctx) {
    const json& cfg = ctx.cfg;
    DmftConfig dcfg;
    dcfg.hp = read_hp(cfg);
    dcfg.act = read_activation(cfg);
    int d_in = 3, d_out = 3;
    if (cfg.contains("shape")) {
        d_in = cfg["shape"].value("d_in", 3);
        d_out = cfg["shape"].value("d_out", 3);
    }
    const DataPoint dp = read_data(cfg, d_in, d_out, ctx.seed);
    dcfg.x = dp.x;
    dcfg.y_star = dp.y_star;
    if (cfg.contains("dmft")) {
        const json& dm = cfg["dmft"];
        dcfg.P = dm.value("P", 2000);
        dcfg.n_mc = dm.value("n_mc", 2000);
        dcfg.picard_tol = dm.value("picard_tol", 1e-4);
        dcfg.picard_max_iters = dm.value("picard_max_iters", 50);
        dcfg.K = dm.value("K", 4);
    }
    dcfg.grid = read_grid(cfg);
    dcfg.threads = ctx.threads;
    const Rng rng(ctx.seed, "run");
    const DmftResult result = dmft_run(dcfg, rng);
    write_file(ctx.out_dir / "limit_dmft.json", dmft_summary_json(result, dcfg) + "\n");
    return 0;
}

int cmd_sweep(const RunContext& ctx) {
    const json& cfg = ctx.cfg;
    SweepConfig sw;
    const json& sweep = cfg.contains("sweep") ? cfg["sweep"] : json::object();
    if (!sweep.contains("shapes"))
        throw InvalidConfigError("missing required config key: 'sweep.shapes'");
    for (const auto& s : sweep["shapes"]) {
        const auto v = s.get<std::vector<int>>();
        sw.shapes.push_back({v.at(0), v.at(1), v.at(2)});
    }
    sw.seeds = sweep.value("seeds", 1);
    sw.base_seed = ctx.seed;
    sw.K = sweep.value("K", 5);
    sw.hp = read_hp(cfg);
    sw.act = read_activation(cfg);
    int d_in = 3, d_out = 3;
    if (cfg.contains("shape")) {
        d_in = cfg["shape"].value("d_in", 3);
        d_out = cfg["shape"].value("d_out", 3);
    }
    sw.d_in = d_in;
    sw.d_out = d_out;
    const DataPoint dp = read_data(cfg, d_in, d_out, ctx.seed);
    sw.x = dp.x;
    sw.y_star = dp.y_star;
    sw.target = compare_target_from_string(
        sweep.value("target", std::string("exact_linear_limit")));
    sw.coupling = sweep.value("coupling", std::string("coupled")) == "uncoupled"
                      ? CouplingMode::uncoupled
                      : CouplingMode::coupled_embeddings;
    sw.grid = read_grid(cfg);
    if (sweep.contains("proxy_shape")) {
        const auto ps = sweep["proxy_shape"].get<std::vector<int>>();
        sw.proxy_shape = ShapeConfig{ps.at(0), ps.at(1), ps.at(2), d_in, d_out};
    }
    if (cfg.contains("dmft")) {
        sw.dmft_particles = cfg["dmft"].value("P", 2000);
        sw.dmft_n_mc = cfg["dmft"].value("n_mc", 2000);
        sw.picard_tol = cfg["dmft"].value("picard_tol", 1e-4);
        sw.picard_max_iters = cfg["dmft"].value("picard_max_iters", 50);
    }
    sw.threads = ctx.threads;
    sw.record_timings = ctx.record_timings;

    const auto records = run_sweep(sw);
    emit_errors_csv(records, (ctx.out_dir / "errors.csv").string());

    json sidecar;
    sidecar["config"] = cfg;
    json seeds = json::array();
    for (int i = 0; i < sw.seeds; ++i) seeds.push_back(sw.base_seed + i);
    sidecar["seeds"] = seeds;
    write_file(ctx.out_dir / "sweep_meta.json", sidecar.dump(2) + "\n");

    json failures = json::array();
    for (const auto& r : records)
        if (r.failed) failures.push_back({{"run_id", r.run_id}, {"error", r.error}});

    std::vector<std::string> fit_models{"h_rate", "y_rate"};
    if (sweep.contains("fit_models"))
        fit_models = sweep["fit_models"].get<std::vector<std::string>>();
    std::vector<RateFit> fits;
    for (const auto& name : fit_models) {
        const RateModel model = name == "y_rate" ? RateModel::y_rate : RateModel::h_rate;
        try {
            fits.push_back(fit_rate(records, model));
        } catch (const std::exception& e) {
            failures.push_back({{"run_id", "fit:" + name}, {"error", e.what()}});
        }
    }
    emit_fits_csv(fits, (ctx.out_dir / "fits.csv").string());

    if (!failures.empty()) {
        write_file(ctx.out_dir / "failures.json", failures.dump(2) + "\n");
        return 1;
    }
    return 0;
}

int cmd_clt(const RunContext& ctx) {
    const json& cfg = ctx.cfg;
    CltProbe probe;
    const json& c = cfg.contains("clt") ? cfg["clt"] : json::object();
    probe.f = clt_function_from_string(c.value("f", std::string("cubic_sat")));
    if (c.contains("n_values")) probe.n_values = c["n_values"].get<std::vector<long long>>();
    const int dim = c.value("dim", 3);
    const int n_dirs = c.value("n_directions", 5);
    probe.two_point_p = c.value("two_point_p", 0.05);
    probe.sigma2 = c.value("sigma2", 1.0);
    probe.mc_draws = c.value("mc_draws", 1000000LL);
    const std::string ydist = c.value("ydist", std::string("two_point"));
    probe.ydist = ydist == "gaussian"   ? CltYDist::gaussian
                  : ydist == "uniform"  ? CltYDist::uniform
                                        : CltYDist::two_point;
    Rng dir_rng(ctx.seed, "clt.directions");
    for (int j = 0; j < n_dirs; ++j)
        probe.directions.push_back(
            sample_centered(dir_rng, {DistFamily::gaussian, 1.0}, dim));

    const Rng rng(ctx.seed, "clt");
    const auto gaps = clt_empirical_gap(probe, rng);
    emit_clt_csv(gaps, (ctx.out_dir / "clt.csv").string());
    return 0;
}

int cmd_fit(const RunContext& ctx) {
    const json& cfg = ctx.cfg;
    if (!cfg.contains("fit") || !cfg["fit"].contains("input"))
        throw InvalidConfigError("missing required config key: 'fit.input'");
    const auto records = parse_errors_csv(cfg["fit"]["input"].get<std::string>());
    std::vector<std::string> names{"h_rate", "y_rate"};
    if (cfg["fit"].contains("models"))
        names = cfg["fit"]["models"].get<std::vector<std::string>>();
    const int k = cfg["fit"].value("k", -1);
    std::vector<RateFit> fits;
    for (const auto& name : names)
        fits.push_back(fit_rate(
            records, name == "y_rate" ? RateModel::y_rate : RateModel::h_rate, k));
    emit_fits_csv(fits, (ctx.out_dir / "fits.csv").string());
    return 0;
}

// ---------------------------------------------------------------------------
// Argument parsing: subcommand, --config FILE, --key.path=value overrides.
// ---------------------------------------------------------------------------

json parse_override_value(const std::string& text) {
    const json parsed = json::parse(text, nullptr, false);
    if (!parsed.is_discarded()) return parsed;
    return json(text);  // bare strings
}

void apply_override(json& cfg, const std::string& dotted, const json& value) {
    json* node = &cfg;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', start);
        const std::string key = dotted.substr(start, dot - start);
        if (key.empty()) throw InvalidConfigError("bad override path: '" + dotted + "'");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

void usage() {
    std::cerr << "usage: rlim <train|limit-linear|limit-dmft|sweep|clt|fit>"
                 " --config FILE [--key.path=value ...]\n";
}

}  // namespace

int run(const std::vector<std::string>& args) {
    try {
        if (args.empty()) {
            usage();
            return 2;
        }
        const std::string subcommand = args[0];
        std::string config_path;
        std::vector<std::pair<std::string, json>> overrides;
        for (std::size_t i = 1; i < args.size(); ++i) {
            const std::string& arg = args[i];
            if (arg == "--config") {
                if (i + 1 >= args.size())
                    throw InvalidConfigError("--config expects a file path");
                config_path = args[++i];
            } else if (arg.rfind("--", 0) == 0) {
                const std::size_t eq = arg.find('=');
                if (eq == std::string::npos)
                    throw InvalidConfigError("override must be --key.path=value: " + arg);
                overrides.emplace_back(arg.substr(2, eq - 2),
                                       parse_override_value(arg.substr(eq + 1)));
            } else {
                throw InvalidConfigError("unexpected argument: " + arg);
            }
        }

        json cfg = json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw InvalidConfigError("cannot open config: " + config_path);
            try {
                in >> cfg;
            } catch (const json::exception& e) {
                throw InvalidConfigError(std::string("config parse error: ") + e.what());
            }
        }
        for (const auto& [path, value] : overrides) apply_override(cfg, path, value);
        check_schema(cfg, "");

        const RunContext ctx = make_context(subcommand, cfg);
        int rc = 0;
        try {
            if (subcommand == "train") rc = cmd_train(ctx);
            else if (subcommand == "limit-linear") rc = cmd_limit_linear(ctx);
            else if (subcommand == "limit-dmft") rc = cmd_limit_dmft(ctx);
            else if (subcommand == "sweep") rc = cmd_sweep(ctx);
            else if (subcommand == "clt") rc = cmd_clt(ctx);
            else if (subcommand == "fit") rc = cmd_fit(ctx);
            else {
                usage();
                return 2;
            }
        } catch (const std::exception& e) {
            json failures = json::array();
            failures.push_back({{"run_id", subcommand}, {"error", e.what()}});
            write_file(ctx.out_dir / "failures.json", failures.dump(2) + "\n");
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
        std::cout << ctx.out_dir.string() << "\n";
        return rc;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace rlim::cli
