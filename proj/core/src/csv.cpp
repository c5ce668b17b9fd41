#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rlim/bench.hpp"
#include "rlim/errors.hpp"

namespace rlim {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInputError("cannot open for writing: " + path);
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_double(const std::string& s) {
    if (s == "nan") return std::nan("");
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{}) throw InvalidInputError("bad numeric field: '" + s + "'");
    return v;
}

}  // namespace

void emit_errors_csv(const std::vector<ErrorRecord>& records, const std::string& path) {
    auto out = open_out(path);
    out << "run_id,L,M,D,P,seed,k,delta_h,delta_y,wall_ms\n";
    for (const auto& r : records) {
        if (r.failed) continue;  // failures go to the manifest, not the data file
        out << r.run_id << ',' << r.L << ',' << r.M << ',' << r.D << ',' << r.P << ','
            << r.seed << ',' << r.k << ',' << format_double(r.delta_h) << ','
            << format_double(r.delta_y) << ',' << format_double(r.wall_ms) << '\n';
    }
}

void emit_fits_csv(const std::vector<RateFit>& fits, const std::string& path) {
    auto out = open_out(path);
    out << "model,alpha,beta,r2,n_points\n";
    for (const auto& f : fits)
        out << (f.model == RateModel::h_rate ? "h_rate" : "y_rate") << ','
            << format_double(f.alpha) << ',' << format_double(f.beta) << ','
            << format_double(f.r2) << ',' << f.n_points << '\n';
}

void emit_hist_csv(const std::vector<std::tuple<int, int, HistogramKs>>& hists,
                   const std::string& path) {
    auto out = open_out(path);
    out << "layer,k,bin_lo,bin_hi,count,pdf_limit\n";
    for (const auto& [layer, k, hist] : hists)
        for (const auto& bin : hist.bins)
            out << layer << ',' << k << ',' << format_double(bin.lo) << ','
                << format_double(bin.hi) << ',' << bin.count << ','
                << format_double(bin.pdf_limit) << '\n';
}

void emit_clt_csv(const std::vector<CltGap>& gaps, const std::string& path) {
    auto out = open_out(path);
    out << "f_id,n,gap,stderr\n";
    for (const auto& g : gaps)
        out << g.f_id << ',' << g.n << ',' << format_double(g.gap) << ','
            << format_double(g.stderr_) << '\n';
}

std::vector<ErrorRecord> parse_errors_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInputError("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line))
        throw InvalidInputError("empty errors csv: " + path);
    if (line != "run_id,L,M,D,P,seed,k,delta_h,delta_y,wall_ms")
        throw InvalidInputError("unexpected errors csv header: " + line);
    std::vector<ErrorRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 10)
            throw InvalidInputError("bad errors csv row: " + line);
        ErrorRecord r;
        r.run_id = fields[0];
        r.L = static_cast<int>(parse_double(fields[1]));
        r.M = static_cast<int>(parse_double(fields[2]));
        r.D = static_cast<int>(parse_double(fields[3]));
        r.P = static_cast<long long>(parse_double(fields[4]));
        r.seed = static_cast<std::uint64_t>(parse_double(fields[5]));
        r.k = static_cast<int>(parse_double(fields[6]));
        r.delta_h = parse_double(fields[7]);
        r.delta_y = parse_double(fields[8]);
        r.wall_ms = parse_double(fields[9]);
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace rlim
