#include "surgvae/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "surgvae/csvio.hpp"
#include "surgvae/errors.hpp"
#include "surgvae/rng.hpp"

namespace surgvae {

namespace {

constexpr double kSignalScale = 2.5;       // std of the outcome logits
constexpr double kGroupOffsetScale = 2.0;  // std of per-group latent mean offsets

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

void SynthConfig::validate() const {
    if (G == 0 || F == 0 || C == 0 || d_u == 0 || d_v == 0) {
        throw UsageError("synth config: all dimensions must be positive");
    }
    if (rows_per_group.size() != G) {
        throw UsageError("synth config: rows_per_group must list one count per group");
    }
    for (std::size_t r : rows_per_group)
        if (r == 0) throw UsageError("synth config: zero rows in a group");
    if (positive_rates.size() != C) {
        throw UsageError("synth config: positive_rates must list one rate per outcome");
    }
    for (double p : positive_rates)
        if (!(p > 0.0 && p < 1.0)) throw UsageError("synth config: rates must lie in (0,1)");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) {
        throw UsageError("synth config: missing_rate must lie in [0,1)");
    }
    if (noise < 0.0) throw UsageError("synth config: noise must be nonnegative");
}

SynthResult synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t du = cfg.d_u, dv = cfg.d_v, F = cfg.F, C = cfg.C, G = cfg.G;
    std::size_t n = 0;
    for (std::size_t r : cfg.rows_per_group) n += r;

    // Fixed mixing structure, drawn once from its own stream.
    Rng structure(derive_seed(cfg.seed, 0x73747275 /* "stru" */));
    std::vector<double> A(F * du);
    for (auto& v : A) v = structure.normal() / std::sqrt(static_cast<double>(du));
    std::vector<std::vector<double>> B(G, std::vector<double>(F * dv));
    for (auto& Bg : B)
        for (auto& v : Bg) v = structure.normal() / std::sqrt(static_cast<double>(dv));
    std::vector<std::vector<double>> group_mean(G, std::vector<double>(dv));
    for (auto& m : group_mean)
        for (auto& v : m) v = kGroupOffsetScale * structure.normal();
    std::vector<std::vector<double>> beta(C, std::vector<double>(du));
    for (auto& b : beta)
        for (auto& v : b) v = kSignalScale * structure.normal() / std::sqrt(static_cast<double>(du));
    std::vector<std::vector<double>> gamma(C, std::vector<double>(dv));
    for (auto& gm : gamma)
        for (auto& v : gm) v = kSignalScale * structure.normal() / std::sqrt(static_cast<double>(dv));

    // Latents and features, row-major in group-major order.
    Rng draw(derive_seed(cfg.seed, 0x64726177 /* "draw" */));
    Dataset ds;
    ds.n = n;
    ds.F = F;
    ds.C = C;
    ds.case_ids.reserve(n);
    ds.groups.reserve(n);
    ds.features.assign(n * F, 0.0);
    ds.features_mask.assign(n * F, 1);
    ds.labels.assign(n * C, 0.0);
    ds.labels_mask.assign(n * C, 1);

    std::vector<double> logits(n * C, 0.0);
    std::size_t row = 0;
    for (std::size_t g = 0; g < G; ++g) {
        for (std::size_t i = 0; i < cfg.rows_per_group[g]; ++i, ++row) {
            char buf[24];
            std::snprintf(buf, sizeof(buf), "case_%06zu", row + 1);
            ds.case_ids.emplace_back(buf);
            ds.groups.push_back(static_cast<int>(g));

            std::vector<double> u(du), v(dv);
            for (auto& x : u) x = draw.normal();
            for (std::size_t j = 0; j < dv; ++j) v[j] = group_mean[g][j] + draw.normal();

            double* x_row = ds.features.data() + row * F;
            const std::vector<double>& Bg = B[g];
            for (std::size_t f = 0; f < F; ++f) {
                double acc = 0.0;
                for (std::size_t j = 0; j < du; ++j) acc += A[f * du + j] * u[j];
                for (std::size_t j = 0; j < dv; ++j) acc += Bg[f * dv + j] * v[j];
                x_row[f] = acc + cfg.noise * draw.normal();
            }
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < du; ++j) acc += beta[c][j] * u[j];
                for (std::size_t j = 0; j < dv; ++j) acc += gamma[c][j] * v[j];
                logits[row * C + c] = acc;
            }
        }
    }

    // Calibrate intercepts on the target group (group 0) so the mean
    // generating probability matches the configured rate.
    const std::size_t target_rows = cfg.rows_per_group[0];
    std::vector<double> intercept(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        double lo = -40.0, hi = 40.0;
        double achieved = 0.0;
        for (int step = 0; step < 60; ++step) {
            const double mid = 0.5 * (lo + hi);
            double mean = 0.0;
            for (std::size_t r = 0; r < target_rows; ++r)
                mean += sigmoid(logits[r * C + c] + mid);
            mean /= static_cast<double>(target_rows);
            achieved = mean;
            if (mean < cfg.positive_rates[c]) lo = mid;
            else hi = mid;
        }
        intercept[c] = 0.5 * (lo + hi);
        if (std::fabs(achieved - cfg.positive_rates[c]) > 0.005) {
            throw CalibrationError("synth_generate: outcome " + outcome_names()[c] +
                                   " calibration reached rate " + format_double(achieved) +
                                   " vs target " + format_double(cfg.positive_rates[c]));
        }
    }

    OracleScores oracle;
    oracle.n = n;
    oracle.C = C;
    oracle.probs.assign(n * C, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < C; ++c)
            oracle.probs[r * C + c] = sigmoid(logits[r * C + c] + intercept[c]);

    Rng label_draw(derive_seed(cfg.seed, 0x6c61626c /* "labl" */));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < C; ++c)
            ds.labels[r * C + c] = label_draw.uniform() < oracle.probs[r * C + c] ? 1.0 : 0.0;

    if (cfg.missing_rate > 0.0) {
        Rng missing(derive_seed(cfg.seed, 0x6d697373 /* "miss" */));
        for (std::size_t i = 0; i < n * F; ++i) {
            if (missing.uniform() < cfg.missing_rate) {
                ds.features_mask[i] = 0;
                ds.features[i] = 0.0;
            }
        }
    }

    ds.validate();
    return SynthResult{std::move(ds), std::move(oracle)};
}

void write_oracle_csv(const Dataset& ds, const OracleScores& oracle, const std::string& path) {
    if (oracle.n != ds.n) throw DimensionError("oracle rows != dataset rows");
    std::ostringstream out;
    out << "case_id";
    for (const auto& name : outcome_names()) out << ",p_" << name.substr(2);
    out << '\n';
    for (std::size_t r = 0; r < ds.n; ++r) {
        out << ds.case_ids[r];
        for (std::size_t c = 0; c < oracle.C; ++c) out << ',' << format_double(oracle.at(r, c));
        out << '\n';
    }
    write_text_file(path, out.str());
}

OracleScores load_oracle_csv(const std::string& path, std::size_t expected_rows) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path + ": empty oracle file");
    std::string expected = "case_id";
    for (const auto& name : outcome_names()) expected += ",p_" + name.substr(2);
    std::vector<std::string> header = split_csv_line(line);
    if (split_csv_line(expected) != header) {
        throw SchemaError(path + ": oracle header does not match the sidecar contract");
    }
    OracleScores oracle;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 1 + kOutcomeCount) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": malformed oracle row");
        }
        for (std::size_t c = 0; c < kOutcomeCount; ++c) {
            double p = 0.0;
            if (!parse_double_cell(cells[1 + c], p)) {
                throw ParseError(path + ":" + std::to_string(line_no) + ": empty probability");
            }
            oracle.probs.push_back(p);
        }
    }
    oracle.n = oracle.probs.size() / kOutcomeCount;
    if (expected_rows != 0 && oracle.n != expected_rows) {
        throw DimensionError(path + ": oracle has " + std::to_string(oracle.n) +
                             " rows, expected " + std::to_string(expected_rows));
    }
    return oracle;
}

}  // namespace surgvae
