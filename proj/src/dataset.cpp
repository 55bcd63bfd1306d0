#include "surgvae/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "surgvae/csvio.hpp"
#include "surgvae/errors.hpp"
#include "surgvae/rng.hpp"

namespace surgvae {

const std::array<std::string, kOutcomeCount>& outcome_names() {
    static const std::array<std::string, kOutcomeCount> names = {
        "y_af", "y_arrest", "y_dvtpe", "y_aki", "y_transfusion", "y_intraop"};
    return names;
}

int outcome_index(const std::string& name) {
    const auto& names = outcome_names();
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

std::string feature_column_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "f_%04zu", index);
    return std::string(buf);
}

int Dataset::group_count() const {
    int mx = -1;
    for (int g : groups) mx = std::max(mx, g);
    return mx + 1;
}

void Dataset::validate() const {
    if (case_ids.size() != n || groups.size() != n || labels.size() != n * C ||
        labels_mask.size() != n * C || features.size() != n * F ||
        features_mask.size() != n * F) {
        throw DimensionError("dataset row counts disagree");
    }
    std::set<int> seen;
    for (int g : groups) {
        if (g < 0) throw ValueError("negative group index");
        seen.insert(g);
    }
    if (!seen.empty() && static_cast<int>(seen.size()) != *seen.rbegin() + 1) {
        throw ValueError("group indices are not dense in [0,G)");
    }
    for (std::size_t i = 0; i < n * C; ++i) {
        if (labels_mask[i] && labels[i] != 0.0 && labels[i] != 1.0) {
            throw ValueError("observed label outside {0,1}");
        }
    }
}

namespace {

std::vector<std::string> expected_header(std::size_t F) {
    std::vector<std::string> cols = {"case_id", "group"};
    for (const auto& name : outcome_names()) cols.push_back(name);
    for (std::size_t f = 1; f <= F; ++f) cols.push_back(feature_column_name(f));
    return cols;
}

}  // namespace

Dataset load_csv(const std::string& path, std::size_t expected_F) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");

    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path + ": empty file, header row mandatory");
    const std::vector<std::string> header = split_csv_line(line);
    const std::vector<std::string> expected = expected_header(expected_F);
    if (header != expected) {
        // report a missing mandatory column by name when that is the problem
        std::set<std::string> have(header.begin(), header.end());
        for (const auto& col : expected) {
            if (!have.count(col)) {
                throw SchemaError(path + ": missing mandatory column `" + col + "`");
            }
        }
        throw SchemaError(path + ": header does not match the dataset contract (" +
                          std::to_string(header.size()) + " columns, expected " +
                          std::to_string(expected.size()) + " in fixed order)");
    }

    Dataset ds;
    ds.F = expected_F;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != expected.size()) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(expected.size()) + " cells, got " +
                             std::to_string(cells.size()));
        }
        ds.case_ids.push_back(cells[0]);
        int group = -1;
        {
            const std::string& cell = cells[1];
            auto res = std::from_chars(cell.data(), cell.data() + cell.size(), group);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || group < 0) {
                throw ParseError(path + ":" + std::to_string(line_no) +
                                 ": column `group`: expected nonnegative integer, got \"" +
                                 cell + "\"");
            }
        }
        ds.groups.push_back(group);
        for (std::size_t c = 0; c < kOutcomeCount; ++c) {
            const std::string& cell = cells[2 + c];
            if (cell.empty()) {
                ds.labels.push_back(0.0);
                ds.labels_mask.push_back(0);
            } else if (cell == "0" || cell == "1") {
                ds.labels.push_back(cell == "1" ? 1.0 : 0.0);
                ds.labels_mask.push_back(1);
            } else {
                throw ValueError(path + ":" + std::to_string(line_no) + ": column `" +
                                 outcome_names()[c] + "`: label must be 0, 1 or empty, got \"" +
                                 cell + "\"");
            }
        }
        for (std::size_t f = 0; f < expected_F; ++f) {
            const std::string& cell = cells[2 + kOutcomeCount + f];
            double v = 0.0;
            bool observed;
            try {
                observed = parse_double_cell(cell, v);
            } catch (const ParseError& e) {
                throw ParseError(path + ":" + std::to_string(line_no) + ": column `" +
                                 feature_column_name(f + 1) + "`: " + e.what());
            }
            if (observed && !std::isfinite(v)) {
                throw ValueError(path + ":" + std::to_string(line_no) + ": column `" +
                                 feature_column_name(f + 1) + "`: non-finite value");
            }
            ds.features.push_back(observed ? v : 0.0);
            ds.features_mask.push_back(observed ? 1 : 0);
        }
    }
    ds.n = ds.case_ids.size();
    ds.validate();
    return ds;
}

void write_csv(const Dataset& ds, const std::string& path) {
    std::ostringstream out;
    const auto header = expected_header(ds.F);
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out << ',';
        out << header[i];
    }
    out << '\n';
    for (std::size_t r = 0; r < ds.n; ++r) {
        out << ds.case_ids[r] << ',' << ds.groups[r];
        for (std::size_t c = 0; c < ds.C; ++c) {
            out << ',';
            if (ds.label_observed(r, c)) out << (ds.label(r, c) == 1.0 ? '1' : '0');
        }
        for (std::size_t f = 0; f < ds.F; ++f) {
            out << ',';
            if (ds.feature_observed(r, f)) out << format_double(ds.feature(r, f));
        }
        out << '\n';
    }
    write_text_file(path, out.str());
}

NormStats fit_normalizer(const Dataset& ds, const std::vector<std::size_t>& rows) {
    if (rows.empty()) throw UsageError("fit_normalizer: empty row subset");
    NormStats stats;
    stats.mean.assign(ds.F, 0.0);
    stats.std.assign(ds.F, 1.0);
    std::vector<double> sum(ds.F, 0.0), sumsq(ds.F, 0.0);
    std::vector<std::size_t> count(ds.F, 0);
    for (std::size_t r : rows) {
        const double* row = ds.features.data() + r * ds.F;
        const std::uint8_t* mask = ds.features_mask.data() + r * ds.F;
        for (std::size_t f = 0; f < ds.F; ++f) {
            if (!mask[f]) continue;
            sum[f] += row[f];
            sumsq[f] += row[f] * row[f];
            ++count[f];
        }
    }
    for (std::size_t f = 0; f < ds.F; ++f) {
        if (count[f] == 0) continue;  // mean 0, std 1 fallback
        const double m = sum[f] / static_cast<double>(count[f]);
        stats.mean[f] = m;
        const double var = std::max(0.0, sumsq[f] / static_cast<double>(count[f]) - m * m);
        const double sd = std::sqrt(var);
        stats.std[f] = sd > 0.0 ? sd : 1.0;
    }
    return stats;
}

Dataset apply_normalizer(const Dataset& ds, const NormStats& stats) {
    if (stats.mean.size() != ds.F || stats.std.size() != ds.F) {
        throw DimensionError("apply_normalizer: stats length " +
                             std::to_string(stats.mean.size()) + " != F " + std::to_string(ds.F));
    }
    Dataset out = ds;
    for (std::size_t r = 0; r < ds.n; ++r) {
        for (std::size_t f = 0; f < ds.F; ++f) {
            const std::size_t idx = r * ds.F + f;
            out.features[idx] =
                ds.features_mask[idx] ? (ds.features[idx] - stats.mean[f]) / stats.std[f] : 0.0;
        }
    }
    return out;
}

FoldAssignment stratified_folds(const Dataset& ds, int k, int target_group,
                                int strat_outcome, std::uint64_t seed) {
    if (k <= 0) throw UsageError("stratified_folds: k must be positive");
    if (strat_outcome < 0 || strat_outcome >= static_cast<int>(ds.C)) {
        throw UsageError("stratified_folds: outcome index out of range");
    }
    std::vector<std::size_t> target_rows;
    for (std::size_t r = 0; r < ds.n; ++r)
        if (ds.groups[r] == target_group) target_rows.push_back(r);
    if (target_rows.size() < static_cast<std::size_t>(k)) {
        throw UsageError("stratified_folds: target group has " +
                         std::to_string(target_rows.size()) + " rows, fewer than k=" +
                         std::to_string(k));
    }

    std::vector<std::size_t> positives, negatives;
    for (std::size_t r : target_rows) {
        const bool pos = ds.label_observed(r, strat_outcome) &&
                         ds.label(r, static_cast<std::size_t>(strat_outcome)) == 1.0;
        (pos ? positives : negatives).push_back(r);
    }

    Rng rng(derive_seed(seed, 0x666f6c64 /* "fold" */));
    rng.shuffle(positives);

    // Secondary balancing: bucket negatives by the joint key of the other
    // outcomes (0 / 1 / missing per outcome), shuffle within buckets, then
    // deal round-robin with a cursor continuing from the positives so both
    // positive counts and fold sizes stay within 1.
    std::map<std::string, std::vector<std::size_t>> buckets;
    for (std::size_t r : negatives) {
        std::string key;
        for (std::size_t c = 0; c < ds.C; ++c) {
            if (static_cast<int>(c) == strat_outcome) continue;
            key += ds.label_observed(r, c) ? (ds.label(r, c) == 1.0 ? '1' : '0') : '.';
        }
        buckets[key].push_back(r);
    }
    std::vector<std::size_t> ordered_negatives;
    ordered_negatives.reserve(negatives.size());
    for (auto& [key, rows] : buckets) {
        rng.shuffle(rows);
        ordered_negatives.insert(ordered_negatives.end(), rows.begin(), rows.end());
    }

    FoldAssignment fa;
    fa.k = k;
    fa.fold.assign(ds.n, -1);
    std::size_t cursor = 0;
    for (std::size_t r : positives) fa.fold[r] = static_cast<int>(cursor++ % k);
    for (std::size_t r : ordered_negatives) fa.fold[r] = static_cast<int>(cursor++ % k);
    return fa;
}

}  // namespace surgvae
