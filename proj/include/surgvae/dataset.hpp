#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace surgvae {

inline constexpr std::size_t kOutcomeCount = 6;

/// Outcome column names, fixed order shared by every file format.
const std::array<std::string, kOutcomeCount>& outcome_names();
int outcome_index(const std::string& name);  // -1 if unknown

/// Rows of (case id, group, 6 binary outcomes with observed masks,
/// F-dimensional features with observed masks). Row-major matrices.
struct Dataset {
    std::vector<std::string> case_ids;
    std::vector<int> groups;
    std::vector<double> labels;         // n x C, {0,1} where observed
    std::vector<std::uint8_t> labels_mask;
    std::vector<double> features;       // n x F
    std::vector<std::uint8_t> features_mask;
    std::size_t n = 0;
    std::size_t F = 0;
    std::size_t C = kOutcomeCount;

    int group_count() const;
    double label(std::size_t row, std::size_t c) const { return labels[row * C + c]; }
    bool label_observed(std::size_t row, std::size_t c) const { return labels_mask[row * C + c] != 0; }
    double feature(std::size_t row, std::size_t f) const { return features[row * F + f]; }
    bool feature_observed(std::size_t row, std::size_t f) const { return features_mask[row * F + f] != 0; }

    /// Checks row counts, group density in [0,G), labels in {0,1} where observed.
    void validate() const;
};

/// Per-feature normalization statistics over observed entries of the fit split.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
};

/// Fold index per row; rows outside the stratified target group carry -1
/// (they are training-only).
struct FoldAssignment {
    std::vector<int> fold;
    int k = 0;
};

std::string feature_column_name(std::size_t index);  // f_0001, f_0002, ...

/// Strict CSV reader for the dataset contract. Header must match
/// case_id,group,y_af,...,y_intraop,f_0001,...,f_NNNN exactly.
/// Empty cells become unobserved entries.
Dataset load_csv(const std::string& path, std::size_t expected_F);

/// Writer for the same contract; unobserved entries become empty cells.
void write_csv(const Dataset& ds, const std::string& path);

/// Mean/std per feature over observed entries of `rows`. Features with no
/// observed entries get mean 0; zero-variance (or unobserved) features get
/// std forced to 1. Population standard deviation.
NormStats fit_normalizer(const Dataset& ds, const std::vector<std::size_t>& rows);

/// Observed entries become (v - mean) / std; unobserved become exactly 0.
/// Masks are preserved.
Dataset apply_normalizer(const Dataset& ds, const NormStats& stats);

/// Partitions target-group rows into k folds with per-fold sizes and per-fold
/// positive counts of strat_outcome each differing by at most 1. Remaining
/// target rows are balanced best-effort over the joint key of the other
/// outcomes. Non-target rows get fold -1.
FoldAssignment stratified_folds(const Dataset& ds, int k, int target_group,
                                int strat_outcome, std::uint64_t seed);

}  // namespace surgvae
