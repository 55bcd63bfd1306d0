#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "surgvae/dataset.hpp"

namespace surgvae {

/// Planted-latent generator configuration. Features arise as
/// x = A u + B_g v + noise * eps with shared latent u ~ N(0, I_du) and
/// group-specific latent v ~ N(m_g, I_dv); outcome c is Bernoulli of
/// sigmoid(beta_c . u + gamma_c . v + b_c) with b_c bisection-calibrated on
/// the target group so the mean probability hits the configured rate.
struct SynthConfig {
    std::vector<std::size_t> rows_per_group = {6000, 6000, 6000, 6000};
    std::size_t G = 4;
    std::size_t F = 128;
    std::size_t C = kOutcomeCount;
    std::size_t d_u = 4;
    std::size_t d_v = 4;
    double noise = 0.5;
    // Defaults follow the reported cardiac-cohort event rates for
    // AF, arrest, DVT/PE, AKI, transfusion and intraop events.
    std::vector<double> positive_rates = {0.2587, 0.0040, 0.0217, 0.3216, 0.3104, 0.0451};
    double missing_rate = 0.1;
    std::uint64_t seed = 7;

    void validate() const;
};

/// Exact generating probabilities per row and outcome (n x C, row-major).
struct OracleScores {
    std::vector<double> probs;
    std::size_t n = 0;
    std::size_t C = kOutcomeCount;

    double at(std::size_t row, std::size_t c) const { return probs[row * C + c]; }
};

struct SynthResult {
    Dataset dataset;
    OracleScores oracle;
};

SynthResult synth_generate(const SynthConfig& cfg);

/// Sidecar oracle file: case_id,p_af,...,p_intraop.
void write_oracle_csv(const Dataset& ds, const OracleScores& oracle, const std::string& path);
OracleScores load_oracle_csv(const std::string& path, std::size_t expected_rows);

}  // namespace surgvae
