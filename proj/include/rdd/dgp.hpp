#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rdd/continuity.hpp"
#include "rdd/dataset.hpp"

namespace rdd {

enum class ScoreDensity { Uniform, BetaLike, WithBunching };
const char* to_string(ScoreDensity d) noexcept;

// Scores live on [-1, 1]: Uniform draws U(-1, 1); BetaLike draws
// 2 Beta(2, 4) - 1. WithBunching starts from BetaLike and reflects a share of
// the scores in [c - band, c) to the mirror point above the cutoff.
// Regression functions are polynomials in the raw score.
struct DGPSpec {
    std::vector<double> mu_below{0.0};
    std::vector<double> mu_above{0.0};
    double noise_sd = 0.0;
    ScoreDensity score_density = ScoreDensity::Uniform;
    double bunching_share = 0.0;
    double bunching_band = 0.1;
    // (take-up probability below, above); units above the cutoff are assigned.
    std::optional<std::pair<double, double>> takeup;
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    double cutoff = 0.0;
    // Independent standard-normal covariates named z1, z2, ...
    std::size_t n_covariates = 0;

    // Quintic functions with distinct curvature per side, beta-like scores,
    // noise sd 0.1295 and a jump of 0.04 at c = 0.
    static DGPSpec curved(std::size_t n = 1000, std::uint64_t seed = 0);
    // y = 0.5 + 0.8 x below and 0.7 + 0.8 x above, noise sd 0.1295.
    static DGPSpec linear(std::size_t n = 1000, std::uint64_t seed = 0);
};

struct DGPTruth {
    double tau_srd = 0.0;  // jump in E[Y | x] at the cutoff
    std::optional<double> first_stage;
    std::optional<double> tau_frd;  // complier effect
};

struct Generated {
    RDDataset data;
    DGPTruth truth;
};

DGPTruth true_parameters(const DGPSpec& spec);
Generated generate(const DGPSpec& spec);

struct ReplicationRecord {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    double estimate = 0.0;
    double h = 0.0;
    Interval ci_conventional;
    Interval ci_rbc;
    bool covered_conventional = false;
    bool covered_rbc = false;
};

struct CoverageTable {
    std::size_t replications = 0;
    std::size_t failures = 0;
    double tau_true = 0.0;
    double coverage_conventional = 0.0;
    double se_conventional = 0.0;  // binomial standard error
    double coverage_rbc = 0.0;
    double se_rbc = 0.0;
    double mean_estimate = 0.0;
    double bias = 0.0;
    double rmse = 0.0;
    double mean_h = 0.0;
    double mean_length_conventional = 0.0;
    double mean_length_rbc = 0.0;
    std::vector<ReplicationRecord> records;
};

// Interval membership with a 1e-10 (1 + |target|) slack, so zero-width
// intervals from noiseless designs count as covering up to rounding.
bool covers(const Interval& ci, double target) noexcept;

// Replication r uses the data seed derive_seed(master_seed, r). Fuzzy specs
// are scored on the ratio estimand.
CoverageTable coverage_study(const DGPSpec& spec, std::size_t replications, const EstimationSpec& estimator,
                             std::uint64_t master_seed);

struct StudySpec {
    DGPSpec dgp;
    std::size_t replications = 1000;
    std::uint64_t seed = 0;
    EstimationSpec estimator;
};

StudySpec parse_study(const nlohmann::json& j);
std::string coverage_to_csv(const CoverageTable& table);
std::string replications_to_csv(const CoverageTable& table);
void to_json(nlohmann::ordered_json& j, const DGPSpec& s);
void to_json(nlohmann::ordered_json& j, const CoverageTable& t);

}  // namespace rdd
