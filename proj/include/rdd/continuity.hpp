#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdd/bandwidth.hpp"
#include "rdd/dataset.hpp"
#include "rdd/kernel_wls.hpp"
#include "rdd/stats.hpp"

namespace rdd {

struct EstimationSpec {
    Kernel kernel = Kernel::Triangular;
    int p = 1;
    std::optional<int> q;          // defaults to p + 1
    std::optional<double> h;       // selected when absent
    std::optional<double> b;       // defaults to h (rho = 1)
    VarianceMethod variance = VarianceMethod::NearestNeighbor;
    int nn_neighbors = 3;
    double level = 0.95;
    BiasBandwidth bias_bandwidth = BiasBandwidth::EqualToMain;

    int q_order() const noexcept { return q.value_or(p + 1); }
};

enum class Estimand { SharpOutcome, FirstStage, FuzzyRatio };
const char* to_string(Estimand e) noexcept;

// Point estimates are right limit minus left limit at the cutoff, whichever
// side is treated.
struct RDResult {
    Estimand estimand = Estimand::SharpOutcome;
    double point = 0.0;
    double bias_correction = 0.0;       // B-hat
    double variance_conventional = 0.0; // V-hat
    double variance_rbc_extra = 0.0;    // W-hat, clamped at zero
    Interval ci_conventional;
    Interval ci_rbc;
    double p_conventional = 1.0;
    double p_rbc = 1.0;
    double h = 0.0;
    double b = 0.0;
    std::size_t n_minus_h = 0;
    std::size_t n_plus_h = 0;
    int p = 1;
    int q = 2;
    Kernel kernel = Kernel::Triangular;
    VarianceMethod variance_method = VarianceMethod::NearestNeighbor;
    double level = 0.95;
    std::vector<std::string> warnings;

    double se_conventional() const;
    double se_robust() const;
};

struct FuzzyResult {
    RDResult first_stage;  // tau_D
    RDResult itt;          // tau_Y
    RDResult fuzzy;        // tau_FRD = tau_Y / tau_D
    double first_stage_f = 0.0;
    bool weak_first_stage = false;
};

RDResult estimate_sharp(std::span<const double> score, std::span<const double> y, double cutoff,
                        const EstimationSpec& spec);
RDResult estimate_sharp(const RDDataset& data, const RDDesign& design, const EstimationSpec& spec);

FuzzyResult estimate_fuzzy(std::span<const double> score, std::span<const double> y,
                           std::span<const double> received, const RDDesign& design, const EstimationSpec& spec);
FuzzyResult estimate_fuzzy(const RDDataset& data, const RDDesign& design, const EstimationSpec& spec);

void to_json(nlohmann::ordered_json& j, const Interval& v);
void to_json(nlohmann::ordered_json& j, const RDResult& r);
void to_json(nlohmann::ordered_json& j, const FuzzyResult& r);

}  // namespace rdd
