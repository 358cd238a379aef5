#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdd/continuity.hpp"
#include "rdd/dataset.hpp"
#include "rdd/locrand.hpp"

namespace rdd {

enum class DensityMethod { Binomial, LocalLinearDensity };
const char* to_string(DensityMethod m) noexcept;

struct DensityTestResult {
    DensityMethod method = DensityMethod::Binomial;
    double statistic = 0.0;  // n_above for the binomial test, z otherwise
    double p_value = 1.0;
    std::optional<Window> window;  // binomial test only
    double bandwidth = 0.0;        // density test only
    double bin_width = 0.0;        // density test only
    double density_below = 0.0;
    double density_above = 0.0;
    std::size_t n_below = 0;
    std::size_t n_above = 0;
};

// Exact two-sided binomial p-value: total probability of outcomes no more
// likely than k successes out of n at success probability q.
double binomial_two_sided_p(std::size_t k, std::size_t n, double q = 0.5);

DensityTestResult binomial_density_test(std::size_t n_below, std::size_t n_above, double q = 0.5);
DensityTestResult binomial_density_test(const RDDataset& data, const RDDesign& design, double lower, double upper,
                                        double q = 0.5);

struct DensityOptions {
    std::optional<double> bin_width;  // default 2 * IQR / sqrt(n)
    std::optional<double> h;          // default chosen on the bin heights
};

// Binned local-linear test: bins are aligned at the cutoff, bin heights are
// count / (n * width), and each side's boundary height comes from a
// triangular local-linear fit. The z statistic is bias-corrected with a
// local-quadratic fit at the same bandwidth. Only bins lying entirely inside
// the observed score range enter the fit.
DensityTestResult density_discontinuity_test(std::span<const double> score, double cutoff,
                                             const DensityOptions& options = {});
DensityTestResult density_discontinuity_test(const RDDataset& data, const RDDesign& design,
                                             const DensityOptions& options = {});

// Classical F of the treated-side indicator in an OLS regression of received
// treatment on it, within |x - c| <= h.
double first_stage_f(std::span<const double> score, std::span<const double> received, const RDDesign& design,
                     double h);
double first_stage_f(const RDDataset& data, const RDDesign& design, double h);

enum class BalanceFramework { Continuity, LocalRandomization, FuzzyRatio };
const char* to_string(BalanceFramework f) noexcept;

// One re-estimation. Exactly one of (h, window) is set.
struct DiagnosticRow {
    std::string label;
    std::string framework;
    double estimate = 0.0;
    std::optional<Interval> ci;
    double p_value = 1.0;
    std::optional<double> h;
    std::optional<double> b;
    std::optional<Window> window;
    std::optional<Kernel> kernel;
    std::optional<int> p;
    std::size_t n_minus = 0;
    std::size_t n_plus = 0;
    nlohmann::ordered_json detail;
};

struct DiagnosticReport {
    std::vector<DiagnosticRow> balance_rows;
    std::vector<DiagnosticRow> placebo_rows;
    std::vector<DiagnosticRow> donut_rows;
    std::vector<DiagnosticRow> sensitivity_rows;
    std::optional<double> first_stage_f;
    std::optional<DensityTestResult> density;
    std::optional<DensityTestResult> binomial;
    std::vector<std::string> flags;
};

// Continuity selects a bandwidth per covariate (spec.h and spec.b are
// ignored); LocalRandomization needs `window`; FuzzyRatio needs received
// treatment. Missing covariate cells are dropped per covariate.
std::vector<DiagnosticRow> covariate_balance(const RDDataset& data, const RDDesign& design,
                                             const std::vector<std::string>& covariates, BalanceFramework framework,
                                             const EstimationSpec& spec, const std::optional<Window>& window = {},
                                             const RandOptions& rand = {});

// Each placebo cutoff uses only the observations on its side of the true
// cutoff and its own bandwidth.
std::vector<DiagnosticRow> placebo_cutoffs(const RDDataset& data, const RDDesign& design,
                                           const std::vector<double>& cutoffs, const EstimationSpec& spec);

// The bandwidths of the full-sample fit are held fixed for every radius.
// Radius 0 drops nothing.
std::vector<DiagnosticRow> donut_hole(const RDDataset& data, const RDDesign& design, const EstimationSpec& spec,
                                      const std::vector<double>& radii);

// Rows sorted by neighbourhood size; duplicates are kept.
std::vector<DiagnosticRow> sensitivity_sweep(const RDDataset& data, const RDDesign& design,
                                             const EstimationSpec& spec, const std::vector<double>& bandwidths);
std::vector<DiagnosticRow> sensitivity_sweep(const RDDataset& data, const RDDesign& design,
                                             const std::vector<std::pair<double, double>>& windows,
                                             const RandOptions& rand, double level = 0.95);

void to_json(nlohmann::ordered_json& j, const DensityTestResult& r);
void to_json(nlohmann::ordered_json& j, const DiagnosticRow& r);
void to_json(nlohmann::ordered_json& j, const DiagnosticReport& r);
std::string to_markdown(const DiagnosticReport& report);

}  // namespace rdd
