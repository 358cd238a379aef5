#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdd/dataset.hpp"
#include "rdd/stats.hpp"

namespace rdd {

// Closed interval [lower, upper] around the cutoff. Below-cutoff units are
// those in [lower, c), above-cutoff units those in [c, upper].
struct Window {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t n_minus = 0;
    std::size_t n_plus = 0;

    bool contains(double x) const noexcept { return lower <= x && x <= upper; }
};

Window make_window(std::span<const double> score, double cutoff, double lower, double upper);

enum class RandStatistic { DiffMeans, TwoStage };
enum class RandMethod { FisherExact, FisherMonteCarlo, LargeSample };
const char* to_string(RandMethod m) noexcept;

struct RandOptions {
    std::uint64_t seed = 0;
    std::size_t reps = 1000;
    // Exact enumeration whenever the number of fixed-margins assignments is
    // at most this many.
    std::size_t exact_limit = 100000;
};

struct RandInfResult {
    double statistic = 0.0;   // mean above minus mean below (or the two-stage ratio)
    double p_value = 1.0;
    RandMethod method = RandMethod::FisherExact;
    std::size_t n_permutations = 0;  // assignments evaluated, observed included
    std::optional<Interval> ci;
    std::uint64_t seed = 0;
    std::size_t n_minus = 0;
    std::size_t n_plus = 0;
    double mean_below = 0.0;
    double mean_above = 0.0;
};

// Two-sided tie rule shared by every permutation path: an assignment counts
// when |t| >= |t_obs| - tie_tolerance(values, t_obs).
double tie_tolerance(std::span<const double> values, double observed) noexcept;

// Fixed-margins Fisherian test of the sharp null of no effect. `above` marks
// the units whose score is at or above the cutoff.
RandInfResult fisher_test(std::span<const double> values, std::span<const std::uint8_t> above,
                          const RandOptions& options);

// Resolves `target` ("outcome", "received", or a covariate name), restricts to
// the window and drops rows with a missing value. TwoStage gives the ratio of
// outcome and received differences with a large-sample p-value.
RandInfResult fisher_test(const RDDataset& data, const RDDesign& design, const Window& window,
                          const std::string& target, RandStatistic statistic, const RandOptions& options);

struct FisherCI {
    std::optional<Interval> ci;  // hull of non-rejected grid points
    std::vector<std::pair<double, double>> grid;  // (tau, p)
    double alpha = 0.05;
};

// Inverts the test under the constant-effect model Y(1) = Y(0) + tau: the
// outcome is adjusted by tau times `shift` (the above-cutoff indicator in a
// sharp design, received treatment in a fuzzy one) before testing.
FisherCI fisher_ci(std::span<const double> values, std::span<const std::uint8_t> above,
                   std::span<const double> shift, std::span<const double> tau_grid, double alpha,
                   const RandOptions& options);
FisherCI fisher_ci(const RDDataset& data, const RDDesign& design, const Window& window,
                   std::span<const double> tau_grid, double alpha, const RandOptions& options);

std::vector<double> make_grid(double from, double to, double step);

struct SuperPopEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
    Interval ci;
    double p_value = 1.0;
};

struct SuperPopResult {
    SuperPopEstimate outcome;                   // theta_Y
    std::optional<SuperPopEstimate> received;   // theta_D
    std::optional<SuperPopEstimate> ratio;      // theta_FRD
    std::optional<double> first_stage_f;        // (theta_D / se)^2
    std::size_t n_minus = 0;
    std::size_t n_plus = 0;
    double level = 0.95;
};

SuperPopResult superpop_estimate(std::span<const double> y, std::span<const std::uint8_t> above,
                                 std::optional<std::span<const double>> received, double level = 0.95);
SuperPopResult superpop_estimate(const RDDataset& data, const RDDesign& design, const Window& window, bool fuzzy,
                                 double level = 0.95);

enum class WindowGrowth { Auto, MassPoints, Symmetric };

struct WindowSelectOptions {
    double threshold = 0.15;
    std::size_t min_side = 10;
    WindowGrowth growth = WindowGrowth::Auto;
    std::optional<double> wstep;     // symmetric growth step; defaults to 1 score unit
    std::optional<double> wmin;      // first half-width; defaults to the min_side rule
    std::size_t max_windows = 10;
    RandOptions rand;
};

struct WindowCandidate {
    Window window;
    double min_p_value = 1.0;
    std::vector<std::pair<std::string, double>> covariate_p_values;
};

struct WindowSelectionTrace {
    std::vector<WindowCandidate> candidate_windows;
    Window chosen;
    double threshold = 0.15;
    bool balanced = true;  // false when even the smallest window fails
    WindowGrowth growth_used = WindowGrowth::Symmetric;
};

WindowSelectionTrace select_window(const RDDataset& data, const RDDesign& design,
                                   const std::vector<std::string>& covariates, const WindowSelectOptions& options);

void to_json(nlohmann::ordered_json& j, const Window& w);
void to_json(nlohmann::ordered_json& j, const RandInfResult& r);
void to_json(nlohmann::ordered_json& j, const FisherCI& r);
void to_json(nlohmann::ordered_json& j, const SuperPopEstimate& r);
void to_json(nlohmann::ordered_json& j, const SuperPopResult& r);
void to_json(nlohmann::ordered_json& j, const WindowSelectionTrace& r);

}  // namespace rdd
