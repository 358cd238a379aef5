#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdd/dataset.hpp"
#include "rdd/stats.hpp"

namespace rdd {

enum class Binning { Auto, EvenlySpaced, QuantileSpaced, MassPoints };
const char* to_string(Binning b) noexcept;
Binning parse_binning(const std::string& name);

// Bins never straddle the cutoff; empty bins are not emitted.
struct PlotBin {
    double lower = 0.0;
    double upper = 0.0;
    double midpoint = 0.0;
    double mean = 0.0;
    double sd = 0.0;  // n - 1 denominator; 0 for singleton bins
    std::size_t count = 0;
    bool above = false;
    std::optional<Interval> ci;  // mean +- 1.96 sd / sqrt(count), count >= 2
};

struct RDPlotOptions {
    int p_global = 4;
    std::size_t bins_per_side = 20;
    // Auto picks MassPoints when the score has mass points and at most 60
    // distinct values, EvenlySpaced otherwise.
    Binning binning = Binning::Auto;
    bool bin_ci = false;
};

struct RDPlotData {
    std::vector<PlotBin> bins;
    std::optional<std::vector<double>> fit_below;  // coefficients on (x - c)^j
    std::optional<std::vector<double>> fit_above;
    double cutoff = 0.0;
    Binning binning = Binning::EvenlySpaced;
    int p_global = 4;
    double x_min = 0.0;
    double x_max = 0.0;
    std::vector<std::string> flags;
};

RDPlotData build_rdplot(std::span<const double> score, std::span<const double> y, double cutoff,
                        const RDPlotOptions& options = {});
RDPlotData build_rdplot(const RDDataset& data, const RDDesign& design, const RDPlotOptions& options = {});

struct HistogramBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    bool above = false;
};

struct Histogram {
    std::vector<HistogramBin> bins;  // consecutive, edges at cutoff + k * width
    double width = 0.0;
    double cutoff = 0.0;
    std::size_t n_in_range = 0;
};

// Bins are [c + k w, c + (k+1) w); the topmost bin is closed when the
// largest in-range score sits exactly on its upper edge. Without a width the
// in-range span is split into about 20 bins.
Histogram score_histogram(std::span<const double> score, double cutoff, std::optional<double> width = {},
                          std::optional<std::pair<double, double>> range = {});

std::string plot_to_csv(const RDPlotData& plot);
std::string plot_to_svg(const RDPlotData& plot);
std::string histogram_to_csv(const Histogram& hist);
std::string histogram_to_svg(const Histogram& hist);

void to_json(nlohmann::ordered_json& j, const PlotBin& b);
void to_json(nlohmann::ordered_json& j, const RDPlotData& p);
void to_json(nlohmann::ordered_json& j, const Histogram& h);

}  // namespace rdd
