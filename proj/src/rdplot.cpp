#include "rdd/rdplot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "rdd/error.hpp"
#include "rdd/kernel_wls.hpp"

namespace rdd {

const char* to_string(Binning b) noexcept {
    switch (b) {
        case Binning::Auto: return "auto";
        case Binning::EvenlySpaced: return "evenly_spaced";
        case Binning::QuantileSpaced: return "quantile_spaced";
        case Binning::MassPoints: return "mass_points";
    }
    return "?";
}

Binning parse_binning(const std::string& name) {
    if (name == "auto") return Binning::Auto;
    if (name == "es" || name == "even" || name == "evenly_spaced") return Binning::EvenlySpaced;
    if (name == "qs" || name == "quantile" || name == "quantile_spaced") return Binning::QuantileSpaced;
    if (name == "mp" || name == "mass" || name == "mass_points") return Binning::MassPoints;
    throw Error(ErrorKind::InvalidInput, "unknown binning '" + name + "'");
}

namespace {

struct SideData {
    std::vector<double> x;
    std::vector<double> y;
};

double quantile7(const std::vector<double>& sorted, double prob) {
    const double pos = prob * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Assigns rows to bins given by `index`, summing in row order.
void accumulate_bins(const SideData& side, const std::vector<std::size_t>& index,
                     const std::vector<std::pair<double, double>>& bounds, bool above, bool mass_points,
                     bool with_ci, std::vector<PlotBin>& out) {
    const std::size_t nb = bounds.size();
    std::vector<double> sum(nb, 0.0);
    std::vector<std::size_t> cnt(nb, 0);
    for (std::size_t i = 0; i < side.x.size(); ++i) {
        sum[index[i]] += side.y[i];
        ++cnt[index[i]];
    }
    std::vector<double> mean(nb, 0.0), ss(nb, 0.0);
    for (std::size_t k = 0; k < nb; ++k)
        if (cnt[k] > 0) mean[k] = sum[k] / static_cast<double>(cnt[k]);
    for (std::size_t i = 0; i < side.x.size(); ++i) {
        const double e = side.y[i] - mean[index[i]];
        ss[index[i]] += e * e;
    }
    for (std::size_t k = 0; k < nb; ++k) {
        if (cnt[k] == 0) continue;
        PlotBin b;
        b.lower = bounds[k].first;
        b.upper = bounds[k].second;
        b.midpoint = mass_points ? b.lower : 0.5 * (b.lower + b.upper);
        b.mean = mean[k];
        b.count = cnt[k];
        b.sd = cnt[k] > 1 ? std::sqrt(ss[k] / static_cast<double>(cnt[k] - 1)) : 0.0;
        b.above = above;
        if (with_ci && cnt[k] > 1) {
            const double half = 1.96 * b.sd / std::sqrt(static_cast<double>(cnt[k]));
            b.ci = Interval{b.mean - half, b.mean + half};
        }
        out.push_back(b);
    }
}

void bin_side(const SideData& side, double cutoff, bool above, Binning binning, std::size_t J, bool with_ci,
              std::vector<PlotBin>& out) {
    if (side.x.empty()) return;
    const std::size_t n = side.x.size();
    std::vector<std::size_t> index(n);
    std::vector<std::pair<double, double>> bounds;
    if (binning == Binning::MassPoints) {
        std::vector<double> values = side.x;
        std::sort(values.begin(), values.end());
        values.erase(std::unique(values.begin(), values.end()), values.end());
        for (double v : values) bounds.emplace_back(v, v);
        for (std::size_t i = 0; i < n; ++i)
            index[i] = static_cast<std::size_t>(std::lower_bound(values.begin(), values.end(), side.x[i]) -
                                                values.begin());
    } else if (binning == Binning::EvenlySpaced) {
        const double lo = above ? cutoff : *std::min_element(side.x.begin(), side.x.end());
        const double hi = above ? *std::max_element(side.x.begin(), side.x.end()) : cutoff;
        const double step = (hi - lo) / static_cast<double>(J);
        for (std::size_t k = 0; k < J; ++k)
            bounds.emplace_back(lo + static_cast<double>(k) * step,
                                k + 1 == J ? hi : lo + static_cast<double>(k + 1) * step);
        for (std::size_t i = 0; i < n; ++i) {
            double j = step > 0.0 ? std::floor((side.x[i] - lo) / step) : 0.0;
            j = std::clamp(j, 0.0, static_cast<double>(J - 1));
            index[i] = static_cast<std::size_t>(j);
        }
    } else {
        std::vector<double> sorted = side.x;
        std::sort(sorted.begin(), sorted.end());
        std::vector<double> edges(J + 1);
        for (std::size_t k = 0; k <= J; ++k)
            edges[k] = quantile7(sorted, static_cast<double>(k) / static_cast<double>(J));
        for (std::size_t k = 0; k < J; ++k) bounds.emplace_back(edges[k], edges[k + 1]);
        for (std::size_t i = 0; i < n; ++i) {
            const auto it = std::upper_bound(edges.begin() + 1, edges.end() - 1, side.x[i]);
            index[i] = static_cast<std::size_t>(it - (edges.begin() + 1));
        }
    }
    accumulate_bins(side, index, bounds, above, binning == Binning::MassPoints, with_ci, out);
}

std::string num(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

}  // namespace

RDPlotData build_rdplot(std::span<const double> score, std::span<const double> y, double cutoff,
                        const RDPlotOptions& options) {
    if (score.size() != y.size()) throw Error(ErrorKind::InvalidInput, "score and outcome lengths differ");
    if (options.p_global < 0) throw Error(ErrorKind::InvalidInput, "global polynomial order must be nonnegative");
    if (options.bins_per_side == 0) throw Error(ErrorKind::InvalidInput, "need at least one bin per side");
    SideData below, above;
    for (std::size_t i = 0; i < score.size(); ++i) {
        SideData& s = is_above(score[i], cutoff) ? above : below;
        s.x.push_back(score[i]);
        s.y.push_back(y[i]);
    }
    if (below.x.empty() || above.x.empty())
        throw Error(ErrorKind::TooFewObservations, "plot needs observations on both sides of the cutoff");

    RDPlotData plot;
    plot.cutoff = cutoff;
    plot.p_global = options.p_global;
    plot.x_min = below.x.empty() ? cutoff : *std::min_element(below.x.begin(), below.x.end());
    plot.x_max = *std::max_element(above.x.begin(), above.x.end());
    const std::vector<double> s(score.begin(), score.end());
    const ScoreProfile prof = score_profile(s, cutoff);
    plot.binning = options.binning;
    if (plot.binning == Binning::Auto)
        plot.binning = prof.has_mass_points() && prof.K <= 60 ? Binning::MassPoints : Binning::EvenlySpaced;

    bin_side(below, cutoff, false, plot.binning, options.bins_per_side, options.bin_ci, plot.bins);
    bin_side(above, cutoff, true, plot.binning, options.bins_per_side, options.bin_ci, plot.bins);

    const auto need = static_cast<std::size_t>(options.p_global) + 1;
    if (prof.K_minus >= need)
        plot.fit_below = polynomial_least_squares(below.x, below.y, cutoff, options.p_global).coefficients;
    else
        plot.flags.push_back("overlay below the cutoff omitted: fewer than " + std::to_string(need) +
                             " distinct scores");
    if (prof.K_plus >= need)
        plot.fit_above = polynomial_least_squares(above.x, above.y, cutoff, options.p_global).coefficients;
    else
        plot.flags.push_back("overlay above the cutoff omitted: fewer than " + std::to_string(need) +
                             " distinct scores");
    return plot;
}

RDPlotData build_rdplot(const RDDataset& data, const RDDesign& design, const RDPlotOptions& options) {
    return build_rdplot(data.score(), data.outcome(), design.cutoff, options);
}

Histogram score_histogram(std::span<const double> score, double cutoff, std::optional<double> width,
                          std::optional<std::pair<double, double>> range) {
    Histogram hist;
    hist.cutoff = cutoff;
    std::vector<double> xs;
    for (double x : score)
        if (!range || (x >= range->first && x <= range->second)) xs.push_back(x);
    hist.n_in_range = xs.size();
    if (xs.empty()) {
        hist.width = width.value_or(1.0);
        return hist;
    }
    const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
    const double lo = *mn, hi = *mx;
    double w = width ? *width : (hi > lo ? (hi - lo) / 20.0 : 1.0);
    if (!(w > 0.0)) throw Error(ErrorKind::InvalidInput, "histogram bin width must be positive");
    hist.width = w;

    auto edge = [&](long long k) { return cutoff + static_cast<double>(k) * w; };
    auto index_of = [&](double x) {
        auto k = static_cast<long long>(std::floor((x - cutoff) / w));
        while (edge(k + 1) <= x) ++k;
        while (edge(k) > x) --k;
        return k;
    };
    const long long kmin = index_of(lo);
    long long ktop = index_of(hi);
    const bool close_top = ktop > kmin && ktop != 0 && edge(ktop) == hi;
    if (close_top) --ktop;
    const auto nb = static_cast<std::size_t>(ktop - kmin + 1);
    for (std::size_t j = 0; j < nb; ++j) {
        const long long k = kmin + static_cast<long long>(j);
        hist.bins.push_back({edge(k), edge(k + 1), 0, k >= 0});
    }
    for (double x : xs) {
        long long k = index_of(x);
        if (k > ktop) k = ktop;
        ++hist.bins[static_cast<std::size_t>(k - kmin)].count;
    }
    return hist;
}

std::string plot_to_csv(const RDPlotData& plot) {
    std::string out = "side,lower,upper,midpoint,mean,count,sd,ci_lower,ci_upper,fit\n";
    for (const auto& b : plot.bins) {
        const auto& coef = b.above ? plot.fit_above : plot.fit_below;
        out += std::string(b.above ? "above" : "below") + "," + num(b.lower) + "," + num(b.upper) + "," +
               num(b.midpoint) + "," + num(b.mean) + "," + std::to_string(b.count) + "," + num(b.sd) + ",";
        out += b.ci ? num(b.ci->lower) + "," + num(b.ci->upper) : std::string(",");
        out += ",";
        if (coef) out += num(evaluate_polynomial(*coef, b.midpoint - plot.cutoff));
        out += "\n";
    }
    return out;
}

std::string histogram_to_csv(const Histogram& hist) {
    std::string out = "side,lower,upper,count\n";
    for (const auto& b : hist.bins)
        out += std::string(b.above ? "above" : "below") + "," + num(b.lower) + "," + num(b.upper) + "," +
               std::to_string(b.count) + "\n";
    return out;
}

namespace {

constexpr double kWidth = 800.0, kHeight = 500.0, kLeft = 70.0, kRight = 20.0, kTop = 20.0, kBottom = 50.0;

struct Frame {
    double x0, x1, y0, y1;
    double sx(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
    double sy(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

Frame pad(double x0, double x1, double y0, double y1) {
    if (!(x1 > x0)) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if (!(y1 > y0)) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    const double py = 0.05 * (y1 - y0);
    return {x0, x1, y0 - py, y1 + py};
}

void svg_axes(std::ostringstream& os, const Frame& f, double cutoff, const std::string& xlabel,
              const std::string& ylabel) {
    const double bx = kHeight - kBottom;
    os << "<line x1=\"" << kLeft << "\" y1=\"" << bx << "\" x2=\"" << kWidth - kRight << "\" y2=\"" << bx
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << bx
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = f.x0 + (f.x1 - f.x0) * t / 4.0;
        const double yv = f.y0 + (f.y1 - f.y0) * t / 4.0;
        os << "<text x=\"" << fixed(f.sx(xv), 1) << "\" y=\"" << bx + 18 << "\" font-size=\"11\" "
           << "text-anchor=\"middle\">" << fixed(xv, 2) << "</text>\n";
        os << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(f.sy(yv) + 4, 1) << "\" font-size=\"11\" "
           << "text-anchor=\"end\">" << fixed(yv, 2) << "</text>\n";
    }
    os << "<line x1=\"" << fixed(f.sx(cutoff), 2) << "\" y1=\"" << kTop << "\" x2=\"" << fixed(f.sx(cutoff), 2)
       << "\" y2=\"" << bx << "\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n";
    os << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 10
       << "\" font-size=\"12\" text-anchor=\"middle\">" << xlabel << "</text>\n";
    os << "<text x=\"14\" y=\"" << (kTop + bx) / 2 << "\" font-size=\"12\" text-anchor=\"middle\" "
       << "transform=\"rotate(-90 14 " << (kTop + bx) / 2 << ")\">" << ylabel << "</text>\n";
}

}  // namespace

std::string plot_to_svg(const RDPlotData& plot) {
    double y0 = 0.0, y1 = 0.0;
    bool first = true;
    auto extend = [&](double v) {
        if (!std::isfinite(v)) return;
        if (first) {
            y0 = y1 = v;
            first = false;
        }
        y0 = std::min(y0, v);
        y1 = std::max(y1, v);
    };
    for (const auto& b : plot.bins) extend(b.mean);
    constexpr int kSteps = 100;
    std::vector<std::pair<double, double>> curve_below, curve_above;
    if (plot.fit_below)
        for (int s = 0; s <= kSteps; ++s) {
            const double x = plot.x_min + (plot.cutoff - plot.x_min) * s / kSteps;
            curve_below.emplace_back(x, evaluate_polynomial(*plot.fit_below, x - plot.cutoff));
        }
    if (plot.fit_above)
        for (int s = 0; s <= kSteps; ++s) {
            const double x = plot.cutoff + (plot.x_max - plot.cutoff) * s / kSteps;
            curve_above.emplace_back(x, evaluate_polynomial(*plot.fit_above, x - plot.cutoff));
        }
    for (const auto& c : {&curve_below, &curve_above})
        for (const auto& [x, v] : *c) extend(v);
    const Frame f = pad(plot.x_min, plot.x_max, y0, y1);

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg_axes(os, f, plot.cutoff, "Score", "Outcome");
    for (const auto& c : {&curve_below, &curve_above}) {
        if (c->empty()) continue;
        os << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, v] : *c) os << fixed(f.sx(x), 2) << "," << fixed(f.sy(v), 2) << " ";
        os << "\"/>\n";
    }
    for (const auto& b : plot.bins)
        os << "<circle cx=\"" << fixed(f.sx(b.midpoint), 2) << "\" cy=\"" << fixed(f.sy(b.mean), 2)
           << "\" r=\"3\" fill=\"" << (b.above ? "#1f4e9c" : "#555555") << "\"/>\n";
    os << "</svg>\n";
    return os.str();
}

std::string histogram_to_svg(const Histogram& hist) {
    std::size_t top = 0;
    for (const auto& b : hist.bins) top = std::max(top, b.count);
    const double x0 = hist.bins.empty() ? hist.cutoff - 1.0 : hist.bins.front().lower;
    const double x1 = hist.bins.empty() ? hist.cutoff + 1.0 : hist.bins.back().upper;
    Frame f{x0, x1, 0.0, top > 0 ? static_cast<double>(top) * 1.05 : 1.0};
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (const auto& b : hist.bins) {
        const double left = f.sx(b.lower), right = f.sx(b.upper), ytop = f.sy(static_cast<double>(b.count));
        os << "<rect x=\"" << fixed(left, 2) << "\" y=\"" << fixed(ytop, 2) << "\" width=\""
           << fixed(right - left, 2) << "\" height=\"" << fixed(f.sy(0.0) - ytop, 2) << "\" fill=\""
           << (b.above ? "#1f4e9c" : "#888888") << "\" stroke=\"white\"/>\n";
    }
    svg_axes(os, f, hist.cutoff, "Score", "Count");
    os << "</svg>\n";
    return os.str();
}

void to_json(nlohmann::ordered_json& j, const PlotBin& b) {
    j = nlohmann::ordered_json::object();
    j["side"] = b.above ? "above" : "below";
    j["lower"] = b.lower;
    j["upper"] = b.upper;
    j["midpoint"] = b.midpoint;
    j["mean"] = b.mean;
    j["count"] = b.count;
    j["sd"] = b.sd;
    if (b.ci) j["ci"] = nlohmann::ordered_json::array({b.ci->lower, b.ci->upper});
}

void to_json(nlohmann::ordered_json& j, const RDPlotData& p) {
    j = nlohmann::ordered_json::object();
    j["cutoff"] = p.cutoff;
    j["binning"] = to_string(p.binning);
    j["p_global"] = p.p_global;
    j["x_min"] = p.x_min;
    j["x_max"] = p.x_max;
    j["fit_below"] = p.fit_below ? nlohmann::ordered_json(*p.fit_below) : nlohmann::ordered_json();
    j["fit_above"] = p.fit_above ? nlohmann::ordered_json(*p.fit_above) : nlohmann::ordered_json();
    j["bins"] = p.bins;
    j["flags"] = p.flags;
}

void to_json(nlohmann::ordered_json& j, const Histogram& h) {
    j = nlohmann::ordered_json::object();
    j["cutoff"] = h.cutoff;
    j["width"] = h.width;
    j["n_in_range"] = h.n_in_range;
    auto bins = nlohmann::ordered_json::array();
    for (const auto& b : h.bins)
        bins.push_back({{"side", b.above ? "above" : "below"}, {"lower", b.lower}, {"upper", b.upper}, {"count", b.count}});
    j["bins"] = bins;
}

}  // namespace rdd
