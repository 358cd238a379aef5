#include "rdd/falsify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <boost/math/distributions/binomial.hpp>

#include "rdd/error.hpp"

namespace rdd {

const char* to_string(DensityMethod m) noexcept {
    return m == DensityMethod::Binomial ? "binomial" : "local_linear_density";
}

const char* to_string(BalanceFramework f) noexcept {
    switch (f) {
        case BalanceFramework::Continuity: return "continuity";
        case BalanceFramework::LocalRandomization: return "local_randomization";
        case BalanceFramework::FuzzyRatio: return "fuzzy_ratio";
    }
    return "?";
}

double binomial_two_sided_p(std::size_t k, std::size_t n, double q) {
    if (k > n) throw Error(ErrorKind::InvalidInput, "successes exceed trials");
    if (!(q > 0.0 && q < 1.0)) throw Error(ErrorKind::InvalidInput, "success probability must be in (0,1)");
    const boost::math::binomial_distribution<double> dist(static_cast<double>(n), q);
    const double cap = boost::math::pdf(dist, static_cast<double>(k)) * (1.0 + 1e-7);
    double p = 0.0;
    std::size_t counted = 0;
    for (std::size_t j = 0; j <= n; ++j) {
        const double pj = boost::math::pdf(dist, static_cast<double>(j));
        if (pj <= cap) {
            p += pj;
            ++counted;
        }
    }
    // Every outcome qualifies: the sum is one up to rounding.
    return counted == n + 1 ? 1.0 : std::min(1.0, p);
}

DensityTestResult binomial_density_test(std::size_t n_below, std::size_t n_above, double q) {
    if (n_below + n_above == 0) throw Error(ErrorKind::EmptyWindow, "window contains no observations");
    DensityTestResult r;
    r.method = DensityMethod::Binomial;
    r.n_below = n_below;
    r.n_above = n_above;
    r.statistic = static_cast<double>(n_above);
    r.p_value = binomial_two_sided_p(n_above, n_below + n_above, q);
    return r;
}

DensityTestResult binomial_density_test(const RDDataset& data, const RDDesign& design, double lower, double upper,
                                        double q) {
    const Window w = make_window(data.score(), design.cutoff, lower, upper);
    DensityTestResult r = binomial_density_test(w.n_minus, w.n_plus, q);
    r.window = w;
    return r;
}

namespace {

double quantile7(std::vector<double> v, double prob) {
    std::sort(v.begin(), v.end());
    const double pos = prob * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

DensityTestResult density_discontinuity_test(std::span<const double> score, double cutoff,
                                             const DensityOptions& options) {
    const std::vector<double> s(score.begin(), score.end());
    const ScoreProfile prof = score_profile(s, cutoff);
    if (prof.K < 30)
        throw Error(ErrorKind::DiscreteScore,
                    "score has " + std::to_string(prof.K) + " distinct values; use the binomial test instead");
    const auto n = static_cast<double>(s.size());
    double w = 0.0;
    if (options.bin_width) {
        w = *options.bin_width;
    } else {
        w = 2.0 * (quantile7(s, 0.75) - quantile7(s, 0.25)) / std::sqrt(n);
    }
    if (!(w > 0.0)) throw Error(ErrorKind::InvalidInput, "bin width must be positive");
    const double lo = *std::min_element(s.begin(), s.end());
    const double hi = *std::max_element(s.begin(), s.end());
    const auto nb = static_cast<std::size_t>(std::max(0.0, std::floor((cutoff - lo) / w)));
    const auto na = static_cast<std::size_t>(std::max(0.0, std::floor((hi - cutoff) / w)));
    if (nb < 5 || na < 5)
        throw Error(ErrorKind::InsufficientBins, "each side needs at least 5 complete bins");

    // Bin j below covers [c-(j+1)w, c-jw); bin j above covers [c+jw, c+(j+1)w).
    std::vector<double> count_below(nb, 0.0), count_above(na, 0.0);
    for (double x : s) {
        if (is_above(x, cutoff)) {
            const auto j = static_cast<std::size_t>(std::floor((x - cutoff) / w));
            if (j < na) count_above[j] += 1.0;
        } else {
            const auto j = static_cast<std::size_t>(std::floor((cutoff - x) / w));
            if (j < nb) count_below[j] += 1.0;
        }
    }
    std::vector<double> mid, height;
    for (std::size_t j = nb; j-- > 0;) {
        mid.push_back(cutoff - (static_cast<double>(j) + 0.5) * w);
        height.push_back(count_below[j] / (n * w));
    }
    for (std::size_t j = 0; j < na; ++j) {
        mid.push_back(cutoff + (static_cast<double>(j) + 0.5) * w);
        height.push_back(count_above[j] / (n * w));
    }

    DensityTestResult r;
    r.method = DensityMethod::LocalLinearDensity;
    r.bin_width = w;
    r.n_below = static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [&](double x) { return x < cutoff; }));
    r.n_above = s.size() - r.n_below;
    const double h = options.h ? *options.h : select_bandwidth(mid, height, cutoff, 1, Kernel::Triangular,
                                                                     BiasBandwidth::EqualToMain,
                                                                     BandwidthCriterion::MseSum)
                                                        .h;
    r.bandwidth = h;

    // Robust bias correction as in the continuity estimator: local-linear
    // heights minus a local-quadratic estimate of their leading bias (b = h),
    // with the Poisson bin variance height / (n w) on the corrected weights.
    double var = 0.0, bias = 0.0;
    double f[2] = {0.0, 0.0};
    const Side sides[2] = {Side::BelowCutoff, Side::AtOrAboveCutoff};
    for (int k = 0; k < 2; ++k) {
        const double sign = k == 0 ? -1.0 : 1.0;
        const LocalFit fit = local_fit(mid, height, cutoff, sides[k], 1, h, Kernel::Triangular);
        const LocalFit quad = local_fit(mid, height, cutoff, sides[k], 2, h, Kernel::Triangular);
        f[k] = fit.coefficients[0];
        std::vector<double> l(mid.size(), 0.0);
        double kappa = 0.0;
        for (std::size_t i = 0; i < fit.rows.size(); ++i) {
            const double li = fit.hat(0, static_cast<Eigen::Index>(i));
            l[fit.rows[i]] += li;
            kappa += li * (mid[fit.rows[i]] - cutoff) * (mid[fit.rows[i]] - cutoff);
        }
        for (std::size_t i = 0; i < quad.rows.size(); ++i)
            l[quad.rows[i]] -= kappa * quad.hat(2, static_cast<Eigen::Index>(i));
        bias += sign * kappa * quad.coefficients[2];
        for (std::size_t i = 0; i < mid.size(); ++i) var += l[i] * l[i] * height[i] / (n * w);
    }
    r.density_below = f[0];
    r.density_above = f[1];
    const double se = std::sqrt(var);
    const double jump = f[1] - f[0] - bias;
    r.statistic = se > 0.0 ? jump / se : 0.0;
    r.p_value = two_sided_normal_p(jump, se);
    return r;
}

DensityTestResult density_discontinuity_test(const RDDataset& data, const RDDesign& design,
                                             const DensityOptions& options) {
    return density_discontinuity_test(data.score(), design.cutoff, options);
}

double first_stage_f(std::span<const double> score, std::span<const double> received, const RDDesign& design,
                     double h) {
    if (score.size() != received.size()) throw Error(ErrorKind::InvalidInput, "score and received lengths differ");
    double s[2] = {0.0, 0.0}, ss[2] = {0.0, 0.0}, cnt[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < score.size(); ++i) {
        if (std::fabs(score[i] - design.cutoff) > h) continue;
        const bool above = is_above(score[i], design.cutoff);
        const int t = (design.treated_side == TreatedSide::AtOrAbove) == above ? 1 : 0;
        s[t] += received[i];
        cnt[t] += 1.0;
    }
    if (cnt[0] == 0.0 || cnt[1] == 0.0) throw Error(ErrorKind::EmptySide, "first stage needs units on both sides");
    const double m[2] = {s[0] / cnt[0], s[1] / cnt[1]};
    for (std::size_t i = 0; i < score.size(); ++i) {
        if (std::fabs(score[i] - design.cutoff) > h) continue;
        const bool above = is_above(score[i], design.cutoff);
        const int t = (design.treated_side == TreatedSide::AtOrAbove) == above ? 1 : 0;
        ss[t] += (received[i] - m[t]) * (received[i] - m[t]);
    }
    const double n = cnt[0] + cnt[1];
    const double beta = m[1] - m[0];
    if (n <= 2.0) return std::numeric_limits<double>::quiet_NaN();
    const double sigma2 = (ss[0] + ss[1]) / (n - 2.0);
    const double v = sigma2 * (1.0 / cnt[0] + 1.0 / cnt[1]);
    if (v == 0.0) return beta == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return beta * beta / v;
}

double first_stage_f(const RDDataset& data, const RDDesign& design, double h) {
    return first_stage_f(data.score(), data.received(), design, h);
}

namespace {

DiagnosticRow row_from(const RDResult& r, std::string label, std::string framework) {
    DiagnosticRow row;
    row.label = std::move(label);
    row.framework = std::move(framework);
    row.estimate = r.point;
    row.ci = r.ci_rbc;
    row.p_value = r.p_rbc;
    row.h = r.h;
    row.b = r.b;
    row.kernel = r.kernel;
    row.p = r.p;
    row.n_minus = r.n_minus_h;
    row.n_plus = r.n_plus_h;
    row.detail = r;
    return row;
}

DiagnosticRow row_from(const FuzzyResult& r, std::string label, std::string framework) {
    DiagnosticRow row = row_from(r.fuzzy, std::move(label), std::move(framework));
    row.detail = r;
    return row;
}

std::string fmt(double v, int digits = 2) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

}  // namespace

std::vector<DiagnosticRow> covariate_balance(const RDDataset& data, const RDDesign& design,
                                             const std::vector<std::string>& covariates, BalanceFramework framework,
                                             const EstimationSpec& spec, const std::optional<Window>& window,
                                             const RandOptions& rand) {
    if (covariates.empty()) throw Error(ErrorKind::InvalidInput, "no covariates given");
    if (framework == BalanceFramework::LocalRandomization && !window)
        throw Error(ErrorKind::InvalidInput, "local-randomization balance needs a window");
    if (framework == BalanceFramework::FuzzyRatio && !data.has_received())
        throw Error(ErrorKind::MissingColumn, "fuzzy balance needs received treatment");
    EstimationSpec own = spec;
    own.h.reset();
    own.b.reset();
    std::vector<DiagnosticRow> rows;
    for (const auto& name : covariates) {
        const auto& v = data.covariate(name).values;
        if (framework == BalanceFramework::LocalRandomization) {
            const RandInfResult r = fisher_test(data, design, *window, name, RandStatistic::DiffMeans, rand);
            DiagnosticRow row;
            row.label = name;
            row.framework = to_string(framework);
            row.estimate = r.statistic;
            row.p_value = r.p_value;
            row.window = make_window(data.score(), design.cutoff, window->lower, window->upper);
            row.n_minus = r.n_minus;
            row.n_plus = r.n_plus;
            row.detail = r;
            rows.push_back(std::move(row));
            continue;
        }
        std::vector<double> x, y, d;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (std::isnan(v[i])) continue;
            x.push_back(data.score()[i]);
            y.push_back(v[i]);
            if (framework == BalanceFramework::FuzzyRatio) d.push_back(data.received()[i]);
        }
        if (framework == BalanceFramework::Continuity)
            rows.push_back(row_from(estimate_sharp(x, y, design.cutoff, own), name, to_string(framework)));
        else
            rows.push_back(row_from(estimate_fuzzy(x, y, d, design, own), name, to_string(framework)));
    }
    return rows;
}

std::vector<DiagnosticRow> placebo_cutoffs(const RDDataset& data, const RDDesign& design,
                                           const std::vector<double>& cutoffs, const EstimationSpec& spec) {
    EstimationSpec own = spec;
    own.h.reset();
    own.b.reset();
    std::vector<DiagnosticRow> rows;
    for (double pc : cutoffs) {
        if (pc == design.cutoff)
            throw Error(ErrorKind::SideAmbiguous, "placebo cutoff equals the true cutoff");
        const bool upper_side = pc > design.cutoff;
        std::vector<double> x, y;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (is_above(data.score()[i], design.cutoff) != upper_side) continue;
            x.push_back(data.score()[i]);
            y.push_back(data.outcome()[i]);
        }
        if (x.empty() || !(pc > *std::min_element(x.begin(), x.end()) && pc < *std::max_element(x.begin(), x.end())))
            throw Error(ErrorKind::CutoffOutsideSupport,
                        "placebo cutoff " + fmt(pc, 6) + " is not strictly inside its side's score range");
        rows.push_back(row_from(estimate_sharp(x, y, pc, own), "c=" + fmt(pc, 4), "continuity"));
    }
    return rows;
}

std::vector<DiagnosticRow> donut_hole(const RDDataset& data, const RDDesign& design, const EstimationSpec& spec,
                                      const std::vector<double>& radii) {
    const bool fuzzy = design.compliance == Compliance::Fuzzy;
    EstimationSpec fixed = spec;
    if (!fixed.h) {
        if (fuzzy) {
            const FuzzyResult base = estimate_fuzzy(data, design, spec);
            fixed.h = base.fuzzy.h;
            fixed.b = base.fuzzy.b;
        } else {
            const RDResult base = estimate_sharp(data, design, spec);
            fixed.h = base.h;
            fixed.b = base.b;
        }
    }
    std::vector<DiagnosticRow> rows;
    for (double r : radii) {
        if (!(r >= 0.0)) throw Error(ErrorKind::InvalidInput, "donut radius must be nonnegative");
        const std::string label = "r=" + fmt(r, 4);
        if (r == 0.0) {
            if (fuzzy)
                rows.push_back(row_from(estimate_fuzzy(data, design, fixed), label, "continuity"));
            else
                rows.push_back(row_from(estimate_sharp(data, design, fixed), label, "continuity"));
            continue;
        }
        std::vector<bool> keep(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) keep[i] = std::fabs(data.score()[i] - design.cutoff) > r;
        const RDDataset sub = data.filter(keep);
        try {
            if (fuzzy)
                rows.push_back(row_from(estimate_fuzzy(sub, design, fixed), label, "continuity"));
            else
                rows.push_back(row_from(estimate_sharp(sub, design, fixed), label, "continuity"));
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::SingularDesign || e.kind() == ErrorKind::InsufficientObservations)
                throw Error(ErrorKind::InsufficientObservations,
                            "donut radius " + fmt(r, 4) + " leaves too few observations: " + e.what());
            throw;
        }
    }
    return rows;
}

std::vector<DiagnosticRow> sensitivity_sweep(const RDDataset& data, const RDDesign& design,
                                             const EstimationSpec& spec, const std::vector<double>& bandwidths) {
    const bool fuzzy = design.compliance == Compliance::Fuzzy;
    std::vector<DiagnosticRow> rows;
    for (double h : bandwidths) {
        EstimationSpec s = spec;
        s.h = h;
        s.b = h;
        const std::string label = "h=" + fmt(h, 4);
        if (fuzzy)
            rows.push_back(row_from(estimate_fuzzy(data, design, s), label, "continuity"));
        else
            rows.push_back(row_from(estimate_sharp(data, design, s), label, "continuity"));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const DiagnosticRow& a, const DiagnosticRow& b) { return *a.h < *b.h; });
    return rows;
}

std::vector<DiagnosticRow> sensitivity_sweep(const RDDataset& data, const RDDesign& design,
                                             const std::vector<std::pair<double, double>>& windows,
                                             const RandOptions& rand, double level) {
    const bool fuzzy = design.compliance == Compliance::Fuzzy;
    std::vector<DiagnosticRow> rows;
    for (const auto& [lo, hi] : windows) {
        const Window w = make_window(data.score(), design.cutoff, lo, hi);
        DiagnosticRow row;
        row.label = "[" + fmt(lo, 4) + ", " + fmt(hi, 4) + "]";
        row.framework = "local_randomization";
        row.window = w;
        row.n_minus = w.n_minus;
        row.n_plus = w.n_plus;
        nlohmann::ordered_json detail = nlohmann::ordered_json::object();
        const RandInfResult fisher = fisher_test(data, design, w, "outcome", RandStatistic::DiffMeans, rand);
        detail["fisher_outcome"] = fisher;
        if (fuzzy) {
            const SuperPopResult sp = superpop_estimate(data, design, w, true, level);
            detail["large_sample"] = sp;
            row.estimate = sp.ratio->estimate;
            row.ci = sp.ratio->ci;
            row.p_value = sp.ratio->p_value;
        } else {
            row.estimate = fisher.statistic;
            row.p_value = fisher.p_value;
            if (w.n_minus >= 2 && w.n_plus >= 2) {
                const SuperPopResult sp = superpop_estimate(data, design, w, false, level);
                detail["large_sample"] = sp;
                row.ci = sp.outcome.ci;
            }
        }
        row.detail = detail;
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const DiagnosticRow& a, const DiagnosticRow& b) {
        return a.window->upper - a.window->lower < b.window->upper - b.window->lower;
    });
    return rows;
}

void to_json(nlohmann::ordered_json& j, const DensityTestResult& r) {
    j = nlohmann::ordered_json::object();
    j["method"] = to_string(r.method);
    j["statistic"] = r.statistic;
    j["p_value"] = r.p_value;
    if (r.window) j["window"] = *r.window;
    if (r.method == DensityMethod::LocalLinearDensity) {
        j["bandwidth"] = r.bandwidth;
        j["bin_width"] = r.bin_width;
        j["density_below"] = r.density_below;
        j["density_above"] = r.density_above;
    }
    j["n_below"] = r.n_below;
    j["n_above"] = r.n_above;
}

void to_json(nlohmann::ordered_json& j, const DiagnosticRow& r) {
    j = nlohmann::ordered_json::object();
    j["label"] = r.label;
    j["framework"] = r.framework;
    j["estimate"] = r.estimate;
    j["ci"] = r.ci ? nlohmann::ordered_json::array({r.ci->lower, r.ci->upper}) : nlohmann::ordered_json();
    j["p_value"] = r.p_value;
    if (r.h) j["h"] = *r.h;
    if (r.b) j["b"] = *r.b;
    if (r.window) j["window"] = *r.window;
    if (r.kernel) j["kernel"] = to_string(*r.kernel);
    if (r.p) j["p"] = *r.p;
    j["n_minus"] = r.n_minus;
    j["n_plus"] = r.n_plus;
    j["detail"] = r.detail;
}

void to_json(nlohmann::ordered_json& j, const DiagnosticReport& r) {
    j = nlohmann::ordered_json::object();
    if (r.density) j["density_test"] = *r.density;
    if (r.binomial) j["binomial_test"] = *r.binomial;
    if (r.first_stage_f) j["first_stage_f"] = *r.first_stage_f;
    j["balance_rows"] = r.balance_rows;
    j["placebo_rows"] = r.placebo_rows;
    j["donut_rows"] = r.donut_rows;
    j["sensitivity_rows"] = r.sensitivity_rows;
    j["flags"] = r.flags;
}

namespace {

void markdown_table(std::ostringstream& os, const std::string& title, const std::vector<DiagnosticRow>& rows) {
    if (rows.empty()) return;
    os << "### " << title << "\n\n";
    os << "| | Estimate | CI | p-value | Neighbourhood | Kernel | p | N- | N+ |\n";
    os << "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        os << "| " << r.label << " | " << fmt(r.estimate) << " | ";
        if (r.ci)
            os << "[" << fmt(r.ci->lower) << ", " << fmt(r.ci->upper) << "]";
        else
            os << "-";
        os << " | " << fmt(r.p_value) << " | ";
        if (r.h)
            os << "h=" << fmt(*r.h);
        else if (r.window)
            os << "[" << fmt(r.window->lower) << ", " << fmt(r.window->upper) << "]";
        os << " | " << (r.kernel ? to_string(*r.kernel) : "-") << " | " << (r.p ? std::to_string(*r.p) : "-")
           << " | " << r.n_minus << " | " << r.n_plus << " |\n";
    }
    os << "\n";
}

}  // namespace

std::string to_markdown(const DiagnosticReport& report) {
    std::ostringstream os;
    if (report.density || report.binomial) {
        os << "### Score density\n\n| Test | Statistic | p-value | N- | N+ |\n|---|---|---|---|---|\n";
        for (const auto* d : {report.density ? &*report.density : nullptr, report.binomial ? &*report.binomial : nullptr}) {
            if (!d) continue;
            os << "| " << to_string(d->method) << " | " << fmt(d->statistic) << " | " << fmt(d->p_value, 3) << " | "
               << d->n_below << " | " << d->n_above << " |\n";
        }
        os << "\n";
    }
    if (report.first_stage_f) os << "First-stage F: " << fmt(*report.first_stage_f) << "\n\n";
    markdown_table(os, "Covariate balance", report.balance_rows);
    markdown_table(os, "Placebo cutoffs", report.placebo_rows);
    markdown_table(os, "Donut hole", report.donut_rows);
    markdown_table(os, "Sensitivity", report.sensitivity_rows);
    for (const auto& f : report.flags) os << "- " << f << "\n";
    return os.str();
}

}  // namespace rdd
