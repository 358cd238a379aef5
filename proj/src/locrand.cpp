#include "rdd/locrand.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rdd/error.hpp"

namespace rdd {

const char* to_string(RandMethod m) noexcept {
    switch (m) {
        case RandMethod::FisherExact: return "fisher_exact";
        case RandMethod::FisherMonteCarlo: return "fisher_monte_carlo";
        case RandMethod::LargeSample: return "large_sample";
    }
    return "?";
}

Window make_window(std::span<const double> score, double cutoff, double lower, double upper) {
    if (!(lower <= cutoff && cutoff <= upper))
        throw Error(ErrorKind::InvalidInput, "window must contain the cutoff");
    Window w{lower, upper, 0, 0};
    for (double x : score) {
        if (!w.contains(x)) continue;
        if (is_above(x, cutoff))
            ++w.n_plus;
        else
            ++w.n_minus;
    }
    return w;
}

namespace {

double diff_means(std::span<const double> v, std::span<const std::uint8_t> mask, std::size_t n1) {
    double s1 = 0.0, s0 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (mask[i])
            s1 += v[i];
        else
            s0 += v[i];
    }
    return s1 / static_cast<double>(n1) - s0 / static_cast<double>(v.size() - n1);
}

double choose(std::size_t n, std::size_t k) {
    k = std::min(k, n - k);
    double c = 1.0;
    for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
    return std::round(c);
}

struct Restricted {
    std::vector<double> values;
    std::vector<double> received;
    std::vector<std::uint8_t> above;
};

const std::vector<double>& resolve_column(const RDDataset& data, const std::string& target) {
    if (target == "outcome") return data.outcome();
    if (target == "received") return data.received();
    return data.covariate(target).values;
}

Restricted restrict(const RDDataset& data, const RDDesign& design, const Window& window,
                    const std::vector<double>& column, bool with_received) {
    Restricted r;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double x = data.score()[i];
        if (!window.contains(x) || std::isnan(column[i])) continue;
        r.values.push_back(column[i]);
        r.above.push_back(is_above(x, design.cutoff) ? 1 : 0);
        if (with_received) r.received.push_back(data.received()[i]);
    }
    return r;
}

}  // namespace

double tie_tolerance(std::span<const double> values, double observed) noexcept {
    double scale = std::fabs(observed);
    for (double v : values) scale = std::max(scale, std::fabs(v));
    return 1e-10 * scale;
}

RandInfResult fisher_test(std::span<const double> values, std::span<const std::uint8_t> above,
                          const RandOptions& options) {
    if (values.size() != above.size()) throw Error(ErrorKind::InvalidInput, "values and group lengths differ");
    const std::size_t n = values.size();
    const std::size_t n1 = static_cast<std::size_t>(std::count(above.begin(), above.end(), std::uint8_t{1}));
    if (n1 == 0 || n1 == n) throw Error(ErrorKind::EmptySide, "both sides of the cutoff need at least one unit");

    RandInfResult res;
    res.seed = options.seed;
    res.n_plus = n1;
    res.n_minus = n - n1;
    {
        double s1 = 0.0, s0 = 0.0;
        for (std::size_t i = 0; i < n; ++i) (above[i] ? s1 : s0) += values[i];
        res.mean_above = s1 / static_cast<double>(n1);
        res.mean_below = s0 / static_cast<double>(n - n1);
    }
    const double observed = diff_means(values, above, n1);
    res.statistic = observed;
    const double bar = std::fabs(observed) - tie_tolerance(values, observed);

    const double total = choose(n, n1);
    if (total <= static_cast<double>(options.exact_limit)) {
        res.method = RandMethod::FisherExact;
        std::vector<std::size_t> comb(n1);
        std::iota(comb.begin(), comb.end(), 0);
        std::vector<std::uint8_t> mask(n, 0);
        std::size_t hits = 0, count = 0;
        while (true) {
            std::fill(mask.begin(), mask.end(), 0);
            for (auto c : comb) mask[c] = 1;
            if (std::fabs(diff_means(values, mask, n1)) >= bar) ++hits;
            ++count;
            // next combination in lexicographic order
            std::size_t i = n1;
            while (i > 0 && comb[i - 1] == n - n1 + i - 1) --i;
            if (i == 0) break;
            ++comb[i - 1];
            for (std::size_t j = i; j < n1; ++j) comb[j] = comb[j - 1] + 1;
        }
        res.n_permutations = count;
        res.p_value = static_cast<double>(hits) / static_cast<double>(count);
        return res;
    }

    res.method = RandMethod::FisherMonteCarlo;
    std::vector<std::uint8_t> hit(options.reps, 0);
    parallel_for(options.reps, [&](std::size_t r) {
        auto rng = stream_rng(options.seed, r);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = 0; i < n1; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(perm[i], perm[pick(rng)]);
        }
        std::vector<std::uint8_t> mask(n, 0);
        for (std::size_t i = 0; i < n1; ++i) mask[perm[i]] = 1;
        hit[r] = std::fabs(diff_means(values, mask, n1)) >= bar ? 1 : 0;
    });
    const std::size_t hits = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), std::uint8_t{1}));
    res.n_permutations = options.reps + 1;
    res.p_value = static_cast<double>(hits + 1) / static_cast<double>(options.reps + 1);
    return res;
}

RandInfResult fisher_test(const RDDataset& data, const RDDesign& design, const Window& window,
                          const std::string& target, RandStatistic statistic, const RandOptions& options) {
    if (statistic == RandStatistic::DiffMeans) {
        const Restricted r = restrict(data, design, window, resolve_column(data, target), false);
        return fisher_test(r.values, r.above, options);
    }
    const Restricted r = restrict(data, design, window, resolve_column(data, target), true);
    const SuperPopResult sp = superpop_estimate(r.values, r.above, std::span<const double>(r.received));
    RandInfResult res;
    res.method = RandMethod::LargeSample;
    res.statistic = sp.ratio->estimate;
    res.p_value = sp.ratio->p_value;
    res.ci = sp.ratio->ci;
    res.seed = options.seed;
    res.n_minus = sp.n_minus;
    res.n_plus = sp.n_plus;
    return res;
}

FisherCI fisher_ci(std::span<const double> values, std::span<const std::uint8_t> above,
                   std::span<const double> shift, std::span<const double> tau_grid, double alpha,
                   const RandOptions& options) {
    if (tau_grid.empty()) throw Error(ErrorKind::EmptyGrid, "confidence-interval grid is empty");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidInput, "alpha must be in (0,1)");
    if (shift.size() != values.size()) throw Error(ErrorKind::InvalidInput, "shift length differs from values");
    FisherCI out;
    out.alpha = alpha;
    std::vector<double> adjusted(values.size());
    for (double tau : tau_grid) {
        for (std::size_t i = 0; i < values.size(); ++i) adjusted[i] = values[i] - tau * shift[i];
        const double p = fisher_test(adjusted, above, options).p_value;
        out.grid.emplace_back(tau, p);
        if (p >= alpha) {
            if (!out.ci)
                out.ci = Interval{tau, tau};
            else
                out.ci = Interval{std::min(out.ci->lower, tau), std::max(out.ci->upper, tau)};
        }
    }
    return out;
}

FisherCI fisher_ci(const RDDataset& data, const RDDesign& design, const Window& window,
                   std::span<const double> tau_grid, double alpha, const RandOptions& options) {
    const bool fuzzy = design.compliance == Compliance::Fuzzy && data.has_received();
    const Restricted r = restrict(data, design, window, data.outcome(), fuzzy);
    std::vector<double> shift(r.values.size());
    for (std::size_t i = 0; i < shift.size(); ++i) shift[i] = fuzzy ? r.received[i] : r.above[i];
    return fisher_ci(r.values, r.above, shift, tau_grid, alpha, options);
}

std::vector<double> make_grid(double from, double to, double step) {
    if (!(step > 0.0) || to < from) throw Error(ErrorKind::EmptyGrid, "grid needs from <= to and step > 0");
    std::vector<double> g;
    const auto count = static_cast<std::size_t>(std::floor((to - from) / step + 1e-9));
    // Points are snapped to multiples of 1e-12 so decimal grids hit their
    // decimal values (0.3, not 0.30000000000000004).
    for (std::size_t k = 0; k <= count; ++k) {
        const double v = from + static_cast<double>(k) * step;
        g.push_back(std::fabs(v) < 1e6 ? std::round(v * 1e12) / 1e12 : v);
    }
    return g;
}

namespace {

struct GroupMoments {
    double mean1 = 0.0, mean0 = 0.0, var1 = 0.0, var0 = 0.0;
    double n1 = 0.0, n0 = 0.0;
};

GroupMoments moments(std::span<const double> v, std::span<const std::uint8_t> above) {
    GroupMoments m;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (above[i]) {
            m.mean1 += v[i];
            m.n1 += 1;
        } else {
            m.mean0 += v[i];
            m.n0 += 1;
        }
    }
    m.mean1 /= m.n1;
    m.mean0 /= m.n0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (above[i])
            m.var1 += (v[i] - m.mean1) * (v[i] - m.mean1);
        else
            m.var0 += (v[i] - m.mean0) * (v[i] - m.mean0);
    }
    m.var1 /= (m.n1 - 1);
    m.var0 /= (m.n0 - 1);
    return m;
}

double group_covariance(std::span<const double> a, std::span<const double> b, std::span<const std::uint8_t> above,
                        std::uint8_t group) {
    double ma = 0.0, mb = 0.0, n = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (above[i] != group) continue;
        ma += a[i];
        mb += b[i];
        n += 1;
    }
    ma /= n;
    mb /= n;
    double c = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (above[i] == group) c += (a[i] - ma) * (b[i] - mb);
    return c / (n - 1);
}

SuperPopEstimate normal_estimate(double est, double se, double z) {
    SuperPopEstimate e;
    e.estimate = est;
    e.std_error = se;
    e.ci = {est - z * se, est + z * se};
    e.p_value = two_sided_normal_p(est, se);
    return e;
}

}  // namespace

SuperPopResult superpop_estimate(std::span<const double> y, std::span<const std::uint8_t> above,
                                 std::optional<std::span<const double>> received, double level) {
    if (y.size() != above.size()) throw Error(ErrorKind::InvalidInput, "values and group lengths differ");
    const auto n1 = static_cast<std::size_t>(std::count(above.begin(), above.end(), std::uint8_t{1}));
    const std::size_t n0 = y.size() - n1;
    if (n1 < 2 || n0 < 2) throw Error(ErrorKind::EmptySide, "large-sample inference needs two units per side");
    const double z = critical_value(level);
    SuperPopResult out;
    out.n_minus = n0;
    out.n_plus = n1;
    out.level = level;
    const GroupMoments my = moments(y, above);
    const double vy = my.var1 / my.n1 + my.var0 / my.n0;
    out.outcome = normal_estimate(my.mean1 - my.mean0, std::sqrt(vy), z);
    if (!received) return out;

    const auto d = *received;
    const GroupMoments md = moments(d, above);
    const double vd = md.var1 / md.n1 + md.var0 / md.n0;
    out.received = normal_estimate(md.mean1 - md.mean0, std::sqrt(vd), z);
    const double theta_d = out.received->estimate;
    if (std::fabs(theta_d) < 1e-12) throw Error(ErrorKind::ZeroFirstStage, "difference in take-up is zero");
    out.first_stage_f = vd > 0.0 ? theta_d * theta_d / vd : std::numeric_limits<double>::infinity();
    const double theta = out.outcome.estimate / theta_d;
    const double cyd = group_covariance(y, d, above, 1) / md.n1 + group_covariance(y, d, above, 0) / md.n0;
    const double v = std::max(0.0, (vy - 2.0 * theta * cyd + theta * theta * vd) / (theta_d * theta_d));
    out.ratio = normal_estimate(theta, std::sqrt(v), z);
    return out;
}

SuperPopResult superpop_estimate(const RDDataset& data, const RDDesign& design, const Window& window, bool fuzzy,
                                 double level) {
    const Restricted r = restrict(data, design, window, data.outcome(), fuzzy);
    if (fuzzy) return superpop_estimate(r.values, r.above, std::span<const double>(r.received), level);
    return superpop_estimate(r.values, r.above, std::nullopt, level);
}

WindowSelectionTrace select_window(const RDDataset& data, const RDDesign& design,
                                   const std::vector<std::string>& covariates, const WindowSelectOptions& options) {
    if (covariates.empty()) throw Error(ErrorKind::InvalidInput, "window selection needs at least one covariate");
    if (!(options.threshold > 0.0 && options.threshold < 1.0))
        throw Error(ErrorKind::InvalidInput, "threshold must be in (0,1)");
    const double c = design.cutoff;
    const auto& score = data.score();
    const ScoreProfile prof = score_profile(data, design);

    WindowSelectionTrace trace;
    trace.threshold = options.threshold;
    WindowGrowth growth = options.growth;
    if (growth == WindowGrowth::Auto) growth = prof.K <= 60 ? WindowGrowth::MassPoints : WindowGrowth::Symmetric;
    trace.growth_used = growth;

    std::vector<std::pair<double, double>> bounds;
    if (growth == WindowGrowth::MassPoints) {
        std::vector<double> below(prof.distinct_values.begin(), prof.distinct_values.begin() + prof.K_minus);
        std::reverse(below.begin(), below.end());
        std::vector<double> above(prof.distinct_values.begin() + prof.K_minus, prof.distinct_values.end());
        const std::size_t k = std::min({below.size(), above.size(), options.max_windows});
        if (k == 0) throw Error(ErrorKind::EmptySide, "both sides of the cutoff need at least one mass point");
        for (std::size_t i = 0; i < k; ++i) bounds.emplace_back(below[i], above[i]);
    } else {
        std::vector<double> dlo, dhi;
        for (double x : score) (is_above(x, c) ? dhi : dlo).push_back(std::fabs(x - c));
        if (dlo.size() < options.min_side || dhi.size() < options.min_side || options.min_side == 0)
            throw Error(ErrorKind::InsufficientObservations,
                        "each side needs at least " + std::to_string(options.min_side) + " observations");
        std::sort(dlo.begin(), dlo.end());
        std::sort(dhi.begin(), dhi.end());
        const double w0 = options.wmin.value_or(std::max(dlo[options.min_side - 1], dhi[options.min_side - 1]));
        const double step = options.wstep.value_or(1.0);
        if (!(step > 0.0)) throw Error(ErrorKind::InvalidInput, "window step must be positive");
        const double reach = std::max(dlo.back(), dhi.back());
        for (std::size_t k = 0; k < options.max_windows; ++k) {
            const double w = w0 + static_cast<double>(k) * step;
            bounds.emplace_back(c - w, c + w);
            if (w >= reach) break;
        }
    }

    for (const auto& [lo, hi] : bounds) {
        WindowCandidate cand;
        cand.window = make_window(score, c, lo, hi);
        cand.min_p_value = 1.0;
        for (const auto& name : covariates) {
            const Restricted r = restrict(data, design, cand.window, data.covariate(name).values, false);
            const auto n1 = std::count(r.above.begin(), r.above.end(), std::uint8_t{1});
            double p = std::numeric_limits<double>::quiet_NaN();
            if (n1 > 0 && static_cast<std::size_t>(n1) < r.above.size())
                p = fisher_test(r.values, r.above, options.rand).p_value;
            cand.covariate_p_values.emplace_back(name, p);
            if (!std::isnan(p)) cand.min_p_value = std::min(cand.min_p_value, p);
        }
        const bool reject = cand.min_p_value < options.threshold;
        trace.candidate_windows.push_back(std::move(cand));
        if (reject) break;
    }

    const auto& cw = trace.candidate_windows;
    const bool last_rejected = cw.back().min_p_value < options.threshold;
    if (!last_rejected) {
        trace.chosen = cw.back().window;
    } else if (cw.size() >= 2) {
        trace.chosen = cw[cw.size() - 2].window;
    } else {
        trace.chosen = cw.front().window;
        trace.balanced = false;
    }
    return trace;
}

void to_json(nlohmann::ordered_json& j, const Window& w) {
    j = nlohmann::ordered_json{{"lower", w.lower}, {"upper", w.upper}, {"n_minus", w.n_minus}, {"n_plus", w.n_plus}};
}

void to_json(nlohmann::ordered_json& j, const RandInfResult& r) {
    j = nlohmann::ordered_json::object();
    j["statistic"] = r.statistic;
    j["mean_below"] = r.mean_below;
    j["mean_above"] = r.mean_above;
    j["p_value"] = r.p_value;
    j["method"] = to_string(r.method);
    j["n_permutations"] = r.n_permutations;
    j["seed"] = r.seed;
    j["n_minus"] = r.n_minus;
    j["n_plus"] = r.n_plus;
    if (r.ci) j["ci"] = nlohmann::ordered_json::array({r.ci->lower, r.ci->upper});
}

void to_json(nlohmann::ordered_json& j, const FisherCI& r) {
    j = nlohmann::ordered_json::object();
    j["model"] = "constant_treatment_effect";
    j["alpha"] = r.alpha;
    if (r.ci)
        j["ci"] = nlohmann::ordered_json::array({r.ci->lower, r.ci->upper});
    else
        j["ci"] = nullptr;
    auto grid = nlohmann::ordered_json::array();
    for (const auto& [tau, p] : r.grid) grid.push_back({tau, p});
    j["grid"] = grid;
}

void to_json(nlohmann::ordered_json& j, const SuperPopEstimate& r) {
    j = nlohmann::ordered_json{{"estimate", r.estimate},
                               {"std_error", r.std_error},
                               {"ci", nlohmann::ordered_json::array({r.ci.lower, r.ci.upper})},
                               {"p_value", r.p_value}};
}

void to_json(nlohmann::ordered_json& j, const SuperPopResult& r) {
    j = nlohmann::ordered_json::object();
    j["outcome"] = r.outcome;
    if (r.received) j["received"] = *r.received;
    if (r.ratio) j["ratio"] = *r.ratio;
    if (r.first_stage_f) j["first_stage_f"] = *r.first_stage_f;
    j["n_minus"] = r.n_minus;
    j["n_plus"] = r.n_plus;
    j["level"] = r.level;
}

void to_json(nlohmann::ordered_json& j, const WindowSelectionTrace& r) {
    j = nlohmann::ordered_json::object();
    j["threshold"] = r.threshold;
    j["growth"] = r.growth_used == WindowGrowth::MassPoints ? "mass_points" : "symmetric";
    j["balanced"] = r.balanced;
    j["chosen"] = r.chosen;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& c : r.candidate_windows) {
        nlohmann::ordered_json row;
        row["window"] = c.window;
        row["min_p_value"] = c.min_p_value;
        auto ps = nlohmann::ordered_json::object();
        for (const auto& [name, p] : c.covariate_p_values) ps[name] = std::isnan(p) ? nlohmann::ordered_json() : nlohmann::ordered_json(p);
        row["covariate_p_values"] = ps;
        rows.push_back(row);
    }
    j["candidate_windows"] = rows;
}

}  // namespace rdd
