#include "rdd/continuity.hpp"

#include <algorithm>
#include <cmath>

#include "rdd/error.hpp"
#include "rdd/falsify.hpp"

namespace rdd {

const char* to_string(Estimand e) noexcept {
    switch (e) {
        case Estimand::SharpOutcome: return "sharp_outcome";
        case Estimand::FirstStage: return "first_stage";
        case Estimand::FuzzyRatio: return "fuzzy_ratio";
    }
    return "?";
}

double RDResult::se_conventional() const { return std::sqrt(variance_conventional); }
double RDResult::se_robust() const { return std::sqrt(variance_conventional + variance_rbc_extra); }

namespace {

// The conventional estimator tau-hat = L_conv . y and the bias-corrected one
// (tau-hat - B-hat) = L_bc . y are both linear in the outcome, with weights
// that depend on the scores only. With order-p fits at h and order-q fits at
// b, on each side
//   l_bc = l_p - kappa * e_{p+1}' hat_q,   kappa = sum_i l_p,i (x_i - c)^(p+1)
// i.e. the p-fit intercept minus its leading bias, where the (p+1)-th
// coefficient of the q-fit stands in for m^(p+1)(c) / (p+1)!.
// Variances are sandwich forms sum_i L_i^2 sigma_i with sigma_i a per-row
// conditional (co)variance estimate.
struct SideDesign {
    LocalFit p_fit;
    LocalFit q_fit;
    std::vector<std::size_t> union_rows;
};

struct LinearDesign {
    std::size_t n = 0;
    SideDesign below, above;
    std::vector<double> l_conv;  // dense over rows
    std::vector<double> l_bc;
    double h = 0.0, b = 0.0;
};

SideDesign build_side(std::span<const double> score, std::span<const double> y, double cutoff, Side side,
                      const EstimationSpec& spec, double h, double b, std::vector<double>& l_conv,
                      std::vector<double>& l_bc, double sign) {
    SideDesign sd;
    const int p = spec.p;
    const int q = spec.q_order();
    sd.p_fit = local_fit(score, y, cutoff, side, p, h, spec.kernel);
    sd.q_fit = local_fit(score, y, cutoff, side, q, b, spec.kernel);
    double kappa = 0.0;
    for (std::size_t k = 0; k < sd.p_fit.rows.size(); ++k) {
        const std::size_t i = sd.p_fit.rows[k];
        const double l = sd.p_fit.hat(0, static_cast<Eigen::Index>(k));
        kappa += l * std::pow(score[i] - cutoff, p + 1);
        l_conv[i] += sign * l;
        l_bc[i] += sign * l;
    }
    for (std::size_t k = 0; k < sd.q_fit.rows.size(); ++k)
        l_bc[sd.q_fit.rows[k]] -= sign * kappa * sd.q_fit.hat(p + 1, static_cast<Eigen::Index>(k));
    std::set_union(sd.p_fit.rows.begin(), sd.p_fit.rows.end(), sd.q_fit.rows.begin(), sd.q_fit.rows.end(),
                   std::back_inserter(sd.union_rows));
    return sd;
}

LinearDesign build_design(std::span<const double> score, std::span<const double> y, double cutoff,
                          const EstimationSpec& spec, double h, double b) {
    if (spec.q_order() < spec.p + 1)
        throw Error(ErrorKind::InvalidInput, "bias-correction order q must exceed p");
    if (!(h > 0.0) || !(b > 0.0)) throw Error(ErrorKind::BandwidthTooSmall, "bandwidths must be positive");
    LinearDesign d;
    d.n = score.size();
    d.h = h;
    d.b = b;
    d.l_conv.assign(d.n, 0.0);
    d.l_bc.assign(d.n, 0.0);
    d.below = build_side(score, y, cutoff, Side::BelowCutoff, spec, h, b, d.l_conv, d.l_bc, -1.0);
    d.above = build_side(score, y, cutoff, Side::AtOrAboveCutoff, spec, h, b, d.l_conv, d.l_bc, 1.0);
    return d;
}

// On each side the weights sum to -1 (below) or +1 (above), so centering each
// side at its first weighted outcome and adding back the difference of the two
// references is exact algebra; a side with constant outcome then contributes
// exactly zero.
double dot(const LinearDesign& d, const std::vector<double>& l, std::span<const double> y) {
    auto side = [&](const std::vector<std::size_t>& rows) {
        const double ref = y[rows.front()];
        double s = 0.0;
        for (auto i : rows)
            if (l[i] != 0.0) s += l[i] * (y[i] - ref);
        return s;
    };
    const double ref_lo = y[d.below.union_rows.front()];
    const double ref_hi = y[d.above.union_rows.front()];
    return side(d.below.union_rows) + side(d.above.union_rows) + (ref_hi - ref_lo);
}

// Dense per-row Cov(a_i, b_i | x_i) estimates on the given rows of each side,
// built from local-fit residuals: the primary fit supplies residuals where it
// covers a row and the fallback fit elsewhere. Nearest-neighbour mode then
// differences those residuals against their same-side neighbours.
std::vector<double> row_covariance(std::span<const double> score, std::span<const double> a,
                                   std::span<const double> b, const EstimationSpec& spec,
                                   const std::vector<std::size_t>& rows_lo, const LocalFit& primary_lo,
                                   const LocalFit& fallback_lo, const std::vector<std::size_t>& rows_hi,
                                   const LocalFit& primary_hi, const LocalFit& fallback_hi) {
    std::vector<double> sigma(score.size(), 0.0);
    std::vector<double> ra(score.size(), 0.0), rb(score.size(), 0.0);
    auto fill = [&](const std::vector<std::size_t>& rows, const LocalFit& primary, const LocalFit& fallback) {
        for (const LocalFit* f : {&fallback, &primary}) {
            const LocalFit fa = refit(*f, score, a);
            const LocalFit fb = refit(*f, score, b);
            for (std::size_t k = 0; k < f->rows.size(); ++k) {
                ra[f->rows[k]] = fa.residuals[k];
                rb[f->rows[k]] = fb.residuals[k];
            }
        }
        if (spec.variance == VarianceMethod::NearestNeighbor) {
            const auto s = nn_residual_products(score, ra, rb, rows, spec.nn_neighbors);
            for (std::size_t k = 0; k < rows.size(); ++k) sigma[rows[k]] = s[k];
            return;
        }
        for (auto i : rows) sigma[i] = ra[i] * rb[i];
    };
    fill(rows_lo, primary_lo, fallback_lo);
    fill(rows_hi, primary_hi, fallback_hi);
    return sigma;
}

double sandwich(const std::vector<double>& l, const std::vector<double>& sigma) {
    double v = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i)
        if (l[i] != 0.0) v += l[i] * l[i] * sigma[i];
    return v;
}

struct Covariances {
    double conv = 0.0;
    double rbc = 0.0;
};

Covariances covariances(const LinearDesign& d, std::span<const double> score, std::span<const double> a,
                        std::span<const double> b, const EstimationSpec& spec) {
    Covariances c;
    const auto conv = row_covariance(score, a, b, spec, d.below.p_fit.rows, d.below.p_fit, d.below.p_fit,
                                     d.above.p_fit.rows, d.above.p_fit, d.above.p_fit);
    c.conv = sandwich(d.l_conv, conv);
    const auto rbc = row_covariance(score, a, b, spec, d.below.union_rows, d.below.q_fit, d.below.p_fit,
                                    d.above.union_rows, d.above.q_fit, d.above.p_fit);
    c.rbc = sandwich(d.l_bc, rbc);
    return c;
}

void count_window(RDResult& r, std::span<const double> score, double cutoff, double h) {
    r.n_minus_h = r.n_plus_h = 0;
    for (double x : score) {
        if (x >= cutoff - h && x < cutoff) ++r.n_minus_h;
        if (x >= cutoff && x <= cutoff + h) ++r.n_plus_h;
    }
}

void finish(RDResult& r, double tau, double bias, double v_conv, double v_rbc) {
    const double z = critical_value(r.level);
    r.point = tau;
    r.bias_correction = bias;
    r.variance_conventional = std::max(0.0, v_conv);
    r.variance_rbc_extra = std::max(0.0, v_rbc - r.variance_conventional);
    const double se = r.se_conventional();
    const double se_rbc = r.se_robust();
    r.ci_conventional = {tau - z * se, tau + z * se};
    const double center = tau - bias;
    r.ci_rbc = {center - z * se_rbc, center + z * se_rbc};
    r.p_conventional = two_sided_normal_p(tau, se);
    r.p_rbc = two_sided_normal_p(center, se_rbc);
}

RDResult blank_result(Estimand e, const EstimationSpec& spec, double h, double b) {
    RDResult r;
    r.estimand = e;
    r.h = h;
    r.b = b;
    r.p = spec.p;
    r.q = spec.q_order();
    r.kernel = spec.kernel;
    r.variance_method = spec.variance;
    r.level = spec.level;
    return r;
}

std::pair<double, double> resolve_bandwidths(std::span<const double> score, std::span<const double> y,
                                             double cutoff, const EstimationSpec& spec,
                                             std::vector<std::string>& warnings) {
    double h = 0.0, b = 0.0;
    if (spec.h) {
        h = *spec.h;
        b = spec.b.value_or(h);
    } else {
        const BandwidthSelection sel = select_bandwidth(score, y, cutoff, spec.p, spec.kernel, spec.bias_bandwidth);
        h = sel.h;
        b = spec.b.value_or(sel.b);
        warnings.insert(warnings.end(), sel.warnings.begin(), sel.warnings.end());
    }
    if (!(h > 0.0) || !(b > 0.0)) throw Error(ErrorKind::BandwidthTooSmall, "bandwidths must be positive");
    return {h, b};
}

}  // namespace

RDResult estimate_sharp(std::span<const double> score, std::span<const double> y, double cutoff,
                        const EstimationSpec& spec) {
    if (score.size() != y.size()) throw Error(ErrorKind::InvalidInput, "score and outcome lengths differ");
    std::vector<std::string> warnings;
    const auto [h, b] = resolve_bandwidths(score, y, cutoff, spec, warnings);
    const LinearDesign d = build_design(score, y, cutoff, spec, h, b);
    RDResult r = blank_result(Estimand::SharpOutcome, spec, h, b);
    r.warnings = std::move(warnings);
    const double tau = dot(d, d.l_conv, y);
    const double tau_bc = dot(d, d.l_bc, y);
    const Covariances v = covariances(d, score, y, y, spec);
    finish(r, tau, tau - tau_bc, v.conv, v.rbc);
    count_window(r, score, cutoff, h);
    return r;
}

RDResult estimate_sharp(const RDDataset& data, const RDDesign& design, const EstimationSpec& spec) {
    return estimate_sharp(data.score(), data.outcome(), design.cutoff, spec);
}

FuzzyResult estimate_fuzzy(std::span<const double> score, std::span<const double> y,
                           std::span<const double> received, const RDDesign& design, const EstimationSpec& spec) {
    if (score.size() != y.size() || score.size() != received.size())
        throw Error(ErrorKind::InvalidInput, "score, outcome and received lengths differ");
    const double cutoff = design.cutoff;
    std::vector<std::string> warnings;
    const auto [h, b] = resolve_bandwidths(score, y, cutoff, spec, warnings);
    const LinearDesign d = build_design(score, y, cutoff, spec, h, b);

    FuzzyResult out;
    const double tau_y = dot(d, d.l_conv, y);
    const double tau_d = dot(d, d.l_conv, received);
    const double bc_y = dot(d, d.l_bc, y);
    const double bc_d = dot(d, d.l_bc, received);
    const Covariances vyy = covariances(d, score, y, y, spec);
    const Covariances vdd = covariances(d, score, received, received, spec);
    const Covariances vyd = covariances(d, score, y, received, spec);

    out.itt = blank_result(Estimand::SharpOutcome, spec, h, b);
    finish(out.itt, tau_y, tau_y - bc_y, vyy.conv, vyy.rbc);
    out.first_stage = blank_result(Estimand::FirstStage, spec, h, b);
    finish(out.first_stage, tau_d, tau_d - bc_d, vdd.conv, vdd.rbc);

    if (std::fabs(tau_d) < 1e-12) throw Error(ErrorKind::ZeroFirstStage, "estimated first stage is zero");
    if (std::fabs(bc_d) < 1e-12)
        throw Error(ErrorKind::ZeroFirstStage, "bias-corrected first stage is zero");
    // Delta method around the ratio: tau_FRD - tau ~ (l . (Y - tau D)) / tau_D.
    const double tau = tau_y / tau_d;
    const double v_conv = (vyy.conv - 2.0 * tau * vyd.conv + tau * tau * vdd.conv) / (tau_d * tau_d);
    const double tau_bc = bc_y / bc_d;
    const double v_rbc = (vyy.rbc - 2.0 * tau_bc * vyd.rbc + tau_bc * tau_bc * vdd.rbc) / (bc_d * bc_d);
    out.fuzzy = blank_result(Estimand::FuzzyRatio, spec, h, b);
    finish(out.fuzzy, tau, tau - tau_bc, v_conv, v_rbc);

    for (RDResult* r : {&out.first_stage, &out.itt, &out.fuzzy}) {
        count_window(*r, score, cutoff, h);
        r->warnings = warnings;
    }
    out.first_stage_f = first_stage_f(score, received, design, h);
    out.weak_first_stage = out.first_stage_f < 10.0;
    if (out.weak_first_stage) {
        const std::string w = "WeakFirstStage: first-stage F = " + std::to_string(out.first_stage_f) + " < 10";
        for (RDResult* r : {&out.first_stage, &out.itt, &out.fuzzy}) r->warnings.push_back(w);
    }
    return out;
}

FuzzyResult estimate_fuzzy(const RDDataset& data, const RDDesign& design, const EstimationSpec& spec) {
    return estimate_fuzzy(data.score(), data.outcome(), data.received(), design, spec);
}

void to_json(nlohmann::ordered_json& j, const Interval& v) { j = nlohmann::ordered_json::array({v.lower, v.upper}); }

void to_json(nlohmann::ordered_json& j, const RDResult& r) {
    j = nlohmann::ordered_json::object();
    j["estimand"] = to_string(r.estimand);
    j["point"] = r.point;
    j["bias_correction"] = r.bias_correction;
    j["variance_conventional"] = r.variance_conventional;
    j["variance_rbc_extra"] = r.variance_rbc_extra;
    j["se_conventional"] = r.se_conventional();
    j["se_robust"] = r.se_robust();
    j["ci_conventional"] = r.ci_conventional;
    j["ci_rbc"] = r.ci_rbc;
    j["p_conventional"] = r.p_conventional;
    j["p_rbc"] = r.p_rbc;
    j["h"] = r.h;
    j["b"] = r.b;
    j["rho"] = r.h / r.b;
    j["n_minus_h"] = r.n_minus_h;
    j["n_plus_h"] = r.n_plus_h;
    j["p"] = r.p;
    j["q"] = r.q;
    j["kernel"] = to_string(r.kernel);
    j["variance_method"] = to_string(r.variance_method);
    j["level"] = r.level;
    j["warnings"] = r.warnings;
}

void to_json(nlohmann::ordered_json& j, const FuzzyResult& r) {
    j = nlohmann::ordered_json::object();
    j["first_stage"] = r.first_stage;
    j["itt"] = r.itt;
    j["fuzzy"] = r.fuzzy;
    j["first_stage_f"] = r.first_stage_f;
    j["weak_first_stage"] = r.weak_first_stage;
}

}  // namespace rdd
