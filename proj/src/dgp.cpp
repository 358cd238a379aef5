#include "rdd/dgp.hpp"

#include <charconv>
#include <cmath>
#include <random>

#include "rdd/error.hpp"
#include "rdd/stats.hpp"

namespace rdd {

const char* to_string(ScoreDensity d) noexcept {
    switch (d) {
        case ScoreDensity::Uniform: return "uniform";
        case ScoreDensity::BetaLike: return "beta";
        case ScoreDensity::WithBunching: return "bunching";
    }
    return "?";
}

DGPSpec DGPSpec::curved(std::size_t n, std::uint64_t seed) {
    DGPSpec s;
    s.mu_below = {0.48, 1.27, 7.18, 20.21, 21.54, 7.33};
    s.mu_above = {0.52, 0.84, -3.00, 7.99, -9.01, 3.56};
    s.noise_sd = 0.1295;
    s.score_density = ScoreDensity::BetaLike;
    s.n = n;
    s.seed = seed;
    return s;
}

DGPSpec DGPSpec::linear(std::size_t n, std::uint64_t seed) {
    DGPSpec s;
    s.mu_below = {0.5, 0.8};
    s.mu_above = {0.7, 0.8};
    s.noise_sd = 0.1295;
    s.score_density = ScoreDensity::Uniform;
    s.n = n;
    s.seed = seed;
    return s;
}

namespace {

double poly(const std::vector<double>& c, double x) {
    double v = 0.0;
    for (std::size_t j = c.size(); j-- > 0;) v = v * x + c[j];
    return v;
}

void validate(const DGPSpec& s) {
    if (s.mu_below.empty() || s.mu_above.empty())
        throw Error(ErrorKind::InvalidSpec, "regression functions need at least one coefficient");
    if (!(s.noise_sd >= 0.0) || !std::isfinite(s.noise_sd))
        throw Error(ErrorKind::InvalidSpec, "noise sd must be finite and nonnegative");
    if (!(s.cutoff > -1.0 && s.cutoff < 1.0)) throw Error(ErrorKind::InvalidSpec, "cutoff must lie in (-1, 1)");
    if (s.n < 2) throw Error(ErrorKind::InvalidSpec, "sample size must be at least 2");
    if (!(s.bunching_share >= 0.0 && s.bunching_share <= 1.0) || !(s.bunching_band > 0.0))
        throw Error(ErrorKind::InvalidSpec, "bunching share must be in [0,1] and band positive");
    if (s.takeup) {
        const auto [pb, pa] = *s.takeup;
        if (!(pb >= 0.0 && pb <= 1.0 && pa >= 0.0 && pa <= 1.0))
            throw Error(ErrorKind::InvalidSpec, "take-up probabilities must be in [0,1]");
        if (pa == pb) throw Error(ErrorKind::InvalidSpec, "take-up probabilities must differ");
    }
}

}  // namespace

bool covers(const Interval& ci, double target) noexcept {
    const double slack = 1e-10 * (1.0 + std::fabs(target));
    return ci.lower - slack <= target && target <= ci.upper + slack;
}

DGPTruth true_parameters(const DGPSpec& spec) {
    validate(spec);
    DGPTruth t;
    const double jump = poly(spec.mu_above, spec.cutoff) - poly(spec.mu_below, spec.cutoff);
    if (spec.takeup) {
        const double fs = spec.takeup->second - spec.takeup->first;
        t.first_stage = fs;
        t.tau_frd = jump;
        t.tau_srd = fs * jump;
    } else {
        t.tau_srd = jump;
    }
    return t;
}

Generated generate(const DGPSpec& spec) {
    DGPTruth truth = true_parameters(spec);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::gamma_distribution<double> g2(2.0, 1.0), g4(4.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double c = spec.cutoff;

    std::vector<double> x(spec.n), y(spec.n);
    std::optional<std::vector<double>> d;
    if (spec.takeup) d.emplace(spec.n);
    std::vector<Covariate> covs(spec.n_covariates);
    for (std::size_t k = 0; k < spec.n_covariates; ++k) {
        covs[k].name = "z" + std::to_string(k + 1);
        covs[k].values.resize(spec.n);
    }
    for (std::size_t i = 0; i < spec.n; ++i) {
        double xi = 0.0;
        if (spec.score_density == ScoreDensity::Uniform) {
            xi = unif(rng);
        } else {
            const double a = g2(rng), b = g4(rng);
            xi = 2.0 * a / (a + b) - 1.0;
        }
        if (spec.score_density == ScoreDensity::WithBunching) {
            const double u = u01(rng);
            if (xi < c && xi >= c - spec.bunching_band && u < spec.bunching_share) xi = 2.0 * c - xi;
        }
        const bool above = is_above(xi, c);
        const double m0 = poly(spec.mu_below, xi), m1 = poly(spec.mu_above, xi);
        double treated = above ? 1.0 : 0.0;
        if (d) {
            const double pr = above ? spec.takeup->second : spec.takeup->first;
            treated = u01(rng) < pr ? 1.0 : 0.0;
            (*d)[i] = treated;
        }
        x[i] = xi;
        y[i] = m0 + treated * (m1 - m0) + spec.noise_sd * noise(rng);
        for (auto& cv : covs) cv.values[i] = noise(rng);
    }
    return {RDDataset(std::move(x), std::move(y), std::move(d), std::move(covs)), truth};
}

CoverageTable coverage_study(const DGPSpec& spec, std::size_t replications, const EstimationSpec& estimator,
                             std::uint64_t master_seed) {
    if (replications < 100) throw Error(ErrorKind::InvalidSpec, "coverage study needs at least 100 replications");
    const DGPTruth truth = true_parameters(spec);
    const bool fuzzy = spec.takeup.has_value();
    const double target = fuzzy ? *truth.tau_frd : truth.tau_srd;
    const RDDesign design{spec.cutoff, TreatedSide::AtOrAbove, fuzzy ? Compliance::Fuzzy : Compliance::Sharp};

    CoverageTable t;
    t.replications = replications;
    t.tau_true = target;
    t.records.resize(replications);
    parallel_for(replications, [&](std::size_t r) {
        DGPSpec s = spec;
        s.seed = derive_seed(master_seed, r);
        ReplicationRecord rec;
        rec.index = r;
        rec.seed = s.seed;
        try {
            const Generated g = generate(s);
            const RDResult res = fuzzy ? estimate_fuzzy(g.data, design, estimator).fuzzy
                                       : estimate_sharp(g.data, design, estimator);
            rec.ok = true;
            rec.estimate = res.point;
            rec.h = res.h;
            rec.ci_conventional = res.ci_conventional;
            rec.ci_rbc = res.ci_rbc;
            rec.covered_conventional = covers(res.ci_conventional, target);
            rec.covered_rbc = covers(res.ci_rbc, target);
        } catch (const Error&) {
            rec.ok = false;
        }
        t.records[r] = rec;
    });

    std::size_t ok = 0, cc = 0, cr = 0;
    double se = 0.0, sh = 0.0, sq = 0.0, lc = 0.0, lr = 0.0;
    for (const auto& rec : t.records) {
        if (!rec.ok) {
            ++t.failures;
            continue;
        }
        ++ok;
        cc += rec.covered_conventional;
        cr += rec.covered_rbc;
        se += rec.estimate;
        sh += rec.h;
        sq += (rec.estimate - target) * (rec.estimate - target);
        lc += rec.ci_conventional.width();
        lr += rec.ci_rbc.width();
    }
    if (ok == 0) return t;
    const double m = static_cast<double>(ok);
    t.coverage_conventional = static_cast<double>(cc) / m;
    t.coverage_rbc = static_cast<double>(cr) / m;
    t.se_conventional = std::sqrt(t.coverage_conventional * (1.0 - t.coverage_conventional) / m);
    t.se_rbc = std::sqrt(t.coverage_rbc * (1.0 - t.coverage_rbc) / m);
    t.mean_estimate = se / m;
    t.bias = t.mean_estimate - target;
    t.rmse = std::sqrt(sq / m);
    t.mean_h = sh / m;
    t.mean_length_conventional = lc / m;
    t.mean_length_rbc = lr / m;
    return t;
}

namespace {

std::vector<double> coefficients(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) throw Error(ErrorKind::InvalidSpec, std::string("study dgp is missing '") + key + "'");
    return j.at(key).get<std::vector<double>>();
}

}  // namespace

StudySpec parse_study(const nlohmann::json& j) {
    StudySpec s;
    try {
        const std::size_t n = j.value("n", std::size_t{1000});
        const auto& dj = j.contains("dgp") ? j.at("dgp") : nlohmann::json("curved");
        if (dj.is_string()) {
            const auto name = dj.get<std::string>();
            if (name == "curved")
                s.dgp = DGPSpec::curved(n);
            else if (name == "linear")
                s.dgp = DGPSpec::linear(n);
            else
                throw Error(ErrorKind::InvalidSpec, "unknown dgp '" + name + "'");
        } else {
            s.dgp.mu_below = coefficients(dj, "mu_below");
            s.dgp.mu_above = coefficients(dj, "mu_above");
            s.dgp.noise_sd = dj.value("noise_sd", 0.0);
            const std::string dens = dj.value("score_density", std::string("uniform"));
            if (dens == "uniform")
                s.dgp.score_density = ScoreDensity::Uniform;
            else if (dens == "beta")
                s.dgp.score_density = ScoreDensity::BetaLike;
            else if (dens == "bunching")
                s.dgp.score_density = ScoreDensity::WithBunching;
            else
                throw Error(ErrorKind::InvalidSpec, "unknown score density '" + dens + "'");
            s.dgp.bunching_share = dj.value("bunching_share", 0.0);
            s.dgp.bunching_band = dj.value("bunching_band", 0.1);
            s.dgp.cutoff = dj.value("cutoff", 0.0);
            s.dgp.n_covariates = dj.value("covariates", std::size_t{0});
            if (dj.contains("takeup")) {
                const auto tk = dj.at("takeup").get<std::vector<double>>();
                if (tk.size() != 2) throw Error(ErrorKind::InvalidSpec, "takeup needs [below, above]");
                s.dgp.takeup = std::make_pair(tk[0], tk[1]);
            }
            s.dgp.n = n;
        }
        s.replications = j.value("replications", std::size_t{1000});
        s.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("estimator")) {
            const auto& e = j.at("estimator");
            if (e.contains("kernel")) s.estimator.kernel = parse_kernel(e.at("kernel").get<std::string>());
            s.estimator.p = e.value("p", 1);
            if (e.contains("q")) s.estimator.q = e.at("q").get<int>();
            if (e.contains("h")) s.estimator.h = e.at("h").get<double>();
            if (e.contains("b")) s.estimator.b = e.at("b").get<double>();
            if (e.contains("vce")) s.estimator.variance = parse_variance_method(e.at("vce").get<std::string>());
            s.estimator.level = e.value("level", 0.95);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorKind::InvalidSpec, std::string("malformed study spec: ") + ex.what());
    }
    true_parameters(s.dgp);
    return s;
}

namespace {

std::string num(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::string coverage_to_csv(const CoverageTable& t) {
    std::string out =
        "replications,failures,tau_true,coverage_conventional,se_conventional,coverage_rbc,se_rbc,"
        "mean_estimate,bias,rmse,mean_h,mean_length_conventional,mean_length_rbc\n";
    out += std::to_string(t.replications) + "," + std::to_string(t.failures) + "," + num(t.tau_true) + "," +
           num(t.coverage_conventional) + "," + num(t.se_conventional) + "," + num(t.coverage_rbc) + "," +
           num(t.se_rbc) + "," + num(t.mean_estimate) + "," + num(t.bias) + "," + num(t.rmse) + "," +
           num(t.mean_h) + "," + num(t.mean_length_conventional) + "," + num(t.mean_length_rbc) + "\n";
    return out;
}

std::string replications_to_csv(const CoverageTable& t) {
    std::string out = "index,seed,ok,estimate,h,conv_lower,conv_upper,rbc_lower,rbc_upper,covered_conv,covered_rbc\n";
    for (const auto& r : t.records) {
        out += std::to_string(r.index) + "," + std::to_string(r.seed) + "," + (r.ok ? "1" : "0") + "," +
               num(r.estimate) + "," + num(r.h) + "," + num(r.ci_conventional.lower) + "," +
               num(r.ci_conventional.upper) + "," + num(r.ci_rbc.lower) + "," + num(r.ci_rbc.upper) + "," +
               (r.covered_conventional ? "1" : "0") + "," + (r.covered_rbc ? "1" : "0") + "\n";
    }
    return out;
}

void to_json(nlohmann::ordered_json& j, const DGPSpec& s) {
    j = nlohmann::ordered_json::object();
    j["mu_below"] = s.mu_below;
    j["mu_above"] = s.mu_above;
    j["noise_sd"] = s.noise_sd;
    j["score_density"] = to_string(s.score_density);
    if (s.score_density == ScoreDensity::WithBunching) {
        j["bunching_share"] = s.bunching_share;
        j["bunching_band"] = s.bunching_band;
    }
    if (s.takeup) j["takeup"] = {s.takeup->first, s.takeup->second};
    j["n"] = s.n;
    j["cutoff"] = s.cutoff;
    j["covariates"] = s.n_covariates;
}

void to_json(nlohmann::ordered_json& j, const CoverageTable& t) {
    j = nlohmann::ordered_json::object();
    j["replications"] = t.replications;
    j["failures"] = t.failures;
    j["tau_true"] = t.tau_true;
    j["coverage_conventional"] = t.coverage_conventional;
    j["se_conventional"] = t.se_conventional;
    j["coverage_rbc"] = t.coverage_rbc;
    j["se_rbc"] = t.se_rbc;
    j["mean_estimate"] = t.mean_estimate;
    j["bias"] = t.bias;
    j["rmse"] = t.rmse;
    j["mean_h"] = t.mean_h;
    j["mean_length_conventional"] = t.mean_length_conventional;
    j["mean_length_rbc"] = t.mean_length_rbc;
}

}  // namespace rdd
