#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "oracles.hpp"
#include "rdd/dgp.hpp"
#include "rdd/error.hpp"

using namespace rdd;

namespace {

bool identical(const RDDataset& a, const RDDataset& b) {
    if (a.score() != b.score() || a.outcome() != b.outcome() || a.has_received() != b.has_received()) return false;
    if (a.has_received() && a.received() != b.received()) return false;
    if (a.covariates().size() != b.covariates().size()) return false;
    for (std::size_t k = 0; k < a.covariates().size(); ++k)
        if (a.covariates()[k].values != b.covariates()[k].values) return false;
    return true;
}

// Conditional smoothing bias at the selected h: the estimator applied to the
// noiseless regression means.
double conditional_bias(const DGPSpec& spec) {
    const Generated g = generate(spec);
    const RDResult noisy = estimate_sharp(g.data, RDDesign{}, EstimationSpec{});
    std::vector<double> mu;
    for (double x : g.data.score()) mu.push_back(oracle::poly(x >= 0.0 ? spec.mu_above : spec.mu_below, x));
    EstimationSpec at;
    at.h = noisy.h;
    at.b = noisy.b;
    return estimate_sharp(g.data.with_outcome(mu), RDDesign{}, at).point - g.truth.tau_srd;
}

}  // namespace

TEST_SUITE("dgp") {
    TEST_CASE("generation is deterministic") {
        DGPSpec d = DGPSpec::curved(700, 123);
        d.n_covariates = 2;
        d.takeup = std::make_pair(0.1, 0.9);
        CHECK(identical(generate(d).data, generate(d).data));
        DGPSpec other = d;
        other.seed = 124;
        CHECK_FALSE(identical(generate(d).data, generate(other).data));
        const Generated g = generate(d);
        CHECK(g.data.size() == 700);
        CHECK(g.data.covariates()[1].name == "z2");
        for (double x : g.data.score()) {
            CHECK(x >= -1.0);
            CHECK(x <= 1.0);
        }
    }

    TEST_CASE("true parameters in closed form") {
        DGPSpec d;
        d.mu_below = {0.0};
        d.mu_above = {0.5};
        CHECK(true_parameters(d).tau_srd == 0.5);
        CHECK(true_parameters(DGPSpec::curved()).tau_srd == doctest::Approx(0.04).epsilon(1e-12));
        CHECK(true_parameters(DGPSpec::linear()).tau_srd == doctest::Approx(0.2).epsilon(1e-12));
        DGPSpec f = DGPSpec::linear();
        f.takeup = std::make_pair(0.2, 0.7);
        const DGPTruth t = true_parameters(f);
        CHECK(*t.first_stage == doctest::Approx(0.5));
        CHECK(*t.tau_frd == doctest::Approx(0.2));
        CHECK(t.tau_srd == doctest::Approx(0.1));
    }

    TEST_CASE("null DGP estimates zero") {
        DGPSpec d;
        d.mu_below = {0.3, -0.2};
        d.mu_above = {0.3, -0.2};
        d.n = 1500;
        d.seed = 5;
        const Generated g = generate(d);
        CHECK(g.truth.tau_srd == 0.0);
        EstimationSpec s;
        s.h = 0.4;
        CHECK(std::fabs(estimate_sharp(g.data, RDDesign{}, s).point) <= 1e-12);
    }

    TEST_CASE("invalid specs") {
        DGPSpec d = DGPSpec::linear();
        d.noise_sd = -1.0;
        CHECK_THROWS_AS(generate(d), Error);
        d = DGPSpec::linear();
        d.takeup = std::make_pair(0.4, 0.4);
        CHECK_THROWS_AS(generate(d), Error);
        try {
            coverage_study(DGPSpec::linear(), 99, EstimationSpec{}, 1);
            FAIL("expected InvalidSpec");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::InvalidSpec);
        }
    }

    TEST_CASE("noiseless DGP covers always") {
        DGPSpec d = DGPSpec::linear(500);
        d.noise_sd = 0.0;
        const CoverageTable t = coverage_study(d, 100, EstimationSpec{}, 3);
        CHECK(t.failures == 0);
        CHECK(t.coverage_conventional == 1.0);
        CHECK(t.coverage_rbc == 1.0);
    }

    TEST_CASE("linear DGP gives nominal conventional coverage") {
        // With the local model exact there is no bias: at a fixed h the
        // conventional interval is exact up to variance estimation.
        EstimationSpec fixed;
        fixed.h = 0.6;
        const CoverageTable t = coverage_study(DGPSpec::linear(1000), 2000, fixed, 17);
        CHECK(t.failures == 0);
        CHECK(std::fabs(t.coverage_conventional - 0.95) <= 3.0 * std::sqrt(0.95 * 0.05 / 2000));
        CHECK(t.se_conventional ==
              doctest::Approx(std::sqrt(t.coverage_conventional * (1 - t.coverage_conventional) / 2000)));
        // A data-driven h reacts to noise that mimics curvature, which costs
        // one to two points of coverage.
        const CoverageTable s = coverage_study(DGPSpec::linear(1000), 2000, EstimationSpec{}, 17);
        MESSAGE("selected-h conventional coverage " << s.coverage_conventional);
        CHECK(s.coverage_conventional >= 0.92);
        CHECK(s.coverage_conventional <= 0.96);
    }

    TEST_CASE("coverage table is reproducible and independent of worker count") {
        ::setenv("RDD_THREADS", "1", 1);
        const CoverageTable a = coverage_study(DGPSpec::curved(400), 120, EstimationSpec{}, 77);
        ::setenv("RDD_THREADS", "3", 1);
        const CoverageTable b = coverage_study(DGPSpec::curved(400), 120, EstimationSpec{}, 77);
        ::unsetenv("RDD_THREADS");
        CHECK(coverage_to_csv(a) == coverage_to_csv(b));
        CHECK(replications_to_csv(a) == replications_to_csv(b));
        REQUIRE(a.records.size() == 120);
        CHECK(a.records[5].seed == derive_seed(77, 5));
        const Generated g = generate(DGPSpec::curved(400, derive_seed(77, 5)));
        CHECK(a.records[5].estimate == estimate_sharp(g.data, RDDesign{}, EstimationSpec{}).point);
    }

    TEST_CASE("smoothing bias shrinks at the n^(-2/5) rate") {
        // Third-derivative terms of the curved design still matter below
        // n ~ 10^4, so the rate is read off larger samples.
        const std::vector<std::size_t> ns{16000, 64000, 256000};
        std::vector<double> lx, ly;
        for (std::size_t n : ns) {
            double total = 0.0;
            const int reps = 40;
            for (int r = 0; r < reps; ++r) total += conditional_bias(DGPSpec::curved(n, derive_seed(n, r)));
            lx.push_back(std::log(static_cast<double>(n)));
            ly.push_back(std::log(std::fabs(total / reps)));
        }
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            mx += lx[i] / lx.size();
            my += ly[i] / ly.size();
        }
        double sxy = 0, sxx = 0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            sxy += (lx[i] - mx) * (ly[i] - my);
            sxx += (lx[i] - mx) * (lx[i] - mx);
        }
        const double slope = sxy / sxx;
        MESSAGE("bias slope " << slope);
        CHECK(slope <= -0.4 * 0.75);
        CHECK(slope >= -0.4 * 1.25);
    }

    TEST_CASE("study specs") {
        const auto j = nlohmann::json::parse(R"({
            "dgp": {"mu_below": [0.1, 1.0], "mu_above": [0.6, 1.0], "noise_sd": 0.2,
                    "score_density": "uniform", "covariates": 1, "takeup": [0.1, 0.9]},
            "n": 800, "replications": 150, "seed": 9,
            "estimator": {"kernel": "uniform", "p": 1, "vce": "plugin", "level": 0.9}})");
        const StudySpec s = parse_study(j);
        CHECK(s.dgp.n == 800);
        CHECK(s.replications == 150);
        CHECK(s.seed == 9);
        CHECK(s.dgp.n_covariates == 1);
        CHECK(s.dgp.takeup->second == 0.9);
        CHECK(s.estimator.kernel == Kernel::Uniform);
        CHECK(s.estimator.variance == VarianceMethod::PlugInResidual);
        CHECK(s.estimator.level == 0.9);
        const StudySpec c = parse_study(nlohmann::json::parse(R"({"dgp": "curved", "n": 300})"));
        CHECK(c.dgp.noise_sd == 0.1295);
        CHECK(c.dgp.n == 300);
        CHECK_THROWS_AS(parse_study(nlohmann::json::parse(R"({"dgp": "wiggly"})")), Error);
    }
}
