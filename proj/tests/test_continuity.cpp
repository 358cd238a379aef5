#include <doctest.h>

#include <cmath>
#include <random>

#include "rdd/continuity.hpp"
#include "rdd/dgp.hpp"
#include "rdd/error.hpp"

using namespace rdd;

namespace {

EstimationSpec fixed(double h) {
    EstimationSpec s;
    s.h = h;
    return s;
}

double half_width(const Interval& ci) { return 0.5 * ci.width(); }

}  // namespace

TEST_SUITE("continuity") {
    TEST_CASE("constant regression functions give the jump exactly") {
        DGPSpec d;
        d.mu_below = {0.0};
        d.mu_above = {0.5};
        d.n = 400;
        d.seed = 3;
        const Generated g = generate(d);
        const RDResult r = estimate_sharp(g.data, RDDesign{}, fixed(0.6));
        CHECK(r.point == 0.5);
        CHECK(r.bias_correction == 0.0);
        CHECK(r.variance_conventional < 1e-20);
        CHECK(covers(r.ci_rbc, 0.5));
    }

    TEST_CASE("result invariants") {
        const Generated g = generate(DGPSpec::curved(3000, 8));
        const RDResult r = estimate_sharp(g.data, RDDesign{}, EstimationSpec{});
        const double z = 1.96;  // fixed default critical value at level 0.95
        CHECK(r.ci_rbc.center() == doctest::Approx(r.point - r.bias_correction).epsilon(1e-12));
        CHECK(half_width(r.ci_rbc) ==
              doctest::Approx(z * std::sqrt(r.variance_conventional + r.variance_rbc_extra)).epsilon(1e-12));
        CHECK(r.ci_conventional.center() == doctest::Approx(r.point).epsilon(1e-12));
        CHECK(r.variance_rbc_extra >= 0.0);
        CHECK(half_width(r.ci_rbc) >= half_width(r.ci_conventional));
        CHECK(r.n_minus_h + r.n_plus_h <= g.data.size());
        CHECK(r.p_rbc >= 0.0);
        CHECK(r.p_rbc <= 1.0);
        std::size_t below = 0, above = 0;
        for (double x : g.data.score()) {
            if (x >= -r.h && x < 0.0) ++below;
            if (x >= 0.0 && x <= r.h) ++above;
        }
        CHECK(r.n_minus_h == below);
        CHECK(r.n_plus_h == above);
        CHECK(r.se_robust() >= r.se_conventional());
    }

    TEST_CASE("sign flip negates the point estimate") {
        const Generated g = generate(DGPSpec::curved(2000, 17));
        std::vector<double> xf(g.data.score());
        for (auto& v : xf) v = -v;
        const RDDataset flipped(xf, g.data.outcome());
        const RDDesign original{0.25, TreatedSide::AtOrAbove, Compliance::Sharp};
        const RDDesign mirrored{-0.25, TreatedSide::Below, Compliance::Sharp};
        for (const bool select : {false, true}) {
            EstimationSpec s;
            if (!select) s.h = 0.4;
            const RDResult a = estimate_sharp(g.data, original, s);
            const RDResult b = estimate_sharp(flipped, mirrored, s);
            CHECK(b.point == doctest::Approx(-a.point).epsilon(1e-12));
            CHECK(b.h == doctest::Approx(a.h).epsilon(1e-12));
            CHECK(b.variance_conventional == doctest::Approx(a.variance_conventional).epsilon(1e-9));
        }
    }

    TEST_CASE("outcome affine equivariance") {
        const Generated g = generate(DGPSpec::curved(2000, 23));
        std::vector<double> y2(g.data.outcome());
        const double a = -3.0, c = 5.0;
        for (auto& v : y2) v = a * v + c;
        EstimationSpec s = fixed(0.35);
        const RDResult r = estimate_sharp(g.data, RDDesign{}, s);
        const RDResult t = estimate_sharp(g.data.with_outcome(y2), RDDesign{}, s);
        CHECK(t.point == doctest::Approx(a * r.point).epsilon(1e-9));
        CHECK(t.bias_correction == doctest::Approx(a * r.bias_correction).epsilon(1e-9));
        CHECK(t.ci_rbc.lower == doctest::Approx(a * r.ci_rbc.upper).epsilon(1e-9));
        CHECK(t.ci_rbc.upper == doctest::Approx(a * r.ci_rbc.lower).epsilon(1e-9));
        CHECK(t.ci_conventional.lower == doctest::Approx(a * r.ci_conventional.upper).epsilon(1e-9));
    }

    TEST_CASE("undersmoothing shrinks the bias correction") {
        DGPSpec d;
        d.mu_below = {0.2, 0.5, -1.0, 2.0};
        d.mu_above = {0.7, 0.5, 1.5, -2.0};
        d.n = 20000;
        d.seed = 6;
        const Generated g = generate(d);
        double prev = INFINITY;
        for (double h : {0.8, 0.4, 0.2, 0.1, 0.05}) {
            const RDResult r = estimate_sharp(g.data, RDDesign{}, fixed(h));
            CHECK(std::fabs(r.bias_correction) < prev);
            prev = std::fabs(r.bias_correction);
        }
        CHECK(prev < 1e-3);
    }

    TEST_CASE("errors") {
        const Generated g = generate(DGPSpec::curved(500, 1));
        EstimationSpec s = fixed(1e-6);
        CHECK_THROWS_AS(estimate_sharp(g.data, RDDesign{}, s), Error);
        CHECK_THROWS_AS(estimate_fuzzy(g.data, RDDesign{0.0, TreatedSide::AtOrAbove, Compliance::Fuzzy}, fixed(0.5)),
                        Error);
        std::vector<double> d(g.data.size(), 1.0);
        const RDDataset flat(g.data.score(), g.data.outcome(), d);
        try {
            estimate_fuzzy(flat, RDDesign{0.0, TreatedSide::AtOrAbove, Compliance::Fuzzy}, fixed(0.5));
            FAIL("expected ZeroFirstStage");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::ZeroFirstStage);
        }
    }

    TEST_CASE("fuzzy ratio identity and common bandwidths") {
        DGPSpec d = DGPSpec::curved(5000, 19);
        d.takeup = std::make_pair(0.1, 0.8);
        const Generated g = generate(d);
        const RDDesign design{0.0, TreatedSide::AtOrAbove, Compliance::Fuzzy};
        const FuzzyResult f = estimate_fuzzy(g.data, design, EstimationSpec{});
        CHECK(f.fuzzy.point * f.first_stage.point == doctest::Approx(f.itt.point).epsilon(1e-12));
        CHECK(f.first_stage.h == f.itt.h);
        CHECK(f.first_stage.b == f.itt.b);
        CHECK(f.fuzzy.h == f.itt.h);
        CHECK(f.first_stage.estimand == Estimand::FirstStage);
        CHECK(f.fuzzy.estimand == Estimand::FuzzyRatio);
        CHECK(f.first_stage_f > 10.0);
        CHECK_FALSE(f.weak_first_stage);
    }

    TEST_CASE("perfect compliance embeds the sharp design") {
        const Generated g = generate(DGPSpec::curved(3000, 29));
        std::vector<double> d;
        for (double x : g.data.score()) d.push_back(x >= 0.0 ? 1.0 : 0.0);
        const RDDataset data(g.data.score(), g.data.outcome(), d);
        const RDDesign design{0.0, TreatedSide::AtOrAbove, Compliance::Fuzzy};
        const FuzzyResult f = estimate_fuzzy(data, design, fixed(0.4));
        CHECK(f.first_stage.point == 1.0);
        CHECK(f.fuzzy.point == doctest::Approx(f.itt.point).epsilon(1e-12));
        const RDResult s = estimate_sharp(data, RDDesign{}, fixed(0.4));
        CHECK(f.itt.point == s.point);
    }

    TEST_CASE("fuzzy ratio is unbiased for the complier effect") {
        DGPSpec d;
        d.mu_below = {0.5, 0.8};
        d.mu_above = {1.0, 0.8};
        d.noise_sd = 0.1295;
        d.takeup = std::make_pair(0.2, 0.8);
        d.n = 50000;
        const DGPTruth truth = true_parameters(d);
        REQUIRE(*truth.tau_frd == doctest::Approx(0.5));
        const CoverageTable t = coverage_study(d, 500, EstimationSpec{}, 2024);
        CHECK(t.failures == 0);
        CHECK(std::fabs(t.mean_estimate - 0.5) < 0.02);
    }
}
