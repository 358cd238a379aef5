#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>

#include "oracles.hpp"
#include "rdd/dgp.hpp"
#include "rdd/error.hpp"
#include "rdd/locrand.hpp"

using namespace rdd;

namespace {

struct Sample {
    std::vector<double> v;
    std::vector<std::uint8_t> above;
};

Sample random_sample(std::mt19937_64& rng, std::size_t n, bool integer_valued) {
    Sample s;
    std::normal_distribution<double> z;
    std::uniform_int_distribution<int> small(0, 3);
    std::uniform_int_distribution<std::size_t> split(1, n - 1);
    const std::size_t n1 = split(rng);
    for (std::size_t i = 0; i < n; ++i) {
        s.v.push_back(integer_valued ? small(rng) : z(rng));
        s.above.push_back(i < n1 ? 1 : 0);
    }
    std::shuffle(s.above.begin(), s.above.end(), rng);
    return s;
}

double oracle_p(const Sample& s) {
    std::uint32_t mask = 0;
    for (std::size_t i = 0; i < s.v.size(); ++i)
        if (s.above[i]) mask |= 1U << i;
    const double t = oracle::diff_means(s.v, mask);
    return oracle::brute_force_fisher(s.v, s.above, tie_tolerance(s.v, t));
}

void set_threads(const char* n) { ::setenv("RDD_THREADS", n, 1); }

}  // namespace

TEST_SUITE("locrand") {
    TEST_CASE("six units split low and high") {
        const std::vector<double> v{1, 2, 3, 4, 5, 6};
        const std::vector<std::uint8_t> above{0, 0, 0, 1, 1, 1};
        const RandInfResult r = fisher_test(v, above, RandOptions{});
        CHECK(r.method == RandMethod::FisherExact);
        CHECK(r.n_permutations == 20);
        CHECK(r.statistic == 3.0);
        CHECK(r.p_value == 0.1);
        CHECK(r.p_value == oracle_p({v, above}));
    }

    TEST_CASE("exact enumeration matches the brute-force oracle") {
        std::mt19937_64 rng(77);
        for (int rep = 0; rep < 400; ++rep) {
            const std::size_t n = 2 + static_cast<std::size_t>(rep % 19);
            const Sample s = random_sample(rng, n, rep % 2 == 0);
            RandOptions exact;
            exact.exact_limit = 200000;  // C(20, 10) = 184756
            const RandInfResult r = fisher_test(s.v, s.above, exact);
            REQUIRE(r.method == RandMethod::FisherExact);
            CHECK(r.p_value == oracle_p(s));
            CHECK(r.p_value >= 1.0 / static_cast<double>(r.n_permutations));
        }
    }

    TEST_CASE("constant values give p = 1") {
        const std::vector<double> v(12, 4.2);
        std::vector<std::uint8_t> above(12, 0);
        for (int i = 0; i < 5; ++i) above[i] = 1;
        CHECK(fisher_test(v, above, RandOptions{}).p_value == 1.0);
        RandOptions mc;
        mc.exact_limit = 0;
        CHECK(fisher_test(v, above, mc).p_value == 1.0);
    }

    TEST_CASE("empty side") {
        const std::vector<double> v{1, 2, 3};
        const std::vector<std::uint8_t> above{1, 1, 1};
        try {
            fisher_test(v, above, RandOptions{});
            FAIL("expected EmptySide");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::EmptySide);
        }
    }

    TEST_CASE("Monte Carlo agrees with exact enumeration") {
        std::mt19937_64 rng(5);
        for (int rep = 0; rep < 4; ++rep) {
            Sample s;
            std::normal_distribution<double> z;
            for (int i = 0; i < 18; ++i) {
                s.above.push_back(i < 9 ? 1 : 0);
                s.v.push_back(z(rng) + (i < 9 ? 0.4 * rep : 0.0));
            }
            const double exact = fisher_test(s.v, s.above, RandOptions{}).p_value;
            RandOptions mc;
            mc.exact_limit = 0;
            mc.reps = 50000;
            mc.seed = 1000 + rep;
            const RandInfResult r = fisher_test(s.v, s.above, mc);
            CHECK(r.method == RandMethod::FisherMonteCarlo);
            const double se = std::sqrt(exact * (1.0 - exact) / 50000.0);
            CHECK(std::fabs(r.p_value - exact) <= 3.0 * se + 1.0 / 50001.0);
        }
    }

    TEST_CASE("Monte Carlo is deterministic and independent of worker count") {
        std::mt19937_64 rng(9);
        const Sample s = random_sample(rng, 40, false);
        RandOptions mc;
        mc.reps = 3000;
        mc.seed = 42;
        set_threads("1");
        const RandInfResult a = fisher_test(s.v, s.above, mc);
        set_threads("4");
        const RandInfResult b = fisher_test(s.v, s.above, mc);
        const RandInfResult c = fisher_test(s.v, s.above, mc);
        ::unsetenv("RDD_THREADS");
        CHECK(a.method == RandMethod::FisherMonteCarlo);
        CHECK(a.p_value == b.p_value);
        CHECK(b.p_value == c.p_value);
        CHECK(a.n_permutations == 3001);
        mc.seed = 43;
        CHECK(fisher_test(s.v, s.above, mc).seed == 43);
    }

    TEST_CASE("sharp null rejection rate is at most alpha") {
        std::mt19937_64 rng(2718);
        std::normal_distribution<double> z;
        int rejections = 0;
        const int reps = 2000;
        for (int r = 0; r < reps; ++r) {
            Sample s;
            for (int i = 0; i < 16; ++i) {
                s.v.push_back(z(rng));
                s.above.push_back(i % 2 == 0 ? 1 : 0);
            }
            if (fisher_test(s.v, s.above, RandOptions{}).p_value <= 0.05) ++rejections;
        }
        const double rate = static_cast<double>(rejections) / reps;
        CHECK(rate <= 0.05 + 3.0 * std::sqrt(0.05 * 0.95 / reps));
    }

    TEST_CASE("randomization confidence interval") {
        std::vector<double> y;
        std::vector<std::uint8_t> above;
        for (int i = 0; i < 16; ++i) {
            above.push_back(i >= 8 ? 1 : 0);
            y.push_back(i >= 8 ? 2.3 : 2.0);
        }
        const std::vector<double> shift(above.begin(), above.end());
        const auto grid = make_grid(-1.0, 1.0, 0.01);
        const FisherCI ci = fisher_ci(y, above, shift, grid, 0.05, RandOptions{});
        REQUIRE(ci.ci);
        CHECK(ci.ci->contains(0.3));

        std::mt19937_64 rng(31);
        std::normal_distribution<double> z;
        for (int i = 0; i < 16; ++i) y[i] = z(rng) + (above[i] ? 0.8 : 0.0);
        RandOptions opt;
        opt.seed = 8;
        const FisherCI wide = fisher_ci(y, above, shift, make_grid(-2.0, 3.0, 0.01), 0.05, opt);
        const FisherCI narrow = fisher_ci(y, above, shift, make_grid(-2.0, 3.0, 0.01), 0.10, opt);
        REQUIRE(wide.ci);
        REQUIRE(narrow.ci);
        CHECK(wide.ci->lower <= narrow.ci->lower);
        CHECK(wide.ci->upper >= narrow.ci->upper);
        CHECK_THROWS_AS(fisher_ci(y, above, shift, std::vector<double>{}, 0.05, opt), Error);
    }

    TEST_CASE("super-population difference in means") {
        const std::vector<double> y{2, 4, 3, 6, 4, 5};
        const std::vector<std::uint8_t> above{0, 0, 0, 1, 1, 1};
        const SuperPopResult r = superpop_estimate(y, above, std::nullopt);
        CHECK(r.outcome.estimate == 2.0);
        CHECK(r.outcome.ci.center() == doctest::Approx(2.0));
        const double se = std::sqrt(1.0 / 3.0 + 1.0 / 3.0);
        CHECK(r.outcome.std_error == doctest::Approx(se).epsilon(1e-12));
        CHECK_FALSE(r.ratio);

        const std::vector<double> d(above.begin(), above.end());
        const SuperPopResult f = superpop_estimate(y, above, std::span<const double>(d));
        REQUIRE(f.ratio);
        CHECK(f.ratio->estimate == f.outcome.estimate);
        CHECK(f.received->estimate == 1.0);
    }

    TEST_CASE("window selection trace") {
        DGPSpec d = DGPSpec::linear(1000, 14);
        d.n_covariates = 2;
        const Generated g = generate(d);
        WindowSelectOptions opt;
        opt.wstep = 0.05;
        opt.rand.reps = 500;
        const auto t = select_window(g.data, RDDesign{}, {"z1", "z2"}, opt);
        CHECK(t.growth_used == WindowGrowth::Symmetric);
        REQUIRE(!t.candidate_windows.empty());
        for (std::size_t k = 1; k < t.candidate_windows.size(); ++k) {
            CHECK(t.candidate_windows[k].window.lower < t.candidate_windows[k - 1].window.lower);
            CHECK(t.candidate_windows[k].window.upper > t.candidate_windows[k - 1].window.upper);
        }
        const auto& first = t.candidate_windows.front().window;
        CHECK(first.n_minus >= 10);
        CHECK(first.n_plus >= 10);
        std::size_t passed = 0;
        while (passed < t.candidate_windows.size() && t.candidate_windows[passed].min_p_value >= opt.threshold)
            ++passed;
        if (passed == 0) {
            CHECK_FALSE(t.balanced);
        } else {
            CHECK(t.balanced);
            CHECK(t.chosen.upper == t.candidate_windows[passed - 1].window.upper);
        }
        const auto again = select_window(g.data, RDDesign{}, {"z1", "z2"}, opt);
        CHECK(again.chosen.upper == t.chosen.upper);
    }

    TEST_CASE("score-correlated covariate is caught") {
        DGPSpec d = DGPSpec::linear(2000, 3);
        const Generated g = generate(d);
        const RDDataset data(g.data.score(), g.data.outcome(), std::nullopt,
                             {Covariate{"x_copy", g.data.score()}});
        WindowSelectOptions opt;
        opt.wstep = 0.05;
        opt.rand.reps = 500;
        const auto t = select_window(data, RDDesign{}, {"x_copy"}, opt);
        CHECK(t.candidate_windows.size() < opt.max_windows);
        CHECK(t.chosen.upper < 0.5);
    }

    TEST_CASE("noise covariates: stopping governed by the threshold") {
        // Under independence the first window fails at roughly the threshold
        // rate; with a small threshold the search reaches the outermost window.
        const int reps = 200;
        int first_fail = 0, outermost_small = 0;
        for (int r = 0; r < reps; ++r) {
            DGPSpec d = DGPSpec::linear(600, derive_seed(99, r));
            d.n_covariates = 1;
            const Generated g = generate(d);
            WindowSelectOptions opt;
            opt.wstep = 0.05;
            opt.rand.reps = 400;
            opt.rand.seed = r;
            const auto t = select_window(g.data, RDDesign{}, {"z1"}, opt);
            if (t.candidate_windows.front().min_p_value < opt.threshold) ++first_fail;
            opt.threshold = 0.005;
            const auto s = select_window(g.data, RDDesign{}, {"z1"}, opt);
            if (s.chosen.upper == s.candidate_windows.back().window.upper && s.balanced &&
                s.candidate_windows.back().min_p_value >= opt.threshold)
                ++outermost_small;
        }
        const double fail_rate = static_cast<double>(first_fail) / reps;
        CHECK(std::fabs(fail_rate - 0.15) <= 3.0 * std::sqrt(0.15 * 0.85 / reps));
        CHECK(static_cast<double>(outermost_small) / reps >= 0.85);
    }
}
