#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rdd/error.hpp"
#include "rdd/kernel_wls.hpp"

using namespace rdd;

namespace {

const Kernel kAllKernels[] = {Kernel::Triangular, Kernel::Uniform, Kernel::Epanechnikov};

std::string oracle_name(Kernel k) {
    return k == Kernel::Triangular ? "triangular" : k == Kernel::Uniform ? "uniform" : "epanechnikov";
}

double rel_err(double a, double b) { return std::fabs(a - b) / std::max(1.0, std::fabs(b)); }

}  // namespace

TEST_SUITE("kernel_wls") {
    TEST_CASE("kernel weights") {
        CHECK(kernel_weight(Kernel::Triangular, 0.0) == 1.0);
        CHECK(kernel_weight(Kernel::Triangular, 0.5) == 0.5);
        CHECK(kernel_weight(Kernel::Triangular, -0.5) == 0.5);
        CHECK(kernel_weight(Kernel::Uniform, 1.5) == 0.0);
        CHECK(kernel_weight(Kernel::Uniform, 1.0) == 1.0);
        CHECK(kernel_weight(Kernel::Epanechnikov, 0.0) == 0.75);
        for (Kernel k : kAllKernels)
            for (double u = -2.0; u <= 2.0; u += 0.125) {
                CHECK(kernel_weight(k, u) >= 0.0);
                CHECK(kernel_weight(k, u) == kernel_weight(k, -u));
                if (std::fabs(u) > 1.0) CHECK(kernel_weight(k, u) == 0.0);
            }
    }

    TEST_CASE("exact line recovered for every kernel") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const double c = 0.25;
        std::vector<double> x, y;
        for (int i = 0; i < 60; ++i) {
            x.push_back(u(rng));
            y.push_back(2.0 + 3.0 * (x.back() - c));
        }
        for (Kernel k : kAllKernels)
            for (Side s : {Side::BelowCutoff, Side::AtOrAboveCutoff}) {
                const LocalFit f = local_fit(x, y, c, s, 1, 0.7, k);
                CHECK(std::fabs(f.coefficients[0] - 2.0) <= 1e-9);
                CHECK(std::fabs(f.coefficients[1] - 3.0) <= 1e-9);
                for (double r : f.residuals) CHECK(std::fabs(r) <= 1e-9);
            }
    }

    TEST_CASE("five points, uniform kernel, matches normal equations") {
        const std::vector<double> x{0.1, 0.3, 0.35, 0.6, 0.9};
        const std::vector<double> y{1.2, 0.7, 1.9, 2.4, 2.0};
        const LocalFit f = local_fit(x, y, 0.0, Side::AtOrAboveCutoff, 1, 1.0, Kernel::Uniform);
        const auto o = oracle::wls_normal_equations(x, y, 0.0, true, 1, 1.0, "uniform");
        CHECK(rel_err(f.coefficients[0], o[0]) <= 1e-10);
        CHECK(rel_err(f.coefficients[1], o[1]) <= 1e-10);
    }

    TEST_CASE("constant outcome gives a flat fit") {
        const std::vector<double> x{-0.9, -0.5, -0.4, -0.2, -0.1, -0.05};
        const std::vector<double> y(x.size(), 7.0);
        for (int p : {0, 1, 2}) {
            const LocalFit f = local_fit(x, y, 0.0, Side::BelowCutoff, p, 1.0, Kernel::Triangular);
            CHECK(f.coefficients[0] == doctest::Approx(7.0).epsilon(1e-12));
            for (int j = 1; j <= p; ++j) CHECK(std::fabs(f.coefficients[j]) <= 1e-10);
        }
    }

    TEST_CASE("random instances match the normal-equations oracle") {
        std::mt19937_64 rng(2024);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::normal_distribution<double> z;
        int checked = 0;
        for (int inst = 0; inst < 1000; ++inst) {
            const int p = inst % 3;
            const Kernel k = kAllKernels[(inst / 3) % 3];
            const std::size_t n = 8 + static_cast<std::size_t>(inst % 23);
            std::vector<double> x(n), y(n);
            for (std::size_t i = 0; i < n; ++i) {
                x[i] = u(rng);
                y[i] = z(rng) + x[i] * x[i];
            }
            const double h = 0.6 + 0.4 * std::fabs(u(rng));
            const bool above = inst % 2 == 0;
            try {
                const LocalFit f =
                    local_fit(x, y, 0.0, above ? Side::AtOrAboveCutoff : Side::BelowCutoff, p, h, k);
                const auto o = oracle::wls_normal_equations(x, y, 0.0, above, p, h, oracle_name(k));
                for (int j = 0; j <= p; ++j) CHECK(rel_err(f.coefficients[j], o[j]) <= 1e-8);
                ++checked;
            } catch (const Error& e) {
                CHECK((e.kind() == ErrorKind::InsufficientObservations || e.kind() == ErrorKind::SingularDesign));
            }
        }
        CHECK(checked > 900);
    }

    TEST_CASE("polynomials of degree <= p are reproduced") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int p : {0, 1, 2, 3})
            for (Kernel k : kAllKernels) {
                std::vector<double> coef(p + 1);
                for (auto& c : coef) c = u(rng) * 4.0;
                std::vector<double> x, y;
                for (int i = 0; i < 80; ++i) {
                    x.push_back(u(rng));
                    y.push_back(oracle::poly(coef, x.back() - 0.1));
                }
                const double h = 0.3 + std::fabs(u(rng));
                const LocalFit f = local_fit(x, y, 0.1, Side::AtOrAboveCutoff, p, h, k);
                for (int j = 0; j <= p; ++j) CHECK(std::fabs(f.coefficients[j] - coef[j]) <= 1e-9);
            }
    }

    TEST_CASE("rows outside the bandwidth have no influence") {
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> u(0.0, 2.0);
        std::vector<double> x, y;
        for (int i = 0; i < 100; ++i) {
            x.push_back(u(rng));
            y.push_back(u(rng));
        }
        const LocalFit a = local_fit(x, y, 0.0, Side::AtOrAboveCutoff, 2, 0.8, Kernel::Triangular);
        auto y2 = y;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i] > 0.8) y2[i] += 1e6;
        const LocalFit b = local_fit(x, y2, 0.0, Side::AtOrAboveCutoff, 2, 0.8, Kernel::Triangular);
        CHECK(a.coefficients == b.coefficients);
    }

    TEST_CASE("affine equivariance in the outcome and scale invariance in the score") {
        std::mt19937_64 rng(10);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> x, y, ya, xs;
        for (int i = 0; i < 70; ++i) {
            x.push_back(u(rng));
            y.push_back(u(rng) + x.back());
            ya.push_back(-2.5 * y.back() + 4.0);
            xs.push_back(8.0 * x.back());
        }
        const LocalFit a = local_fit(x, y, 0.0, Side::BelowCutoff, 1, 0.9, Kernel::Epanechnikov);
        const LocalFit b = local_fit(x, ya, 0.0, Side::BelowCutoff, 1, 0.9, Kernel::Epanechnikov);
        CHECK(b.coefficients[0] == doctest::Approx(-2.5 * a.coefficients[0] + 4.0).epsilon(1e-12));
        CHECK(b.coefficients[1] == doctest::Approx(-2.5 * a.coefficients[1]).epsilon(1e-12));
        const LocalFit s = local_fit(xs, y, 0.0, Side::BelowCutoff, 1, 7.2, Kernel::Epanechnikov);
        CHECK(s.coefficients[0] == doctest::Approx(a.coefficients[0]).epsilon(1e-12));
        CHECK(s.weights == a.weights);
    }

    TEST_CASE("fit errors") {
        const std::vector<double> x{0.1, 0.2, 0.3, 0.4};
        const std::vector<double> y{1, 2, 3, 4};
        auto kind = [&](auto f) {
            try {
                f();
            } catch (const Error& e) {
                return e.kind();
            }
            return ErrorKind::InvalidInput;
        };
        CHECK(kind([&] { local_fit(x, y, 0.0, Side::AtOrAboveCutoff, 1, 0.15, Kernel::Uniform); }) ==
              ErrorKind::InsufficientObservations);
        const std::vector<double> tied{0.1, 0.1, 0.2, 0.2};
        CHECK(kind([&] { local_fit(tied, y, 0.0, Side::AtOrAboveCutoff, 1, 1.0, Kernel::Uniform); }) ==
              ErrorKind::SingularDesign);
        CHECK(kind([&] { local_fit(x, y, 0.0, Side::AtOrAboveCutoff, 1, 0.0, Kernel::Uniform); }) ==
              ErrorKind::BandwidthTooSmall);
        CHECK_NOTHROW(local_fit(x, y, 0.0, Side::AtOrAboveCutoff, 1, 1.0, Kernel::Uniform));
    }

    TEST_CASE("intercept variance: zero noise, scaling, and nearest-neighbour requirements") {
        std::vector<double> x, y;
        for (int i = 1; i <= 30; ++i) {
            x.push_back(i / 30.0);
            y.push_back(1.0 + 2.0 * x.back());
        }
        const LocalFit f = local_fit(x, y, 0.0, Side::AtOrAboveCutoff, 1, 1.0, Kernel::Triangular);
        for (auto m : {VarianceMethod::NearestNeighbor, VarianceMethod::PlugInResidual})
            CHECK(intercept_variance(f, x, y, m).intercept_variance <= 1e-25);

        std::mt19937_64 rng(1);
        std::normal_distribution<double> z;
        for (auto& v : y) v = z(rng);
        std::vector<double> y2(y);
        for (auto& v : y2) v *= 2.0;
        const LocalFit g = local_fit(x, y, 0.0, Side::AtOrAboveCutoff, 1, 1.0, Kernel::Triangular);
        const LocalFit g2 = refit(g, x, y2);
        for (auto m : {VarianceMethod::NearestNeighbor, VarianceMethod::PlugInResidual}) {
            const double v1 = intercept_variance(g, x, y, m).intercept_variance;
            const double v2 = intercept_variance(g2, x, y2, m).intercept_variance;
            CHECK(v1 >= 0.0);
            CHECK(v2 == doctest::Approx(4.0 * v1).epsilon(1e-13));
        }

        const std::vector<double> xs{0.1, 0.2, 0.3};
        const std::vector<double> ys{1.0, 0.0, 2.0};
        const LocalFit small = local_fit(xs, ys, 0.0, Side::AtOrAboveCutoff, 1, 1.0, Kernel::Uniform);
        try {
            intercept_variance(small, xs, ys, VarianceMethod::NearestNeighbor);
            FAIL("expected InsufficientObservations");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::InsufficientObservations);
        }
    }

    TEST_CASE("p = 0 uniform fit: variance estimate tracks the sample-mean variance") {
        std::mt19937_64 rng(77);
        std::normal_distribution<double> z;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        constexpr int reps = 10000;
        constexpr int n = 40;
        double mean_v = 0.0, s = 0.0, ss = 0.0;
        std::vector<double> x(n), y(n);
        for (int r = 0; r < reps; ++r) {
            for (int i = 0; i < n; ++i) {
                x[i] = u(rng);
                y[i] = z(rng);
            }
            const LocalFit f = local_fit(x, y, 0.0, Side::AtOrAboveCutoff, 0, 1.0, Kernel::Uniform);
            mean_v += intercept_variance(f, x, y, VarianceMethod::NearestNeighbor).intercept_variance;
            s += f.coefficients[0];
            ss += f.coefficients[0] * f.coefficients[0];
        }
        mean_v /= reps;
        const double emp = ss / reps - (s / reps) * (s / reps);
        // Monte Carlo sd of mean_v is about 1/n * sqrt(2/n)/sqrt(reps) ~ 0.4% of 1/n.
        CHECK(mean_v == doctest::Approx(1.0 / n).epsilon(0.02));
        CHECK(emp == doctest::Approx(1.0 / n).epsilon(0.05));
    }
}
