#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "rdd/dgp.hpp"
#include "rdd/error.hpp"
#include "rdd/rdplot.hpp"

using namespace rdd;

namespace {

double plotted_mass(const RDPlotData& p) {
    double s = 0.0;
    for (const auto& b : p.bins) s += static_cast<double>(b.count) * b.mean;
    return s;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_SUITE("rdplot") {
    TEST_CASE("singleton bins reproduce raw outcomes") {
        const std::vector<double> x{-0.4, -0.3, -0.1, 0.0, 0.2, 0.5};
        const std::vector<double> y{1.5, -2.0, 0.25, 7.0, 3.0, 4.5};
        RDPlotOptions opt;
        opt.binning = Binning::MassPoints;
        opt.p_global = 1;
        const RDPlotData p = build_rdplot(x, y, 0.0, opt);
        REQUIRE(p.bins.size() == 6);
        for (std::size_t j = 0; j < 6; ++j) {
            CHECK(p.bins[j].count == 1);
            CHECK(p.bins[j].mean == y[j]);
            CHECK(p.bins[j].sd == 0.0);
            CHECK(p.bins[j].above == (x[j] >= 0.0));
        }
    }

    TEST_CASE("mass points: fifty dots of seven rows") {
        std::vector<double> x, y;
        std::mt19937_64 rng(3);
        std::normal_distribution<double> z;
        for (int w = -25; w <= 24; ++w)
            for (int r = 0; r < 7; ++r) {
                x.push_back(w);
                y.push_back(0.1 * w + z(rng));
            }
        const RDPlotData p = build_rdplot(x, y, 0.0);
        CHECK(p.binning == Binning::MassPoints);
        REQUIRE(p.bins.size() == 50);
        for (const auto& b : p.bins) CHECK(b.count == 7);
    }

    TEST_CASE("mass conservation and cutoff separation for every binning") {
        const Generated g = generate(DGPSpec::curved(3000, 44));
        const auto& x = g.data.score();
        const auto& y = g.data.outcome();
        const double total = std::accumulate(y.begin(), y.end(), 0.0);
        for (Binning b : {Binning::Auto, Binning::EvenlySpaced, Binning::QuantileSpaced, Binning::MassPoints}) {
            RDPlotOptions opt;
            opt.binning = b;
            opt.bins_per_side = 17;
            const RDPlotData p = build_rdplot(x, y, 0.0, opt);
            CHECK(std::fabs(plotted_mass(p) - total) <= 1e-9 * std::max(1.0, std::fabs(total)));
            std::size_t n = 0;
            for (const auto& bin : p.bins) {
                n += bin.count;
                if (bin.above)
                    CHECK(bin.lower >= 0.0);
                else
                    CHECK(bin.upper <= 0.0);
            }
            CHECK(n == x.size());
            for (std::size_t j = 1; j < p.bins.size(); ++j) CHECK(p.bins[j].lower >= p.bins[j - 1].upper);
        }
        RDPlotOptions es;
        es.binning = Binning::EvenlySpaced;
        es.bins_per_side = 17;
        CHECK(build_rdplot(x, y, 0.0, es).bins.size() <= 34);
    }

    TEST_CASE("overlay fidelity on polynomial data") {
        const std::vector<double> below{1.0, 0.5, -2.0, 0.3, 1.1};
        const std::vector<double> above{2.0, -1.0, 0.7, 2.5, -0.4};
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> x(2000), y(2000);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = u(rng);
            y[i] = oracle::poly(x[i] >= 0.0 ? above : below, x[i]);
        }
        const RDPlotData p = build_rdplot(x, y, 0.0);
        REQUIRE(p.fit_below);
        REQUIRE(p.fit_above);
        for (const auto& b : p.bins) {
            const auto& fit = b.above ? *p.fit_above : *p.fit_below;
            const double truth = oracle::poly(b.above ? above : below, b.midpoint);
            CHECK(std::fabs(oracle::poly(fit, b.midpoint - p.cutoff) - truth) <= 1e-6);
        }
    }

    TEST_CASE("overlay omitted with too few distinct values") {
        const std::vector<double> x{-2, -2, -1, -1, 0, 1, 2, 3, 4, 5};
        const std::vector<double> y{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
        const RDPlotData p = build_rdplot(x, y, 0.0);
        CHECK_FALSE(p.fit_below);
        CHECK(p.fit_above);
        CHECK_FALSE(p.flags.empty());
    }

    TEST_CASE("empty side") {
        const std::vector<double> x{1, 2, 3};
        const std::vector<double> y{1, 2, 3};
        try {
            build_rdplot(x, y, 0.0);
            FAIL("expected TooFewObservations");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::TooFewObservations);
        }
    }

    TEST_CASE("bin confidence intervals") {
        const Generated g = generate(DGPSpec::curved(500, 1));
        RDPlotOptions opt;
        opt.bin_ci = true;
        const RDPlotData p = build_rdplot(g.data.score(), g.data.outcome(), 0.0, opt);
        for (const auto& b : p.bins) {
            if (b.count < 2) continue;
            REQUIRE(b.ci);
            CHECK(b.ci->center() == doctest::Approx(b.mean));
            CHECK(0.5 * b.ci->width() == doctest::Approx(1.96 * b.sd / std::sqrt(static_cast<double>(b.count))));
        }
    }

    TEST_CASE("histogram of identical scores") {
        const std::vector<double> x(25, 3.7);
        const Histogram h = score_histogram(x, 0.0);
        std::size_t nonzero = 0;
        for (const auto& b : h.bins)
            if (b.count > 0) {
                ++nonzero;
                CHECK(b.count == 25);
            }
        CHECK(nonzero == 1);
        CHECK(h.n_in_range == 25);
    }

    TEST_CASE("histogram conservation and alignment") {
        const Generated g = generate(DGPSpec::linear(5000, 9));
        const Histogram h = score_histogram(g.data.score(), 0.0, 0.2);
        CHECK(h.bins.size() == 10);
        std::size_t total = 0;
        for (const auto& b : h.bins) {
            total += b.count;
            const double k = b.lower / 0.2;
            CHECK(std::fabs(k - std::round(k)) < 1e-9);
            CHECK((b.upper <= 0.0 || b.lower >= 0.0));
        }
        CHECK(total == 5000);
    }

    TEST_CASE("zoomed histogram is a restriction of the full one") {
        std::vector<double> x;
        std::mt19937_64 rng(12);
        std::uniform_int_distribution<int> cd4(0, 1500);
        for (int i = 0; i < 5000; ++i) x.push_back(cd4(rng) * 0.5);
        const Histogram full = score_histogram(x, 350.0, 1.0);
        const Histogram zoom = score_histogram(x, 350.0, 1.0, std::make_pair(345.0, 355.0));
        std::size_t in_range = 0;
        for (double v : x)
            if (v >= 345.0 && v <= 355.0) ++in_range;
        CHECK(zoom.n_in_range == in_range);
        for (const auto& zb : zoom.bins) {
            if (zb.upper >= 355.0) continue;  // the closed top edge also holds 355 itself
            const auto it = std::find_if(full.bins.begin(), full.bins.end(),
                                         [&](const HistogramBin& fb) { return fb.lower == zb.lower; });
            REQUIRE(it != full.bins.end());
            CHECK(it->count == zb.count);
        }
    }

    TEST_CASE("serialization") {
        const Generated g = generate(DGPSpec::curved(800, 2));
        const RDPlotData p = build_rdplot(g.data, RDDesign{});
        const std::string csv = plot_to_csv(p);
        CHECK(line_count(csv) == p.bins.size() + 1);
        const std::string svg = plot_to_svg(p);
        CHECK(svg.rfind("<svg", 0) == 0);
        CHECK(svg.find("</svg>") != std::string::npos);
        nlohmann::ordered_json j = p;
        CHECK(j["bins"].size() == p.bins.size());
        const Histogram h = score_histogram(g.data.score(), 0.0);
        CHECK(line_count(histogram_to_csv(h)) == h.bins.size() + 1);
        CHECK(histogram_to_svg(h).find("</svg>") != std::string::npos);
        CHECK(parse_binning("qs") == Binning::QuantileSpaced);
        CHECK_THROWS_AS(parse_binning("nope"), Error);
    }
}
