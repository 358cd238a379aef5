#include "rdd/bandwidth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rdd/error.hpp"

namespace rdd {

namespace {

// int_0^1 K(u) u^k du
double kernel_moment(Kernel kernel, int k) {
    const double a = k + 1.0;
    switch (kernel) {
        case Kernel::Triangular: return 1.0 / a - 1.0 / (a + 1.0);
        case Kernel::Uniform: return 1.0 / a;
        case Kernel::Epanechnikov: return 0.75 * (1.0 / a - 1.0 / (a + 2.0));
    }
    return 0.0;
}

// int_0^1 K(u)^2 u^k du
double kernel_square_moment(Kernel kernel, int k) {
    const double a = k + 1.0;
    switch (kernel) {
        case Kernel::Triangular: return 1.0 / a - 2.0 / (a + 1.0) + 1.0 / (a + 2.0);
        case Kernel::Uniform: return 1.0 / a;
        case Kernel::Epanechnikov: return 0.5625 * (1.0 / a - 2.0 / (a + 2.0) + 1.0 / (a + 4.0));
    }
    return 0.0;
}

double factorial(int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

struct SideSample {
    std::vector<double> dx;  // x - c
    std::vector<double> y;
};

struct Prepared {
    SideSample below, above;
    std::size_t n_eff = 0;
    bool collapsed = false;
    double range = 0.0;
};

// Collapses tied scores to their mean outcome when any score repeats.
Prepared prepare(std::span<const double> score, std::span<const double> y, double cutoff) {
    Prepared out;
    std::vector<std::size_t> idx(score.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    bool ties = false;
    for (std::size_t k = 1; k < idx.size(); ++k)
        if (score[idx[k]] == score[idx[k - 1]]) ties = true;
    out.collapsed = ties;
    out.range = score[idx.back()] - score[idx.front()];

    auto push = [&](double x, double v) {
        SideSample& s = x >= cutoff ? out.above : out.below;
        s.dx.push_back(x - cutoff);
        s.y.push_back(v);
    };
    if (!ties) {
        for (auto i : idx) push(score[i], y[i]);
    } else {
        std::size_t k = 0;
        while (k < idx.size()) {
            std::size_t e = k;
            double sum = 0.0;
            while (e < idx.size() && score[idx[e]] == score[idx[k]]) sum += y[idx[e++]];
            push(score[idx[k]], sum / static_cast<double>(e - k));
            k = e;
        }
    }
    out.n_eff = out.below.dx.size() + out.above.dx.size();
    return out;
}

double std_dev(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size() + b.size());
    double mean = 0.0;
    for (double v : a) mean += v;
    for (double v : b) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : a) ss += (v - mean) * (v - mean);
    for (double v : b) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / std::max(1.0, n - 1.0));
}

// Distance from the cutoff to the k-th closest (1-based) point of a side.
double kth_distance(const SideSample& s, std::size_t k) {
    std::vector<double> d(s.dx.size());
    std::transform(s.dx.begin(), s.dx.end(), d.begin(), [](double v) { return std::fabs(v); });
    std::sort(d.begin(), d.end());
    if (d.empty()) return 0.0;
    return d[std::min(k, d.size()) - 1];
}

struct SidePilot {
    double derivative = 0.0;
    double sigma2 = 0.0;
};

SidePilot side_pilot(const SideSample& s, int derivative_order, int fit_order, double window) {
    const PolynomialFit fit = polynomial_least_squares(s.dx, s.y, 0.0, fit_order);
    SidePilot out;
    out.derivative = factorial(derivative_order) * fit.coefficients[static_cast<std::size_t>(derivative_order)];
    double ss = 0.0;
    std::size_t m = 0;
    for (std::size_t i = 0; i < s.dx.size(); ++i) {
        if (std::fabs(s.dx[i]) <= window) {
            ss += fit.residuals[i] * fit.residuals[i];
            ++m;
        }
    }
    if (m < 2) {
        ss = 0.0;
        for (double r : fit.residuals) ss += r * r;
        m = fit.residuals.size();
    }
    out.sigma2 = ss / static_cast<double>(m);
    return out;
}

double power_root(double v, int degree) { return std::pow(v, 1.0 / degree); }

}  // namespace

KernelConstants boundary_constants(Kernel kernel, int order, int nu) {
    if (order < 0 || nu < 0 || nu > order) throw Error(ErrorKind::InvalidInput, "need 0 <= nu <= order");
    const int k = order + 1;
    Eigen::MatrixXd gamma(k, k), psi(k, k);
    Eigen::VectorXd lambda(k);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            gamma(i, j) = kernel_moment(kernel, i + j);
            psi(i, j) = kernel_square_moment(kernel, i + j);
        }
        lambda(i) = kernel_moment(kernel, order + 1 + i);
    }
    const Eigen::MatrixXd ginv = gamma.inverse();
    const Eigen::VectorXd row = ginv.row(nu).transpose();
    KernelConstants c;
    c.bias = factorial(nu) * row.dot(lambda);
    c.variance = factorial(nu) * factorial(nu) * row.dot(psi * row);
    return c;
}

double plugin_constant(Kernel kernel, int p) {
    const KernelConstants c = boundary_constants(kernel, p, 0);
    return power_root(c.variance / (2.0 * (p + 1) * c.bias * c.bias), 2 * p + 3);
}

std::size_t effective_sample_size(const ScoreProfile& profile, SampleSizeMode mode) {
    return mode == SampleSizeMode::Rows ? profile.n : profile.K;
}

BandwidthSelection select_bandwidth(std::span<const double> score, std::span<const double> y, double cutoff, int p,
                                    Kernel kernel, BiasBandwidth bias, BandwidthCriterion criterion) {
    if (p < 0) throw Error(ErrorKind::InvalidInput, "polynomial order must be nonnegative");
    if (score.size() != y.size()) throw Error(ErrorKind::InvalidInput, "score and outcome lengths differ");
    if (score.empty()) throw Error(ErrorKind::InsufficientObservations, "no observations");
    const Prepared prep = prepare(score, y, cutoff);
    const std::size_t needed = static_cast<std::size_t>(p) + 3;
    if (prep.below.dx.size() < needed || prep.above.dx.size() < needed)
        throw Error(ErrorKind::InsufficientObservations,
                    "bandwidth selection needs " + std::to_string(needed) + " distinct scores per side (found " +
                        std::to_string(prep.below.dx.size()) + " below, " + std::to_string(prep.above.dx.size()) +
                        " above)");

    BandwidthSelection sel;
    if (criterion == BandwidthCriterion::MseSum) sel.criterion = "mse_sum";
    PilotDetail& pilot = sel.pilot;
    pilot.n_eff = prep.n_eff;
    pilot.collapsed_mass_points = prep.collapsed;
    const double n = static_cast<double>(prep.n_eff);

    // Uniform-count density at the cutoff with a rule-of-thumb window that is
    // widened until each side holds enough points for the local fits.
    const double sd_x = std::max(std_dev(prep.below.dx, prep.above.dx), std::numeric_limits<double>::min());
    const std::size_t min_pts = static_cast<std::size_t>(p) + 2;
    double hd = 1.84 * sd_x * std::pow(n, -0.2);
    hd = std::max({hd, kth_distance(prep.below, min_pts), kth_distance(prep.above, min_pts)});
    std::size_t inside = 0;
    for (double v : prep.below.dx) inside += std::fabs(v) <= hd;
    for (double v : prep.above.dx) inside += std::fabs(v) <= hd;
    pilot.density_bandwidth = hd;
    pilot.density = static_cast<double>(inside) / (2.0 * n * hd);

    const SidePilot lo = side_pilot(prep.below, p + 1, p + 2, hd);
    const SidePilot hi = side_pilot(prep.above, p + 1, p + 2, hd);
    pilot.derivative_below = lo.derivative;
    pilot.derivative_above = hi.derivative;
    pilot.sigma2_below = lo.sigma2;
    pilot.sigma2_above = hi.sigma2;

    const double sign = (p + 1) % 2 == 0 ? 1.0 : -1.0;  // (-1)^(p+1)
    const double delta = criterion == BandwidthCriterion::MseSum
                             ? std::hypot(hi.derivative, lo.derivative)
                             : hi.derivative - sign * lo.derivative;
    const KernelConstants kc = boundary_constants(kernel, p, 0);
    pilot.plugin_constant = plugin_constant(kernel, p);
    pilot.bias_term = delta / factorial(p + 1);
    pilot.variance_term = (lo.sigma2 + hi.sigma2) / pilot.density;

    const double floor_h = std::max(kth_distance(prep.below, std::max<std::size_t>(min_pts, 4)),
                                    kth_distance(prep.above, std::max<std::size_t>(min_pts, 4))) *
                           (1.0 + 1e-9);
    const double ceil_h = prep.range;

    // "Flat" means the curvature contributes less than 1e-8 of the outcome
    // scale across the whole score range on both sides.
    double y_scale = 0.0;
    {
        std::vector<double> all = prep.below.y;
        all.insert(all.end(), prep.above.y.begin(), prep.above.y.end());
        std::vector<double> empty;
        y_scale = std_dev(all, empty);
    }
    const double span_pow = std::pow(prep.range, p + 1) / factorial(p + 1);
    const double flat_tol = 1e-8 * y_scale + std::numeric_limits<double>::min();
    const bool flat = std::fabs(lo.derivative) * span_pow <= flat_tol && std::fabs(hi.derivative) * span_pow <= flat_tol;

    double h = 0.0;
    if (flat) {
        sel.degenerate_curvature = true;
        sel.warnings.push_back("DegenerateCurvature: pilot bias estimate is ~0 on both sides; h capped at half the score range");
        h = 0.5 * prep.range;
    } else {
        const double bias2 = kc.bias * kc.bias * pilot.bias_term * pilot.bias_term;
        const double var = kc.variance * pilot.variance_term;
        h = power_root(var / (2.0 * (p + 1) * bias2 * n), 2 * p + 3);
        if (!std::isfinite(h)) h = ceil_h;
    }
    if (h > ceil_h) {
        h = ceil_h;
        sel.clamped = true;
    }
    if (h < floor_h) {
        h = floor_h;
        sel.clamped = true;
    }
    sel.h = h;
    sel.b = h;

    if (bias == BiasBandwidth::Separate) {
        // MSE-optimal bandwidth for Delta-hat, the (p+1)-th derivative jump
        // estimated with order q = p+1; its bias needs (q+1)-th derivatives
        // from an order q+2 pilot.
        const int q = p + 1;
        const int nu = p + 1;
        const std::size_t need_b = static_cast<std::size_t>(q) + 3;
        if (prep.below.dx.size() < need_b || prep.above.dx.size() < need_b) {
            sel.warnings.push_back("separate bias bandwidth needs more distinct scores; using b = h");
        } else {
            const SidePilot lo2 = side_pilot(prep.below, q + 1, q + 2, hd);
            const SidePilot hi2 = side_pilot(prep.above, q + 1, q + 2, hd);
            const double s_delta = sign * ((q + 1 - nu) % 2 == 0 ? 1.0 : -1.0);
            const double jump = hi2.derivative - s_delta * lo2.derivative;
            const KernelConstants kb = boundary_constants(kernel, q, nu);
            const double bias2 = std::pow(kb.bias * jump / factorial(q + 1), 2);
            const double var = kb.variance * pilot.variance_term;
            double b = power_root((2 * nu + 1) * var / (2.0 * (q + 1 - nu) * bias2 * n), 2 * q + 3);
            if (!std::isfinite(b) || b > ceil_h) b = ceil_h;
            const double floor_b = std::max(kth_distance(prep.below, static_cast<std::size_t>(q) + 2),
                                            kth_distance(prep.above, static_cast<std::size_t>(q) + 2)) *
                                   (1.0 + 1e-9);
            sel.b = std::max(b, floor_b);
            sel.separate_bias_bandwidth = true;
        }
    }
    return sel;
}

BandwidthSelection select_bandwidth(const RDDataset& data, const RDDesign& design, int p, Kernel kernel,
                                    BandwidthTarget target, BiasBandwidth bias) {
    const auto& y = target == BandwidthTarget::Outcome ? data.outcome() : data.received();
    return select_bandwidth(data.score(), y, design.cutoff, p, kernel, bias);
}

}  // namespace rdd
