#include "rdd/kernel_wls.hpp"

#include <algorithm>
#include <cmath>

#include "rdd/error.hpp"

namespace rdd {

const char* to_string(Kernel k) noexcept {
    switch (k) {
        case Kernel::Triangular: return "triangular";
        case Kernel::Uniform: return "uniform";
        case Kernel::Epanechnikov: return "epanechnikov";
    }
    return "?";
}

const char* to_string(Side s) noexcept {
    return s == Side::AtOrAboveCutoff ? "at_or_above" : "below";
}

const char* to_string(VarianceMethod v) noexcept {
    return v == VarianceMethod::NearestNeighbor ? "nn" : "plugin";
}

Kernel parse_kernel(const std::string& name) {
    if (name == "tri" || name == "triangular") return Kernel::Triangular;
    if (name == "uni" || name == "uniform") return Kernel::Uniform;
    if (name == "epa" || name == "epanechnikov") return Kernel::Epanechnikov;
    throw Error(ErrorKind::InvalidInput, "unknown kernel '" + name + "' (expected tri, uni or epa)");
}

VarianceMethod parse_variance_method(const std::string& name) {
    if (name == "nn") return VarianceMethod::NearestNeighbor;
    if (name == "plugin" || name == "hc0") return VarianceMethod::PlugInResidual;
    throw Error(ErrorKind::InvalidInput, "unknown variance method '" + name + "' (expected nn or plugin)");
}

double kernel_weight(Kernel kernel, double u) noexcept {
    const double a = std::fabs(u);
    switch (kernel) {
        case Kernel::Triangular: return a < 1.0 ? 1.0 - a : 0.0;
        case Kernel::Uniform: return a <= 1.0 ? 1.0 : 0.0;
        case Kernel::Epanechnikov: return a < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
    }
    return 0.0;
}

namespace {

std::size_t count_distinct(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

// Rows of the scaled design sqrt(w) * u^j, u = (x - c) / scale.
Eigen::MatrixXd scaled_design(std::span<const double> x, std::span<const std::size_t> rows,
                              std::span<const double> sqrt_w, double cutoff, double scale, int order) {
    const auto m = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd a(m, order + 1);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double u = (x[rows[i]] - cutoff) / scale;
        double pw = 1.0;
        for (int j = 0; j <= order; ++j) {
            a(i, j) = sqrt_w[i] * pw;
            pw *= u;
        }
    }
    return a;
}

// (order+1) x m matrix G with beta_scaled = G * (sqrt(w) .* y), via a column
// pivoted Householder QR of the weighted design.
Eigen::MatrixXd qr_pseudo_inverse(const Eigen::MatrixXd& a) {
    const Eigen::Index m = a.rows();
    const Eigen::Index k = a.cols();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < k) throw Error(ErrorKind::SingularDesign, "weighted design matrix is rank deficient");
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, k);
    const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
    Eigen::MatrixXd g = r.template triangularView<Eigen::Upper>().solve(q.transpose());
    return qr.colsPermutation() * g;
}

}  // namespace

LocalFit local_fit(std::span<const double> score, std::span<const double> y, double cutoff, Side side,
                   int order, double h, Kernel kernel) {
    if (order < 0) throw Error(ErrorKind::InvalidInput, "polynomial order must be nonnegative");
    if (!(h > 0.0) || !std::isfinite(h)) throw Error(ErrorKind::BandwidthTooSmall, "bandwidth must be positive");
    if (score.size() != y.size()) throw Error(ErrorKind::InvalidInput, "score and outcome lengths differ");

    LocalFit fit;
    fit.side = side;
    fit.order = order;
    fit.cutoff = cutoff;
    fit.bandwidth = h;
    fit.kernel = kernel;
    for (std::size_t i = 0; i < score.size(); ++i) {
        if (!on_side(score[i], cutoff, side)) continue;
        const double w = kernel_weight(kernel, (score[i] - cutoff) / h);
        if (w > 0.0) {
            fit.rows.push_back(i);
            fit.weights.push_back(w);
        }
    }
    const std::size_t needed = static_cast<std::size_t>(order) + 2;
    if (fit.rows.size() < needed)
        throw Error(ErrorKind::InsufficientObservations,
                    std::string(to_string(side)) + " side needs " + std::to_string(needed) +
                        " observations within h=" + std::to_string(h) + ", found " + std::to_string(fit.rows.size()));
    {
        std::vector<double> xs;
        xs.reserve(fit.rows.size());
        for (auto i : fit.rows) xs.push_back(score[i]);
        if (count_distinct(std::move(xs)) < needed)
            throw Error(ErrorKind::SingularDesign, std::string(to_string(side)) + " side has fewer than " +
                                                       std::to_string(needed) + " distinct scores within h");
    }

    std::vector<double> sqrt_w(fit.weights.size());
    std::transform(fit.weights.begin(), fit.weights.end(), sqrt_w.begin(), [](double w) { return std::sqrt(w); });
    const Eigen::MatrixXd a = scaled_design(score, fit.rows, sqrt_w, cutoff, h, order);
    Eigen::MatrixXd g = qr_pseudo_inverse(a);

    const auto m = static_cast<Eigen::Index>(fit.rows.size());
    for (Eigen::Index i = 0; i < m; ++i) g.col(i) *= sqrt_w[i];
    double scale = 1.0;
    for (int j = 0; j <= order; ++j) {
        g.row(j) /= scale;
        scale *= h;
    }
    fit.hat = std::move(g);
    return refit(fit, score, y);
}

LocalFit local_fit(const RDDataset& data, const RDDesign& design, Side side, int order, double h, Kernel kernel) {
    return local_fit(data.score(), data.outcome(), design.cutoff, side, order, h, kernel);
}

LocalFit refit(const LocalFit& fit, std::span<const double> score, std::span<const double> y) {
    LocalFit out = fit;
    const auto m = static_cast<Eigen::Index>(fit.rows.size());
    Eigen::VectorXd ys(m);
    for (Eigen::Index i = 0; i < m; ++i) ys(i) = y[fit.rows[i]];
    const Eigen::VectorXd beta = fit.hat * ys;
    out.coefficients.assign(beta.data(), beta.data() + beta.size());
    out.residuals.resize(fit.rows.size());
    for (Eigen::Index i = 0; i < m; ++i)
        out.residuals[i] = ys(i) - evaluate_polynomial(out.coefficients, score[fit.rows[i]] - fit.cutoff);
    return out;
}

std::vector<double> nn_residual_products(std::span<const double> score, std::span<const double> a,
                                         std::span<const double> b, std::span<const std::size_t> rows,
                                         int neighbors) {
    const std::size_t m = rows.size();
    if (neighbors < 1) throw Error(ErrorKind::InvalidInput, "nearest-neighbour count must be positive");
    if (m < static_cast<std::size_t>(neighbors) + 1)
        throw Error(ErrorKind::InsufficientObservations,
                    "nearest-neighbour variance needs " + std::to_string(neighbors + 1) + " observations, found " +
                        std::to_string(m));
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t l, std::size_t r) { return score[rows[l]] < score[rows[r]]; });
    std::vector<double> xs(m);
    for (std::size_t k = 0; k < m; ++k) xs[k] = score[rows[order[k]]];

    std::vector<double> out(m);
    const auto J = static_cast<std::size_t>(neighbors);
    for (std::size_t k = 0; k < m; ++k) {
        const double x0 = xs[k];
        std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(k) - 1;
        std::size_t hi = k + 1;
        std::size_t taken = 0;
        double last = 0.0;
        double sum_a = 0.0, sum_b = 0.0;
        auto take = [&](std::size_t pos) {
            const std::size_t r = rows[order[pos]];
            sum_a += a[r];
            sum_b += b[r];
            ++taken;
        };
        while (true) {
            const bool has_lo = lo >= 0;
            const bool has_hi = hi < m;
            if (!has_lo && !has_hi) break;
            const double dlo = has_lo ? x0 - xs[static_cast<std::size_t>(lo)] : INFINITY;
            const double dhi = has_hi ? xs[hi] - x0 : INFINITY;
            const double d = std::min(dlo, dhi);
            if (taken >= J && d > last) break;
            if (dlo <= dhi) {
                take(static_cast<std::size_t>(lo));
                --lo;
            } else {
                take(hi);
                ++hi;
            }
            last = d;
        }
        const double jn = static_cast<double>(taken);
        const std::size_t r = rows[order[k]];
        out[order[k]] = jn / (jn + 1.0) * (a[r] - sum_a / jn) * (b[r] - sum_b / jn);
    }
    return out;
}

VarianceEstimate intercept_variance(const LocalFit& fit, std::span<const double> score, std::span<const double> y,
                                    VarianceMethod method, int nn_neighbors) {
    VarianceEstimate est;
    est.method = method;
    const LocalFit f = refit(fit, score, y);
    std::vector<double> sigma(f.residuals.size());
    if (method == VarianceMethod::NearestNeighbor) {
        std::vector<double> e(score.size(), 0.0);
        for (std::size_t k = 0; k < f.rows.size(); ++k) e[f.rows[k]] = f.residuals[k];
        sigma = nn_residual_products(score, e, e, fit.rows, nn_neighbors);
    } else {
        for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = f.residuals[i] * f.residuals[i];
    }
    double v = 0.0;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        const double l = fit.hat(0, static_cast<Eigen::Index>(i));
        v += l * l * sigma[i];
    }
    est.intercept_variance = std::max(0.0, v);
    return est;
}

PolynomialFit polynomial_least_squares(std::span<const double> x, std::span<const double> y, double center,
                                       int order) {
    if (x.size() != y.size()) throw Error(ErrorKind::InvalidInput, "x and y lengths differ");
    const std::size_t needed = static_cast<std::size_t>(order) + 1;
    if (count_distinct(std::vector<double>(x.begin(), x.end())) < needed)
        throw Error(ErrorKind::SingularDesign, "polynomial of order " + std::to_string(order) + " needs " +
                                                   std::to_string(needed) + " distinct support points");
    double scale = 0.0;
    for (double v : x) scale = std::max(scale, std::fabs(v - center));
    if (scale == 0.0) scale = 1.0;
    std::vector<std::size_t> rows(x.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    const std::vector<double> ones(x.size(), 1.0);
    const Eigen::MatrixXd a = scaled_design(x, rows, ones, center, scale, order);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < order + 1) throw Error(ErrorKind::SingularDesign, "polynomial design is rank deficient");
    const Eigen::VectorXd ys = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    const Eigen::VectorXd beta = qr.solve(ys);

    PolynomialFit out;
    double s = 1.0;
    for (int j = 0; j <= order; ++j) {
        out.coefficients.push_back(beta(j) / s);
        s *= scale;
    }
    out.residuals.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out.residuals[i] = y[i] - evaluate_polynomial(out.coefficients, x[i] - center);
    return out;
}

double evaluate_polynomial(std::span<const double> coefficients, double dx) noexcept {
    double acc = 0.0;
    for (auto it = coefficients.rbegin(); it != coefficients.rend(); ++it) acc = acc * dx + *it;
    return acc;
}

}  // namespace rdd
