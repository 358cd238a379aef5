#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdd/dataset.hpp"

namespace rdd {

enum class Kernel { Triangular, Uniform, Epanechnikov };
enum class Side { BelowCutoff, AtOrAboveCutoff };
enum class VarianceMethod { NearestNeighbor, PlugInResidual };

const char* to_string(Kernel k) noexcept;
const char* to_string(Side s) noexcept;
const char* to_string(VarianceMethod v) noexcept;
Kernel parse_kernel(const std::string& name);
VarianceMethod parse_variance_method(const std::string& name);

// Support is [-1, 1]. Epanechnikov carries its usual 3/4 constant even though
// weighted least squares does not care about normalisation.
double kernel_weight(Kernel kernel, double u) noexcept;

inline bool on_side(double x, double cutoff, Side side) noexcept {
    return side == Side::AtOrAboveCutoff ? x >= cutoff : x < cutoff;
}

// One-sided local polynomial fit of order p. Coefficients are on the
// centered regressors (x - c)^j, intercept first. Every coefficient is a
// linear functional of the outcomes: coefficients = hat * y[rows].
struct LocalFit {
    Side side = Side::AtOrAboveCutoff;
    int order = 1;
    double cutoff = 0.0;
    double bandwidth = 0.0;
    Kernel kernel = Kernel::Triangular;
    std::vector<double> coefficients;
    std::vector<double> residuals;    // aligned with rows
    std::vector<std::size_t> rows;    // positive-weight rows, ascending index
    std::vector<double> weights;      // kernel weights aligned with rows
    Eigen::MatrixXd hat;              // (order + 1) x rows.size()

    std::size_t effective_n() const noexcept { return rows.size(); }
    double intercept() const { return coefficients.front(); }
};

// Throws InsufficientObservations when fewer than p + 2 rows get positive
// weight, SingularDesign when fewer than p + 2 distinct scores do.
LocalFit local_fit(std::span<const double> score, std::span<const double> y, double cutoff, Side side,
                   int order, double h, Kernel kernel);
LocalFit local_fit(const RDDataset& data, const RDDesign& design, Side side, int order, double h,
                   Kernel kernel);

// Same design as `fit`, different outcome vector. Reuses the hat matrix.
LocalFit refit(const LocalFit& fit, std::span<const double> score, std::span<const double> y);

struct VarianceEstimate {
    double intercept_variance = 0.0;
    VarianceMethod method = VarianceMethod::NearestNeighbor;
};

// Sandwich variance sum_i hat(0,i)^2 sigma_i on the fit's residuals e_i:
// sigma_i = e_i^2 (PlugInResidual) or the nearest-neighbour product of e
// with itself (NearestNeighbor).
VarianceEstimate intercept_variance(const LocalFit& fit, std::span<const double> score,
                                    std::span<const double> y, VarianceMethod method, int nn_neighbors = 3);

// Per-row estimates of Cov(a_i, b_i | x_i) over `rows` (all on one side):
//   J_i / (J_i + 1) * (a_i - mean_nn(a)) * (b_i - mean_nn(b))
// where the neighbours are the J closest scores in `rows` excluding row i,
// extended to include ties at the J-th distance.
std::vector<double> nn_residual_products(std::span<const double> score, std::span<const double> a,
                                         std::span<const double> b, std::span<const std::size_t> rows,
                                         int neighbors = 3);

struct PolynomialFit {
    std::vector<double> coefficients;  // on (x - center)^j
    std::vector<double> residuals;     // aligned with the input
};

// Unweighted least squares of y on (x - center)^0..order, used for pilots and
// global plot overlays.
PolynomialFit polynomial_least_squares(std::span<const double> x, std::span<const double> y, double center,
                                       int order);

double evaluate_polynomial(std::span<const double> coefficients, double dx) noexcept;

}  // namespace rdd
