#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rdd/dataset.hpp"
#include "rdd/kernel_wls.hpp"

namespace rdd {

enum class BandwidthTarget { Outcome, Received };
enum class SampleSizeMode { Rows, DistinctValues };
enum class BiasBandwidth { EqualToMain, Separate };
// MseDifference targets the jump estimate, whose leading bias involves the
// difference of the one-sided (p+1)-th derivatives. MseSum uses the sum of
// their squares instead, which cannot cancel when the function is smooth
// across the cutoff.
enum class BandwidthCriterion { MseDifference, MseSum };

// Asymptotic constants of the one-sided equivalent kernel for estimating the
// nu-th derivative at a boundary with a local polynomial of order `order`.
// With Gamma_jk = int_0^1 K(u) u^(j+k), lambda_j = int_0^1 K(u) u^(order+1+j),
// Psi_jk = int_0^1 K(u)^2 u^(j+k):
//   bias     = nu! e_nu' Gamma^-1 lambda
//   variance = (nu!)^2 e_nu' Gamma^-1 Psi Gamma^-1 e_nu
// and the MSE-optimal plug-in constant for the two-sided intercept
// difference (nu = 0) is
//   C(K, p) = (variance / (2 (p + 1) bias^2))^(1 / (2p + 3)).
// For reference (nu = 0):
//   triangular   p=1: bias -0.1,       variance 4.8,     C = 2.6052
//                p=2: bias  0.0285714, variance 10.2857, C = 2.9827
//   uniform      p=1: bias -0.1666667, variance 4.0,     C = 2.0477
//                p=2: bias  0.05,      variance 9.0,     C = 2.4939
//   epanechnikov p=1: bias -0.1157895, variance 4.4980,  C = 2.4251
//                p=2: bias  0.0334821, variance 9.8165,  C = 2.8316
// Under the classical (sigma^2 / (f Delta^2)) parametrisation the triangular
// p=1 constant is (4.8 / 0.01)^(1/5) = 3.4375.
struct KernelConstants {
    double bias = 0.0;
    double variance = 0.0;
};

KernelConstants boundary_constants(Kernel kernel, int order, int nu = 0);
double plugin_constant(Kernel kernel, int p);

struct PilotDetail {
    double derivative_below = 0.0;  // (p+1)-th derivative from the order p+2 global fit
    double derivative_above = 0.0;
    double sigma2_below = 0.0;
    double sigma2_above = 0.0;
    double density = 0.0;            // at the cutoff, uniform-count estimate
    double density_bandwidth = 0.0;
    std::size_t n_eff = 0;
    bool collapsed_mass_points = false;
    double plugin_constant = 0.0;
    double bias_term = 0.0;          // Delta / (p+1)!, or its MseSum analogue
    double variance_term = 0.0;      // (sigma2_below + sigma2_above) / density
};

struct BandwidthSelection {
    double h = 0.0;
    double b = 0.0;
    std::string criterion = "mse_two_sided";
    PilotDetail pilot;
    bool degenerate_curvature = false;
    bool clamped = false;
    bool separate_bias_bandwidth = false;
    std::vector<std::string> warnings;

    double rho() const noexcept { return h / b; }
};

std::size_t effective_sample_size(const ScoreProfile& profile, SampleSizeMode mode);

BandwidthSelection select_bandwidth(std::span<const double> score, std::span<const double> y, double cutoff,
                                    int p, Kernel kernel, BiasBandwidth bias = BiasBandwidth::EqualToMain,
                                    BandwidthCriterion criterion = BandwidthCriterion::MseDifference);
BandwidthSelection select_bandwidth(const RDDataset& data, const RDDesign& design, int p, Kernel kernel,
                                    BandwidthTarget target = BandwidthTarget::Outcome,
                                    BiasBandwidth bias = BiasBandwidth::EqualToMain);

}  // namespace rdd
