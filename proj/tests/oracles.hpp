#pragma once

// Independent reference computations used only by the tests. None of them
// call into the library's numerical code.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace oracle {

inline double kernel(const std::string& name, double u) {
    const double a = std::fabs(u);
    if (name == "triangular") return a < 1.0 ? 1.0 - a : 0.0;
    if (name == "uniform") return a <= 1.0 ? 1.0 : 0.0;
    if (name == "epanechnikov") return a < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
    throw std::invalid_argument(name);
}

// Solves A x = r by Gaussian elimination with partial pivoting in long double.
inline std::vector<long double> solve(std::vector<std::vector<long double>> A, std::vector<long double> r) {
    const std::size_t n = r.size();
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::fabs(A[i][k]) > std::fabs(A[piv][k])) piv = i;
        std::swap(A[k], A[piv]);
        std::swap(r[k], r[piv]);
        for (std::size_t i = k + 1; i < n; ++i) {
            const long double f = A[i][k] / A[k][k];
            for (std::size_t j = k; j < n; ++j) A[i][j] -= f * A[k][j];
            r[i] -= f * r[k];
        }
    }
    std::vector<long double> x(n);
    for (std::size_t k = n; k-- > 0;) {
        long double s = r[k];
        for (std::size_t j = k + 1; j < n; ++j) s -= A[k][j] * x[j];
        x[k] = s / A[k][k];
    }
    return x;
}

// Kernel-weighted least squares on (x - c)^j from the dense normal equations.
inline std::vector<double> wls_normal_equations(const std::vector<double>& x, const std::vector<double>& y, double c,
                                                bool above, int p, double h, const std::string& kern) {
    const std::size_t m = static_cast<std::size_t>(p) + 1;
    std::vector<std::vector<long double>> A(m, std::vector<long double>(m, 0.0L));
    std::vector<long double> r(m, 0.0L);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if ((x[i] >= c) != above) continue;
        const long double w = kernel(kern, (x[i] - c) / h);
        if (w <= 0.0L) continue;
        std::vector<long double> pw(m);
        for (std::size_t j = 0; j < m; ++j) pw[j] = std::pow(static_cast<long double>(x[i] - c), static_cast<int>(j));
        for (std::size_t a = 0; a < m; ++a) {
            r[a] += w * pw[a] * y[i];
            for (std::size_t b = 0; b < m; ++b) A[a][b] += w * pw[a] * pw[b];
        }
    }
    const auto sol = solve(A, r);
    return std::vector<double>(sol.begin(), sol.end());
}

inline double diff_means(const std::vector<double>& v, std::uint32_t mask) {
    double s1 = 0.0, s0 = 0.0;
    int n1 = 0, n0 = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (mask >> i & 1U) {
            s1 += v[i];
            ++n1;
        } else {
            s0 += v[i];
            ++n0;
        }
    }
    return s1 / n1 - s0 / n0;
}

// Fixed-margins permutation p-value by scanning every bit mask with the
// observed number of treated units. Ties use |t| >= |t_obs| - tol.
inline double brute_force_fisher(const std::vector<double>& v, const std::vector<std::uint8_t>& above, double tol) {
    const std::size_t n = v.size();
    if (n > 24) throw std::invalid_argument("too many units for brute force");
    std::uint32_t obs = 0;
    int n1 = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (above[i]) {
            obs |= 1U << i;
            ++n1;
        }
    const double t_obs = std::fabs(diff_means(v, obs));
    std::uint64_t hits = 0, total = 0;
    for (std::uint32_t mask = 0; mask < (1U << n); ++mask) {
        if (__builtin_popcount(mask) != n1) continue;
        ++total;
        if (std::fabs(diff_means(v, mask)) >= t_obs - tol) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

// Row n of Pascal's triangle in long double.
inline std::vector<long double> pascal_row(std::size_t n) {
    std::vector<long double> row{1.0L};
    for (std::size_t k = 1; k <= n; ++k) {
        std::vector<long double> next(k + 1, 1.0L);
        for (std::size_t j = 1; j < k; ++j) next[j] = row[j - 1] + row[j];
        row = std::move(next);
    }
    return row;
}

// Two-sided exact binomial p for every k in 0..n: total probability of
// outcomes whose pmf does not exceed the observed one (relative slack 1e-7).
inline std::vector<double> binomial_two_sided_all(std::size_t n, double q) {
    const auto row = pascal_row(n);
    std::vector<long double> pmf(n + 1);
    for (std::size_t j = 0; j <= n; ++j)
        pmf[j] = row[j] * std::pow(static_cast<long double>(q), static_cast<int>(j)) *
                 std::pow(1.0L - q, static_cast<int>(n - j));
    std::vector<double> out(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        long double p = 0.0L;
        for (std::size_t j = 0; j <= n; ++j)
            if (pmf[j] <= pmf[k] * (1.0L + 1e-7L)) p += pmf[j];
        out[k] = static_cast<double>(std::min(1.0L, p));
    }
    return out;
}

inline double binomial_two_sided(std::size_t k, std::size_t n, double q) { return binomial_two_sided_all(n, q)[k]; }

inline double poly(const std::vector<double>& c, double x) {
    double v = 0.0;
    for (std::size_t j = c.size(); j-- > 0;) v = v * x + c[j];
    return v;
}

}  // namespace oracle
