#include "rdd/stats.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "rdd/error.hpp"

namespace rdd {

double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double two_sided_normal_p(double estimate, double std_error) noexcept {
    if (!(std_error > 0.0)) return estimate == 0.0 ? 1.0 : 0.0;
    const double z = std::fabs(estimate / std_error);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::InvalidInput, "quantile probability must be in (0,1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double critical_value(double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidInput, "confidence level must be in (0,1)");
    if (level == 0.95) return 1.96;
    return normal_quantile(0.5 + 0.5 * level);
}

unsigned worker_count() noexcept {
    if (const char* env = std::getenv("RDD_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

}  // namespace rdd
