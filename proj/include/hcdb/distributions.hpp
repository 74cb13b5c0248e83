#pragma once

// Probability kernels and samplers used throughout the library.
// Everything that touches a density works on the log scale.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "hcdb/errors.hpp"
#include "hcdb/rng.hpp"

namespace hcdb {

// Natural-log probability. Always <= 0 or -inf.
struct LogProb {
    double value = -std::numeric_limits<double>::infinity();

    double prob() const { return std::exp(value); }
};

inline double log_choose(int n, int k) {
    return boost::math::lgamma(n + 1.0) - boost::math::lgamma(k + 1.0) -
           boost::math::lgamma(n - k + 1.0);
}

inline double log_beta_fn(double a, double b) {
    return boost::math::lgamma(a) + boost::math::lgamma(b) - boost::math::lgamma(a + b);
}

// log P(Y = y) for Y ~ BetaBinomial(n, a, b).
//
// For moderate n the ratio of Pochhammer symbols is summed term by term,
// which keeps full precision when a and b are large (1e5 after clamping);
// the log-gamma difference is used otherwise.
inline LogProb log_beta_binomial_pmf(int y, int n, double a, double b) {
    if (n < 0 || y < 0 || y > n) {
        throw DomainError("log_beta_binomial_pmf: need 0 <= y <= n (y=" + std::to_string(y) +
                          ", n=" + std::to_string(n) + ")");
    }
    if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
        throw DomainError("log_beta_binomial_pmf: shapes must be positive and finite");
    }
    double lp = log_choose(n, y);
    if (n <= 4096) {
        for (int i = 0; i < y; ++i) lp += std::log(a + i);
        for (int i = 0; i < n - y; ++i) lp += std::log(b + i);
        for (int i = 0; i < n; ++i) lp -= std::log(a + b + i);
    } else {
        lp += log_beta_fn(a + y, b + n - y) - log_beta_fn(a, b);
    }
    return LogProb{std::min(lp, 0.0)};
}

// Largest double strictly below one.
inline constexpr double kOneMinus = 1.0 - 0x1.0p-53;

inline double clamp_open_unit(double x) {
    return std::clamp(x, std::numeric_limits<double>::min(), kOneMinus);
}

namespace detail {

// log of a Gamma(shape, 1) draw; stable for shape < 1 where the draw itself
// may underflow.
inline double log_gamma_draw(RngStream& stream, double shape) {
    if (shape >= 1.0) {
        std::gamma_distribution<double> g(shape, 1.0);
        return std::log(g(stream));
    }
    std::gamma_distribution<double> g(shape + 1.0, 1.0);
    const double lg = std::log(g(stream));
    return lg + std::log(stream.uniform()) / shape;
}

}  // namespace detail

inline double sample_beta(RngStream& stream, double a, double b) {
    if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
        throw DomainError("sample_beta: shapes must be positive and finite");
    }
    double x;
    if (a >= 1.0 && b >= 1.0) {
        std::gamma_distribution<double> ga(a, 1.0);
        std::gamma_distribution<double> gb(b, 1.0);
        const double u = ga(stream);
        const double v = gb(stream);
        x = u / (u + v);
    } else {
        const double lu = detail::log_gamma_draw(stream, a);
        const double lv = detail::log_gamma_draw(stream, b);
        // u / (u + v) = 1 / (1 + exp(lv - lu))
        x = 1.0 / (1.0 + std::exp(lv - lu));
    }
    if (!std::isfinite(x)) x = a / (a + b);
    return clamp_open_unit(x);
}

inline int sample_binomial(RngStream& stream, int n, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("sample_binomial: p outside [0, 1]");
    if (n < 0) throw DomainError("sample_binomial: negative n");
    if (p == 0.0 || n == 0) return 0;
    if (p == 1.0) return n;
    std::binomial_distribution<int> dist(n, p);
    return dist(stream);
}

inline double sample_gaussian(RngStream& stream, double mean, double sd) {
    if (!(sd > 0.0) || !std::isfinite(sd)) throw DomainError("sample_gaussian: sd must be > 0");
    std::normal_distribution<double> dist(mean, sd);
    return dist(stream);
}

inline double sample_half_normal(RngStream& stream, double scale) {
    return std::abs(sample_gaussian(stream, 0.0, scale));
}

// Regularized incomplete beta I_x(a, b).
inline double beta_cdf(double x, double a, double b) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    return boost::math::ibeta(a, b, x);
}

inline double beta_log_pdf(double x, double a, double b) {
    return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta_fn(a, b);
}

}  // namespace hcdb
