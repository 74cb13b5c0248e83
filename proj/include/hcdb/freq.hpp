#pragma once

// Frequentist comparators: complete and test-then-pool borrowing, log-link
// binomial GLMs (plain and with weakly informative Cauchy penalties), and
// simultaneous lower confidence limits for risk ratios based on the
// equicoordinate quantile of the maximum of correlated normal contrasts.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "hcdb/distributions.hpp"
#include "hcdb/errors.hpp"
#include "hcdb/inference.hpp"
#include "hcdb/model.hpp"
#include "hcdb/rng.hpp"

namespace hcdb {

struct PooledControl {
    int events = 0;
    int size = 0;
    std::vector<std::size_t> kept_history;
    double w0 = 1.0;  // n0 / n0_pool
    double w = 0.0;   // sum of kept n_h / n0_pool

    ControlGroup group() const { return {events, size}; }
};

namespace detail {

inline PooledControl pool_subset(const ControlGroup& control, const HistoricalControlSet& hcd,
                                 const std::vector<std::size_t>& keep) {
    PooledControl out;
    out.events = control.events;
    out.size = control.size;
    int hist_size = 0;
    for (std::size_t h : keep) {
        out.events += hcd.groups[h].events;
        out.size += hcd.groups[h].size;
        hist_size += hcd.groups[h].size;
    }
    out.kept_history = keep;
    out.w0 = static_cast<double>(control.size) / out.size;
    out.w = static_cast<double>(hist_size) / out.size;
    return out;
}

}  // namespace detail

inline PooledControl pool_naive(const CurrentTrial& trial, const HistoricalControlSet& hcd) {
    std::vector<std::size_t> keep(hcd.count());
    std::iota(keep.begin(), keep.end(), 0);
    return detail::pool_subset(trial.control, hcd, keep);
}

// Var of the pooled proportion assuming independent current and historical
// estimates: w0^2 pi0 (1 - pi0) / n0 + w^2 pi (1 - pi) / N_hist.
inline double pooled_variance(double pi0_hat, int n0, double pi_hat, int N_hist) {
    if (n0 < 1 || N_hist < 0) throw DomainError("pooled_variance: invalid sizes");
    const double total = static_cast<double>(n0) + N_hist;
    const double w0 = n0 / total;
    const double w = N_hist / total;
    double v = w0 * w0 * pi0_hat * (1.0 - pi0_hat) / n0;
    if (N_hist > 0) v += w * w * pi_hat * (1.0 - pi_hat) / N_hist;
    return v;
}

// Two-sided Fisher exact test for the 2x2 table of two binomial groups:
// sum of hypergeometric probabilities not exceeding that of the observed table.
inline double fisher_exact_two_sided(const ControlGroup& g1, const ControlGroup& g2) {
    g1.validate();
    g2.validate();
    const int n1 = g1.size, n2 = g2.size;
    const int K = g1.events + g2.events;
    const int N = n1 + n2;
    const int lo = std::max(0, K - n2), hi = std::min(K, n1);
    auto log_h = [&](int x) { return log_choose(K, x) + log_choose(N - K, n1 - x) - log_choose(N, n1); };
    const double lp_obs = log_h(g1.events);
    const double cutoff = lp_obs + std::log1p(1e-7);
    double included = 0.0, excluded = 0.0;
    for (int x = lo; x <= hi; ++x) {
        const double lp = log_h(x);
        if (lp <= cutoff) included += std::exp(lp); else excluded += std::exp(lp);
    }
    // Use whichever side avoids cancellation.
    const double p = included < excluded ? included : 1.0 - excluded;
    return std::clamp(p, 0.0, 1.0);
}

// Keeps historical group h iff the Fisher test against the current control
// gives p >= alpha.
inline PooledControl test_then_pool(const CurrentTrial& trial, const HistoricalControlSet& hcd, double alpha = 0.05) {
    std::vector<std::size_t> keep;
    for (std::size_t h = 0; h < hcd.count(); ++h) {
        if (fisher_exact_two_sided(trial.control, hcd.groups[h]) >= alpha) keep.push_back(h);
    }
    return detail::pool_subset(trial.control, hcd, keep);
}

struct GlmFit {
    Eigen::VectorXd coefficients;  // intercept log(pi_0), then log risk ratios
    Eigen::MatrixXd covariance;
    bool converged = false;
    bool boundary = false;  // some group has zero events
    int iterations = 0;

    std::size_t arms() const { return coefficients.size() > 0 ? coefficients.size() - 1 : 0; }
    double log_rr(std::size_t m) const { return coefficients(m + 1); }
    double se(std::size_t m) const { return std::sqrt(covariance(m + 1, m + 1)); }
};

inline constexpr double kEtaCap = 35.0;
inline constexpr double kMaxFittedProb = 1.0 - 1e-8;

struct RegularizationConfig {
    double arm_scale = 2.5;
    double intercept_scale = 10.0;
    double df = 1.0;
};

namespace detail {

// IRLS for the saturated one-way log-binomial model over groups
// (control, arm_1, ..., arm_M). With a penalty, each coefficient has a
// Student-t prior handled by EM on its latent normal scale.
inline GlmFit fit_log_binomial(const ControlGroup& control, const std::vector<ControlGroup>& arms,
                               const std::optional<RegularizationConfig>& penalty) {
    control.validate();
    if (arms.empty()) throw DomainError("GLM: at least one treatment arm is required");
    for (const auto& g : arms) g.validate();

    const int G = static_cast<int>(arms.size()) + 1;
    std::vector<ControlGroup> groups{control};
    groups.insert(groups.end(), arms.begin(), arms.end());

    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(G, G);
    for (int g = 0; g < G; ++g) {
        X(g, 0) = 1.0;
        if (g > 0) X(g, g) = 1.0;
    }
    const Eigen::MatrixXd X_inv = X.inverse();
    const double eta_max = std::log(kMaxFittedProb);

    GlmFit fit;
    for (const auto& g : groups) fit.boundary = fit.boundary || g.events == 0;

    Eigen::VectorXd eta(G);
    for (int g = 0; g < G; ++g) eta(g) = std::log((groups[g].events + 0.5) / (groups[g].size + 1.0));
    eta = eta.cwiseMin(eta_max);
    Eigen::VectorXd beta = X_inv * eta;

    Eigen::VectorXd prior_scale(G);
    if (penalty) {
        prior_scale(0) = penalty->intercept_scale;
        for (int g = 1; g < G; ++g) prior_scale(g) = penalty->arm_scale;
    }

    auto working = [&](const Eigen::VectorXd& e, Eigen::VectorXd& w, Eigen::VectorXd& z) {
        for (int g = 0; g < G; ++g) {
            const double mu = std::exp(e(g));
            const double p = groups[g].proportion();
            w(g) = groups[g].size * mu / (1.0 - mu);
            z(g) = e(g) + (p - mu) / mu;
        }
    };

    Eigen::VectorXd w(G), z(G);
    Eigen::MatrixXd info(G, G);
    bool feasible = true;
    for (int it = 1; it <= 100; ++it) {
        fit.iterations = it;
        working(eta, w, z);
        info = X.transpose() * w.asDiagonal() * X;
        Eigen::VectorXd rhs = X.transpose() * w.asDiagonal() * z;
        if (penalty) {
            for (int j = 0; j < G; ++j) {
                const double s2 = prior_scale(j) * prior_scale(j);
                info(j, j) += (penalty->df + 1.0) / (penalty->df * s2 + beta(j) * beta(j));
            }
        }
        Eigen::VectorXd beta_new = info.ldlt().solve(rhs);
        Eigen::VectorXd eta_new = X * beta_new;

        // Step halving back toward the current fit keeps fitted probabilities < 1.
        int halvings = 0;
        while ((eta_new.array() > eta_max).any() && halvings < 30) {
            beta_new = 0.5 * (beta + beta_new);
            eta_new = X * beta_new;
            ++halvings;
        }
        if ((eta_new.array() > eta_max).any()) {
            feasible = false;
            break;
        }
        if ((eta_new.array() < -kEtaCap).any()) {
            eta_new = eta_new.cwiseMax(-kEtaCap);
            beta_new = X_inv * eta_new;
        }
        if (!beta_new.allFinite()) {
            feasible = false;
            break;
        }
        const double step = (beta_new - beta).cwiseAbs().maxCoeff();
        beta = beta_new;
        eta = eta_new;
        if (step < 1e-8) {
            fit.converged = true;
            break;
        }
    }

    working(eta, w, z);
    fit.coefficients = beta;
    if (penalty) {
        info = X.transpose() * w.asDiagonal() * X;
        for (int j = 0; j < G; ++j) {
            const double s2 = prior_scale(j) * prior_scale(j);
            info(j, j) += (penalty->df + 1.0) / (penalty->df * s2 + beta(j) * beta(j));
        }
        fit.covariance = info.inverse();
    } else {
        // Saturated design: Cov(beta) = X^-1 diag(1/w) X^-T, stable even when
        // a zero-count group drives w to ~1e-14.
        fit.covariance = X_inv * w.cwiseInverse().asDiagonal() * X_inv.transpose();
    }
    const bool probs_ok = (eta.array() <= eta_max).all();
    fit.converged = fit.converged && feasible && probs_ok && fit.covariance.allFinite();
    return fit;
}

}  // namespace detail

inline GlmFit fit_log_binomial_glm(const ControlGroup& control, const std::vector<ControlGroup>& arms) {
    return detail::fit_log_binomial(control, arms, std::nullopt);
}

inline GlmFit fit_regularized_glm(const ControlGroup& control, const std::vector<ControlGroup>& arms,
                                  const RegularizationConfig& cfg = {}) {
    return detail::fit_log_binomial(control, arms, cfg);
}

inline constexpr std::size_t kMvnDraws = 200000;

// P(max_m Z_m <= c) for unit-variance normals with corr(Z_m, Z_k) = l_m l_k,
// by integrating over the shared factor.
inline double factor_max_cdf(const std::vector<double>& loadings, double c) {
    double upper = 10.0;
    std::vector<double> free_loadings;
    for (double l : loadings) {
        if (l >= 1.0 - 1e-12) upper = std::min(upper, c);  // Z_m is the factor itself
        else free_loadings.push_back(l);
    }
    if (upper <= -10.0) return 0.0;
    auto f = [&](double u) {
        double prod = std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
        for (double l : free_loadings) {
            prod *= 0.5 * std::erfc(-(c - l * u) / std::sqrt(1.0 - l * l) / std::sqrt(2.0));
        }
        return prod;
    };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -10.0, upper, 12, 1e-12);
}

// Loadings l with corr = l l^T off the diagonal, if the matrix has that form.
inline std::optional<std::vector<double>> factor_loadings(const Eigen::MatrixXd& corr, double tol = 1e-9) {
    const int M = static_cast<int>(corr.rows());
    std::vector<double> l(M, 0.0);
    if (M == 1) return l;
    if ((corr.array() < -tol).any()) return std::nullopt;
    if (M == 2) {
        const double r = std::sqrt(std::max(0.0, corr(0, 1)));
        return std::vector<double>{r, r};
    }
    for (int m = 0; m < M; ++m) {
        // l_m^2 = r_mj r_mk / r_jk for the best-conditioned pair (j, k).
        double best = -1.0, value = 0.0;
        for (int j = 0; j < M; ++j) {
            for (int k = j + 1; k < M; ++k) {
                if (j == m || k == m) continue;
                if (corr(j, k) > best) {
                    best = corr(j, k);
                    value = best > tol ? corr(m, j) * corr(m, k) / corr(j, k) : 0.0;
                }
            }
        }
        l[m] = std::sqrt(std::clamp(value, 0.0, 1.0));
    }
    for (int m = 0; m < M; ++m) {
        for (int k = m + 1; k < M; ++k) {
            if (std::abs(corr(m, k) - l[m] * l[k]) > tol) return std::nullopt;
        }
    }
    return l;
}

inline double factor_max_quantile(const std::vector<double>& loadings, double level) {
    auto g = [&](double c) { return factor_max_cdf(loadings, c) - level; };
    double lo = -8.0, hi = 8.0;
    for (int i = 0; i < 200 && hi - lo > 1e-10; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (g(mid) < 0.0) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

// Monte-Carlo equicoordinate quantile from Cholesky-correlated normal draws.
inline double mvn_max_quantile_mc(const Eigen::MatrixXd& corr, double level, RngStream& stream,
                                  std::size_t draws = kMvnDraws) {
    const int M = static_cast<int>(corr.rows());
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() != Eigen::Success) {
        llt.compute(corr + 1e-10 * Eigen::MatrixXd::Identity(M, M));
        if (llt.info() != Eigen::Success) throw NumericalError("mvn_max_quantile: correlation not positive definite");
    }
    const Eigen::MatrixXd L = llt.matrixL();
    std::vector<double> maxima(draws);
    Eigen::VectorXd z(M);
    for (std::size_t i = 0; i < draws; ++i) {
        for (int m = 0; m < M; ++m) z(m) = sample_gaussian(stream, 0.0, 1.0);
        maxima[i] = (L * z).maxCoeff();
    }
    const std::size_t k = static_cast<std::size_t>(std::ceil(level * draws)) - 1;
    std::nth_element(maxima.begin(), maxima.begin() + k, maxima.end());
    return maxima[k];
}

// Critical value c with P(max_m Z_m <= c) = level, Z ~ MVN(0, corr). One-factor
// correlation (every many-to-one contrast set sharing a control) is integrated
// exactly; other structures fall back to Monte Carlo.
inline double mvn_max_quantile(const Eigen::MatrixXd& corr, double level, RngStream& stream) {
    if (corr.rows() != corr.cols() || corr.rows() < 1) throw DomainError("mvn_max_quantile: corr must be square");
    if (!(level > 0.0 && level < 1.0)) throw DomainError("mvn_max_quantile: level outside (0, 1)");
    for (int m = 0; m < corr.rows(); ++m) {
        if (std::abs(corr(m, m) - 1.0) > 1e-9) throw DomainError("mvn_max_quantile: corr needs a unit diagonal");
    }
    if (auto loadings = factor_loadings(corr)) return factor_max_quantile(*loadings, level);
    return mvn_max_quantile_mc(corr, level, stream);
}

struct FreqLimits {
    SimultaneousLimits limits;
    std::vector<double> estimates;  // exp(beta_m)
    double critical_value = 0.0;
};

inline FreqLimits simultaneous_lower_rr_limits(const GlmFit& fit, double level, RngStream& stream) {
    FreqLimits out;
    out.limits.alpha = 1.0 - level;
    const std::size_t M = fit.arms();
    out.estimates.resize(M);
    out.limits.lower.assign(M, 0.0);
    for (std::size_t m = 0; m < M; ++m) out.estimates[m] = std::exp(fit.log_rr(m));
    if (!fit.converged) {
        out.limits.valid = false;
        return out;
    }
    Eigen::MatrixXd cov = fit.covariance.bottomRightCorner(M, M);
    Eigen::VectorXd se = cov.diagonal().cwiseSqrt();
    Eigen::MatrixXd corr = cov.array() / (se * se.transpose()).array();
    corr.diagonal().setOnes();
    out.critical_value = mvn_max_quantile(corr, level, stream);
    for (std::size_t m = 0; m < M; ++m) {
        out.limits.lower[m] = std::exp(fit.log_rr(m) - out.critical_value * se(m));
    }
    return out;
}

}  // namespace hcdb
