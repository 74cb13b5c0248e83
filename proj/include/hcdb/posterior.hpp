#pragma once

// Conjugate updates of beta-mixture priors, mixture quantiles and sampling,
// ELIR effective sample size, prior predictive distributions, robust-weight
// curves and the beta-binomial prediction-interval screen.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "hcdb/distributions.hpp"
#include "hcdb/errors.hpp"
#include "hcdb/mixture.hpp"
#include "hcdb/model.hpp"
#include "hcdb/priors.hpp"
#include "hcdb/rng.hpp"

namespace hcdb {

// Component k -> Beta(a_k + y, b_k + n - y); weights proportional to
// w_k times the component's beta-binomial marginal likelihood.
inline BetaMixture update(const BetaMixture& prior, const ControlGroup& data) {
    data.validate();
    const std::size_t K = prior.size();
    std::vector<double> logw(K);
    std::vector<BetaComponent> comps(K);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
        const auto& c = prior.component(k);
        logw[k] = std::log(prior.weight(k)) + log_beta_binomial_pmf(data.events, data.size, c.a, c.b).value;
        comps[k] = {c.a + data.events, c.b + data.size - data.events};
        mx = std::max(mx, logw[k]);
    }
    std::vector<double> w(K);
    for (std::size_t k = 0; k < K; ++k) w[k] = std::exp(logw[k] - mx);
    return BetaMixture::normalized(std::move(w), std::move(comps));
}

inline double mixture_quantile(const BetaMixture& mix, double q) {
    if (!(q > 0.0 && q < 1.0)) throw DomainError("mixture_quantile: q must lie in (0, 1)");
    double lo = 1e-15, hi = 1.0 - 1e-15;
    if (mix.size() == 1) {
        return boost::math::ibeta_inv(mix.component(0).a, mix.component(0).b, q);
    }
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (mix.cdf(mid) < q) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

inline double sample_mixture(const BetaMixture& mix, RngStream& stream) {
    std::size_t k = 0;
    if (mix.size() > 1) {
        const double u = stream.uniform();
        double acc = 0.0;
        k = mix.size() - 1;
        for (std::size_t j = 0; j < mix.size(); ++j) {
            acc += mix.weight(j);
            if (u < acc) {
                k = j;
                break;
            }
        }
    }
    return sample_beta(stream, mix.component(k).a, mix.component(k).b);
}

namespace detail {

// Observed information of the log mixture density times the inverse unit
// binomial information, weighted by the density:
//   -(log p)''(x) * x (1 - x) * p(x)
// The x (1 - x) factor is folded into each term so the expression stays
// finite close to the endpoints.
inline double elir_integrand(const BetaMixture& mix, double x, double omx) {
    if (!(x > 1e-280 && omx > 1e-280)) return 0.0;
    const std::size_t K = mix.size();
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> lt(K);
    const double lx = std::log(x), l1x = std::log(omx);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& c = mix.component(k);
        lt[k] = std::log(mix.weight(k)) + (c.a - 1.0) * lx + (c.b - 1.0) * l1x - log_beta_fn(c.a, c.b);
        mx = std::max(mx, lt[k]);
    }
    if (!std::isfinite(mx)) return 0.0;
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        lt[k] = std::exp(lt[k] - mx);
        s += lt[k];
    }
    const double odds = omx / x, inv_odds = x / omx;
    const double ro = std::sqrt(odds), rio = std::sqrt(inv_odds);
    // r_k: component responsibilities at x; g_k = d1_k * sqrt(x (1 - x))
    double e_g = 0.0, e_g2 = 0.0, e_h = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        const auto& c = mix.component(k);
        const double r = lt[k] / s;
        const double g = (c.a - 1.0) * ro - (c.b - 1.0) * rio;
        const double h = (c.a - 1.0) * odds + (c.b - 1.0) * inv_odds;  // -d2 * x (1 - x)
        e_g += r * g;
        e_g2 += r * g * g;
        e_h += r * h;
    }
    const double info = e_h - (e_g2 - e_g * e_g);
    const double density = std::exp(mx + std::log(s));
    const double v = info * density;
    return std::isfinite(v) ? v : 0.0;
}

}  // namespace detail

// Effective sample size by the expected local-information-ratio.
inline double ess_elir(const BetaMixture& mix) {
    mix.validate();
    // A single beta has ESS a + b in closed form. The integrand form only
    // converges to it for a, b > 1 (it is identically zero for Beta(1, 1)).
    if (mix.size() == 1) return mix.component(0).a + mix.component(0).b;

    // The integrand is unchanged under x -> 1 - x with every (a, b) swapped,
    // so [1/2, 1] is integrated as [0, 1/2] of the mirrored mixture. Nodes are
    // then exact distances to the nearer end, which matters for mass packed
    // within 1e-8 of 1, and only segments starting at 0 can be singular.
    std::vector<BetaComponent> swapped;
    for (const auto& c : mix.components()) swapped.push_back({c.b, c.a});
    const BetaMixture mirror(mix.weights(), swapped);

    struct Segment {
        const BetaMixture* m;
        double lo, hi;
        double part = 0.0, err = 0.0, l1 = 0.0;
    };
    std::vector<Segment> segs;
    for (const BetaMixture* m : {&mix, &mirror}) {
        // break the half range at each component's bulk so narrow peaks are resolved
        std::vector<double> cuts{0.0, 0.5};
        for (const auto& c : m->components()) {
            for (double q : {1e-6, 0.01, 0.25, 0.5, 0.75, 0.99, 1.0 - 1e-6}) {
                // cuts are only hints; an inversion failure just drops one
                try {
                    const double x = boost::math::ibeta_inv(c.a, c.b, q);
                    if (x > 1e-300 && x < 0.5) cuts.push_back(x);
                } catch (const std::exception&) {
                }
            }
        }
        std::sort(cuts.begin(), cuts.end());
        cuts.erase(std::unique(cuts.begin(), cuts.end(), [](double u, double v) { return v - u <= 1e-6 * v; }),
                   cuts.end());
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i) segs.push_back({m, cuts[i], cuts[i + 1]});
    }

    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    double coarse = 0.0;
    for (auto& sg : segs) {
        auto f = [&](double x) { return detail::elir_integrand(*sg.m, x, 1.0 - x); };
        sg.part = GK::integrate(f, sg.lo, sg.hi, 0, 0.0, &sg.err, &sg.l1);
        coarse += sg.l1;
    }
    // Absolute target shared across segments; a purely relative target never
    // terminates on tail segments where the integrand underflows.
    const double n_seg = static_cast<double>(segs.size());
    const double abs_tol = 1e-10 * std::max(1.0, coarse);
    double total = 0.0, abs_total = 0.0, err_total = 0.0;
    for (auto& sg : segs) {
        // a segment already within 1e-8 of its own L1 norm is at the
        // round-off floor of the integrand; refining it only burns time
        if (sg.err > std::max(abs_tol / n_seg, 1e-8 * sg.l1)) {
            // below ~1e-9 the adaptive error estimates grow instead of shrinking
            const double rel = std::max(abs_tol / (n_seg * std::max(sg.l1, 1e-300)), 1e-9);
            const Segment coarse_sg = sg;
            auto f = [&](double x) { return detail::elir_integrand(*sg.m, x, 1.0 - x); };
            if (sg.lo == 0.0 || sg.err > 1e-3 * sg.l1) {
                // Segments touching 0 may carry an integrable singularity
                // (shape parameters between 1 and 2), and their neighbors the
                // steep x^(a - 2) shoulder of one; tanh-sinh clusters nodes at
                // both ends where GK bisection would need thousands of splits.
                boost::math::quadrature::tanh_sinh<double> ts;
                try {
                    sg.part = ts.integrate(f, sg.lo, sg.hi, rel, &sg.err, &sg.l1);
                } catch (const std::exception& e) {
                    throw NumericalError(std::string("ess_elir: ") + e.what());
                }
            } else {
                sg.part = GK::integrate(f, sg.lo, sg.hi, 15, rel, &sg.err, &sg.l1);
            }
            if (!(sg.err <= coarse_sg.err)) sg = coarse_sg;
        }
        total += sg.part;
        abs_total += sg.l1;
        err_total += sg.err;
    }
    if (!std::isfinite(total) || err_total > 1e-6 * std::max(1.0, abs_total)) {
        throw NumericalError("ess_elir: quadrature did not reach the requested tolerance");
    }
    return total;
}

struct PredictivePmf {
    std::vector<double> pmf;       // P(Y = y), y = 0..n
    int central_lower = 0;         // equal-tailed set holding >= 95% of the mass
    int central_upper = 0;

    bool in_central(int y) const { return y >= central_lower && y <= central_upper; }
};

inline PredictivePmf prior_predictive_pmf(const BetaMixture& mix, int n, double central_mass = 0.95) {
    if (n < 1) throw DomainError("prior_predictive_pmf: n must be >= 1");
    PredictivePmf out;
    out.pmf.assign(n + 1, 0.0);
    for (std::size_t k = 0; k < mix.size(); ++k) {
        const auto& c = mix.component(k);
        for (int y = 0; y <= n; ++y) {
            out.pmf[y] += mix.weight(k) * log_beta_binomial_pmf(y, n, c.a, c.b).prob();
        }
    }
    const double tail = 0.5 * (1.0 - central_mass);
    double cum = 0.0;
    out.central_lower = -1;
    out.central_upper = n;
    for (int y = 0; y <= n; ++y) {
        cum += out.pmf[y];
        if (out.central_lower < 0 && cum > tail) out.central_lower = y;
        if (cum >= 1.0 - tail - 1e-12) {
            out.central_upper = y;
            break;
        }
    }
    if (out.central_lower < 0) out.central_lower = 0;
    return out;
}

struct RobustWeightPoint {
    int y = 0;
    double weight = 0.0;  // posterior weight of the Beta(1, 1)-descended component
};

inline std::vector<RobustWeightPoint> robust_weight_curve(const BetaMixture& informative, int n0, double w_rob,
                                                          const std::vector<int>& y_grid) {
    for (const auto& c : informative.components()) {
        if (is_uniform_component(c)) {
            throw DomainError("robust_weight_curve: prior already holds a Beta(1, 1) component");
        }
    }
    std::vector<RobustWeightPoint> out;
    const BetaMixture robust = robustify(informative, w_rob);
    for (int y : y_grid) {
        if (w_rob == 0.0) {
            out.push_back({y, 0.0});
            continue;
        }
        const BetaMixture post = update(robust, {y, n0});
        // robustify appends the uniform component last; update keeps order
        // unless a weight underflows to zero and is pruned.
        double w = 0.0;
        if (post.size() == robust.size()) {
            w = post.weights().back();
        } else {
            for (std::size_t k = 0; k < post.size(); ++k) {
                const auto& c = post.component(k);
                if (c.a == 1.0 + y && c.b == 1.0 + n0 - y) w = post.weight(k);
            }
        }
        out.push_back({y, w});
    }
    return out;
}

struct PredictionInterval {
    double lower = 0.0;
    double upper = 1.0;
    double a = 0.0;
    double b = 0.0;
    bool rho_clamped = false;

    bool contains(double proportion) const { return proportion >= lower && proportion <= upper; }
};

inline constexpr int kPredictionDraws = 100000;

// Equal-tailed quantiles of simulated y*/n0, y* ~ BetaBin(n0, a, b) with
// (a, b) from the clamped moment prior.
inline PredictionInterval prediction_interval_beta_binomial(const HistoricalControlSet& hcd, int n0, double level,
                                                            RngStream& stream, int draws = kPredictionDraws) {
    if (n0 < 1) throw DomainError("prediction_interval_beta_binomial: n0 must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw DomainError("prediction_interval_beta_binomial: level outside (0, 1)");
    if (draws < kPredictionDraws) throw DomainError("prediction_interval_beta_binomial: need >= 1e5 draws");
    const EmpiricalBayesPrior eb = mom_beta_prior(hcd);
    const auto& c = eb.prior.component(0);

    std::vector<int> counts(n0 + 1, 0);
    for (int i = 0; i < draws; ++i) {
        const double p = sample_beta(stream, c.a, c.b);
        ++counts[sample_binomial(stream, n0, p)];
    }
    // Inverse of the empirical cdf.
    auto quantile = [&](double q) {
        const double target = q * draws;
        long cum = 0;
        for (int y = 0; y <= n0; ++y) {
            cum += counts[y];
            if (cum >= target) return y;
        }
        return n0;
    };
    const double tail = 0.5 * (1.0 - level);
    PredictionInterval out;
    out.lower = static_cast<double>(quantile(tail)) / n0;
    out.upper = static_cast<double>(quantile(1.0 - tail)) / n0;
    out.a = c.a;
    out.b = c.b;
    out.rho_clamped = eb.rho_clamped;
    return out;
}

}  // namespace hcdb
