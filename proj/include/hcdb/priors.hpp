#pragma once

// Empirical-Bayes beta prior from historical controls, robustification, and
// the scale rule for the half-normal prior on the between-study sd.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hcdb/errors.hpp"
#include "hcdb/mixture.hpp"
#include "hcdb/model.hpp"

namespace hcdb {

struct MomEstimate {
    double pi_hat = 0.0;
    double rho_hat = 0.0;  // may be negative
    bool clamped = false;  // set when rho_hat was raised to the floor
};

// Moment estimates of the pooled proportion and the ANOVA intra-class
// correlation for clustered binary data.
inline MomEstimate estimate_mom(const HistoricalControlSet& hcd) {
    hcd.validate();
    const std::size_t H = hcd.count();
    if (H < 2) throw DomainError("estimate_mom: need at least two historical groups");
    const double N = hcd.total_size();
    if (!(N > 0.0)) throw DomainError("estimate_mom: total size is zero");
    const double pi_hat = hcd.total_events() / N;

    double bss = 0.0, wss = 0.0, wdf = 0.0, sum_n2 = 0.0;
    for (const auto& g : hcd.groups) {
        const double p = g.proportion();
        bss += g.size * (p - pi_hat) * (p - pi_hat);
        wss += g.size * p * (1.0 - p);
        wdf += g.size - 1.0;
        sum_n2 += static_cast<double>(g.size) * g.size;
    }
    if (!(wdf > 0.0)) throw DomainError("estimate_mom: every group has size 1, ICC undefined");
    const double bms = bss / (H - 1.0);
    const double wms = wss / wdf;
    const double n_star = (N - sum_n2 / N) / (H - 1.0);
    const double denom = bms + (n_star - 1.0) * wms;

    MomEstimate est;
    est.pi_hat = pi_hat;
    // All groups at 0 or at n: no variability at all, treat as no overdispersion.
    est.rho_hat = denom > 0.0 ? (bms - wms) / denom : 0.0;
    return est;
}

inline constexpr double kRhoFloor = 1e-05;
inline constexpr double kDegenerateShape = 0.5;

struct EmpiricalBayesPrior {
    BetaMixture prior;
    MomEstimate estimate;
    double rho_used = 0.0;
    double raw_a = 0.0;  // before the min(., sum) clamps
    double raw_b = 0.0;
    bool rho_clamped = false;
    bool a_clamped = false;
    bool b_clamped = false;
    bool degenerate = false;  // a or b clamped to zero and replaced by 0.5
};

inline EmpiricalBayesPrior mom_beta_prior(const HistoricalControlSet& hcd) {
    EmpiricalBayesPrior out;
    out.estimate = estimate_mom(hcd);
    out.rho_used = std::max(kRhoFloor, out.estimate.rho_hat);
    out.rho_clamped = out.rho_used != out.estimate.rho_hat;
    out.estimate.clamped = out.rho_clamped;

    const double precision = (1.0 - out.rho_used) / out.rho_used;
    out.raw_a = out.estimate.pi_hat * precision;
    out.raw_b = precision - out.raw_a;

    const double events = hcd.total_events();
    const double non_events = hcd.total_size() - events;
    if (events <= 0.0 && non_events <= 0.0) {
        throw DomainError("mom_beta_prior: historical data carry no observations");
    }
    double a = std::min(out.raw_a, events);
    double b = std::min(out.raw_b, non_events);
    out.a_clamped = a < out.raw_a;
    out.b_clamped = b < out.raw_b;
    if (!(a > 0.0)) {
        a = kDegenerateShape;
        out.degenerate = true;
    }
    if (!(b > 0.0)) {
        b = kDegenerateShape;
        out.degenerate = true;
    }
    out.prior = BetaMixture::single(a, b);
    return out;
}

inline bool is_uniform_component(const BetaComponent& c) { return c.a == 1.0 && c.b == 1.0; }

// (1 - w) * prior + w * Beta(1, 1). The uniform component is always last.
inline BetaMixture robustify(const BetaMixture& prior, double w_rob) {
    if (!(w_rob >= 0.0 && w_rob <= 1.0)) throw DomainError("robustify: weight outside [0, 1]");
    std::vector<double> w;
    std::vector<BetaComponent> c;
    for (std::size_t k = 0; k < prior.size(); ++k) {
        w.push_back(prior.weight(k) * (1.0 - w_rob));
        c.push_back(prior.component(k));
    }
    w.push_back(w_rob);
    c.push_back({1.0, 1.0});
    return BetaMixture::normalized(std::move(w), std::move(c));
}

// Scale of the half-normal prior on tau: 1 for mean proportions in [0.2, 0.8],
// otherwise half the unit-information sd on the logit scale.
inline double tau_prior_scale(const HistoricalControlSet& hcd) {
    hcd.validate();
    double mean_p = 0.0;
    for (const auto& g : hcd.groups) mean_p += g.proportion();
    mean_p /= static_cast<double>(hcd.count());
    if (mean_p >= 0.2 && mean_p <= 0.8) return 1.0;
    if (mean_p <= 0.0 || mean_p >= 1.0) {
        throw DomainError(
            "tau_prior_scale: mean historical proportion is 0 or 1; add a continuity "
            "correction or supply the prior scale explicitly");
    }
    return 0.5 / std::sqrt(mean_p * (1.0 - mean_p));
}

}  // namespace hcdb
