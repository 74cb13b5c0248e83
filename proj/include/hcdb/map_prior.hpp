#pragma once

// Meta-analytic predictive prior: predictive draws of a new control
// probability from the random-effects model, approximated by a beta mixture
// whose component count is chosen by AIC.

#include <cmath>
#include <limits>
#include <vector>

#include "hcdb/beta_em.hpp"
#include "hcdb/nnhm.hpp"
#include "hcdb/priors.hpp"

namespace hcdb {

struct MapPrior {
    BetaMixture prior;
    std::vector<double> aic;  // aic[k-1] for the k-component fit
    double loglik = 0.0;
    double rhat_max = 0.0;
    bool converged = false;
    double draws_mean = 0.0;
    double draws_mc_se = 0.0;  // naive se of the draw mean
    std::size_t draws = 0;
};

// Config with the tau prior scale set from the data.
inline NnhmConfig nnhm_config_for(const HistoricalControlSet& hcd, NnhmConfig base = {}) {
    base.tau_prior_scale = tau_prior_scale(hcd);
    return base;
}

inline MapPrior map_prior(const HistoricalControlSet& hcd, const NnhmConfig& cfg, const RngStream& stream,
                          int K_max = 3, const EmConfig& em = {}, bool fit_unconverged = true) {
    if (K_max < 1) throw DomainError("map_prior: K_max must be >= 1");
    const McmcResult mcmc = fit_nnhm_mcmc(hcd, cfg, stream);

    MapPrior out;
    out.rhat_max = mcmc.rhat_max;
    out.converged = mcmc.converged;
    out.draws = mcmc.predictive_draws.size();
    double m = 0.0;
    for (double p : mcmc.predictive_draws) m += p;
    m /= out.draws;
    double v = 0.0;
    for (double p : mcmc.predictive_draws) v += (p - m) * (p - m);
    v /= (out.draws - 1.0);
    out.draws_mean = m;
    out.draws_mc_se = std::sqrt(v / out.draws);

    if (!out.converged && !fit_unconverged) return out;

    double best_aic = std::numeric_limits<double>::infinity();
    for (int K = 1; K <= K_max; ++K) {
        const BetaMixtureFit fit = fit_beta_mixture_em(mcmc.predictive_draws, K, em);
        const double aic = beta_mixture_aic(fit);
        out.aic.push_back(aic);
        if (aic < best_aic) {
            best_aic = aic;
            out.prior = fit.mixture;
            out.loglik = fit.loglik;
        }
    }
    return out;
}

}  // namespace hcdb
