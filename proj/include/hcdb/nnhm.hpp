#pragma once

// Random-effects logistic model for historical control groups:
//
//   y_h ~ Bin(n_h, logistic(theta_h)),  theta_h ~ N(mu, tau^2),
//   mu ~ N(0, mu_prior_sd^2),           tau ~ halfNormal(0, tau_prior_scale)
//
// sampled by adaptive random-walk Metropolis-within-Gibbs. Each sweep updates
// theta_h one at a time, draws mu from its conditional, and moves tau twice:
// once holding theta fixed and once holding the standardized effects
// (theta_h - mu) / tau fixed. The second move keeps the chain mobile when tau
// is close to zero. Post-warmup sweeps emit predictive draws
// logistic(mu + tau * z) for a new control group.

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <vector>

#include "hcdb/distributions.hpp"
#include "hcdb/errors.hpp"
#include "hcdb/model.hpp"
#include "hcdb/rng.hpp"

namespace hcdb {

struct NnhmConfig {
    double mu_prior_sd = 2.0;
    double tau_prior_scale = 1.0;
    int chains = 4;
    int iterations = 3000;  // per chain, including warmup
    int warmup = 1000;
    bool parallel_chains = false;

    void validate() const {
        if (!(mu_prior_sd > 0.0)) throw DomainError("NnhmConfig: mu_prior_sd must be > 0");
        if (!(tau_prior_scale > 0.0)) throw DomainError("NnhmConfig: tau_prior_scale must be > 0");
        if (chains < 2) throw DomainError("NnhmConfig: split R-hat needs at least two chains");
        if (!(warmup >= 1 && iterations > warmup)) {
            throw DomainError("NnhmConfig: need iterations > warmup >= 1");
        }
        if (iterations - warmup < 4) throw DomainError("NnhmConfig: too few sampling iterations");
    }
};

inline constexpr double kRhatThreshold = 1.05;

struct McmcResult {
    std::vector<double> predictive_draws;  // probabilities in (0, 1)
    std::vector<double> mu_draws;
    std::vector<double> tau_draws;
    double rhat_max = 0.0;
    bool converged = false;
};

inline double logistic(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Split R-hat over equally long chains.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
    if (chains.size() < 1) throw DomainError("split_rhat: no chains");
    const std::size_t len = chains.front().size();
    for (const auto& c : chains) {
        if (c.size() != len) throw DomainError("split_rhat: chains differ in length");
    }
    const std::size_t half = len / 2;
    if (half < 2) throw DomainError("split_rhat: chains too short");

    std::vector<double> means, vars;
    for (const auto& c : chains) {
        for (int part = 0; part < 2; ++part) {
            const std::size_t begin = part == 0 ? 0 : len - half;
            double m = 0.0;
            for (std::size_t i = 0; i < half; ++i) m += c[begin + i];
            m /= half;
            double v = 0.0;
            for (std::size_t i = 0; i < half; ++i) v += (c[begin + i] - m) * (c[begin + i] - m);
            v /= (half - 1.0);
            means.push_back(m);
            vars.push_back(v);
        }
    }
    const double n = static_cast<double>(half);
    const double k = static_cast<double>(means.size());
    const double grand = std::accumulate(means.begin(), means.end(), 0.0) / k;
    double between = 0.0;
    for (double m : means) between += (m - grand) * (m - grand);
    between *= n / (k - 1.0);
    const double within = std::accumulate(vars.begin(), vars.end(), 0.0) / k;
    if (!(within > 0.0)) return between > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
    const double var_plus = (n - 1.0) / n * within + between / n;
    return std::sqrt(var_plus / within);
}

namespace detail {

inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double binom_logit_loglik(const ControlGroup& g, double theta) {
    return g.events * theta - g.size * softplus(theta);
}

// Step-size controller: scales the proposal sd by 1.2 per batch when the
// acceptance rate leaves [0.23, 0.44]. Frozen after warmup.
struct StepSize {
    double sd = 0.5;
    int accepted = 0;
    int proposed = 0;

    void record(bool acc) {
        ++proposed;
        if (acc) ++accepted;
    }

    void adapt() {
        if (proposed == 0) return;
        const double rate = static_cast<double>(accepted) / proposed;
        if (rate > 0.44) sd *= 1.2;
        if (rate < 0.23) sd /= 1.2;
        sd = std::clamp(sd, 1e-4, 50.0);
        accepted = proposed = 0;
    }
};

struct ChainTrace {
    std::vector<double> mu, tau, predictive;
};

inline ChainTrace run_nnhm_chain(const HistoricalControlSet& hcd, const NnhmConfig& cfg,
                                 RngStream stream) {
    const std::size_t H = hcd.count();
    std::vector<double> theta(H);
    for (std::size_t h = 0; h < H; ++h) {
        const auto& g = hcd.groups[h];
        theta[h] = logit((g.events + 0.5) / (g.size + 1.0)) + sample_gaussian(stream, 0.0, 0.3);
    }
    double mu = std::accumulate(theta.begin(), theta.end(), 0.0) / H +
                sample_gaussian(stream, 0.0, 0.5);
    double log_tau = std::log(0.5 * cfg.tau_prior_scale) + sample_gaussian(stream, 0.0, 0.5);

    std::vector<StepSize> theta_step(H);
    StepSize tau_step, tau_nc_step, mu_nc_step;
    std::vector<double> loglik(H);
    for (std::size_t h = 0; h < H; ++h) loglik[h] = binom_logit_loglik(hcd.groups[h], theta[h]);

    const double mu_prec0 = 1.0 / (cfg.mu_prior_sd * cfg.mu_prior_sd);
    const double tau_s2 = cfg.tau_prior_scale * cfg.tau_prior_scale;
    // log p(log tau) up to a constant: halfNormal prior on tau plus Jacobian.
    auto log_tau_prior = [&](double u) { return u - std::exp(2.0 * u) / (2.0 * tau_s2); };

    const int kept = cfg.iterations - cfg.warmup;
    ChainTrace trace;
    trace.mu.reserve(kept);
    trace.tau.reserve(kept);
    trace.predictive.reserve(kept);
    std::vector<double> proposal(H), proposal_ll(H);

    for (int it = 0; it < cfg.iterations; ++it) {
        const bool warm = it < cfg.warmup;
        double tau = std::exp(log_tau);
        double inv_tau2 = 1.0 / (tau * tau);

        for (std::size_t h = 0; h < H; ++h) {
            const double prop = theta[h] + theta_step[h].sd * sample_gaussian(stream, 0.0, 1.0);
            const double ll = binom_logit_loglik(hcd.groups[h], prop);
            const double d_old = theta[h] - mu, d_new = prop - mu;
            const double log_ratio = ll - loglik[h] - 0.5 * inv_tau2 * (d_new * d_new - d_old * d_old);
            const bool acc = std::log(stream.uniform()) < log_ratio;
            if (acc) {
                theta[h] = prop;
                loglik[h] = ll;
            }
            theta_step[h].record(acc);
        }

        {
            const double sum = std::accumulate(theta.begin(), theta.end(), 0.0);
            const double prec = H * inv_tau2 + mu_prec0;
            mu = sample_gaussian(stream, (sum * inv_tau2) / prec, 1.0 / std::sqrt(prec));
        }

        auto centered_ss = [&]() {
            double ss = 0.0;
            for (double t : theta) ss += (t - mu) * (t - mu);
            return ss;
        };

        {
            const double ss = centered_ss();
            const double prop = log_tau + tau_step.sd * sample_gaussian(stream, 0.0, 1.0);
            auto target = [&](double u) {
                return -static_cast<double>(H) * u - ss * std::exp(-2.0 * u) / 2.0 + log_tau_prior(u);
            };
            const bool acc = std::log(stream.uniform()) < target(prop) - target(log_tau);
            if (acc) log_tau = prop;
            tau_step.record(acc);
        }

        {
            // Standardized effects fixed; theta rescales around mu.
            const double prop = log_tau + tau_nc_step.sd * sample_gaussian(stream, 0.0, 1.0);
            const double scale = std::exp(prop - log_tau);
            double delta = log_tau_prior(prop) - log_tau_prior(log_tau);
            for (std::size_t h = 0; h < H; ++h) {
                proposal[h] = mu + (theta[h] - mu) * scale;
                proposal_ll[h] = binom_logit_loglik(hcd.groups[h], proposal[h]);
                delta += proposal_ll[h] - loglik[h];
            }
            const bool acc = std::log(stream.uniform()) < delta;
            if (acc) {
                log_tau = prop;
                theta.swap(proposal);
                loglik.swap(proposal_ll);
            }
            tau_nc_step.record(acc);
        }

        {
            // Shift mu and all theta together.
            const double shift = mu_nc_step.sd * sample_gaussian(stream, 0.0, 1.0);
            const double prop_mu = mu + shift;
            double delta = -0.5 * mu_prec0 * (prop_mu * prop_mu - mu * mu);
            for (std::size_t h = 0; h < H; ++h) {
                proposal[h] = theta[h] + shift;
                proposal_ll[h] = binom_logit_loglik(hcd.groups[h], proposal[h]);
                delta += proposal_ll[h] - loglik[h];
            }
            const bool acc = std::log(stream.uniform()) < delta;
            if (acc) {
                mu = prop_mu;
                theta.swap(proposal);
                loglik.swap(proposal_ll);
            }
            mu_nc_step.record(acc);
        }

        if (warm) {
            if ((it + 1) % 50 == 0) {
                for (auto& s : theta_step) s.adapt();
                tau_step.adapt();
                tau_nc_step.adapt();
                mu_nc_step.adapt();
            }
            continue;
        }
        tau = std::exp(log_tau);
        const double theta_new = mu + tau * sample_gaussian(stream, 0.0, 1.0);
        trace.mu.push_back(mu);
        trace.tau.push_back(tau);
        trace.predictive.push_back(std::clamp(logistic(theta_new), 1e-12, 1.0 - 1e-12));
    }
    return trace;
}

}  // namespace detail

inline McmcResult fit_nnhm_mcmc(const HistoricalControlSet& hcd, const NnhmConfig& cfg,
                                const RngStream& stream) {
    hcd.validate();
    cfg.validate();
    if (hcd.count() < 2) throw DomainError("fit_nnhm_mcmc: need at least two historical groups");

    std::vector<detail::ChainTrace> traces(cfg.chains);
    if (cfg.parallel_chains) {
        std::vector<std::future<detail::ChainTrace>> futures;
        for (int c = 0; c < cfg.chains; ++c) {
            futures.push_back(std::async(std::launch::async, detail::run_nnhm_chain, std::cref(hcd),
                                         std::cref(cfg), stream.child(c)));
        }
        for (int c = 0; c < cfg.chains; ++c) traces[c] = futures[c].get();
    } else {
        for (int c = 0; c < cfg.chains; ++c) traces[c] = detail::run_nnhm_chain(hcd, cfg, stream.child(c));
    }

    McmcResult out;
    std::vector<std::vector<double>> mu_chains, tau_chains;
    for (auto& t : traces) {
        out.predictive_draws.insert(out.predictive_draws.end(), t.predictive.begin(), t.predictive.end());
        out.mu_draws.insert(out.mu_draws.end(), t.mu.begin(), t.mu.end());
        out.tau_draws.insert(out.tau_draws.end(), t.tau.begin(), t.tau.end());
        mu_chains.push_back(std::move(t.mu));
        tau_chains.push_back(std::move(t.tau));
    }
    out.rhat_max = std::max(split_rhat(mu_chains), split_rhat(tau_chains));
    out.converged = out.rhat_max < kRhatThreshold;
    return out;
}

}  // namespace hcdb
