#pragma once

// The eleven analysis methods compared in the simulations, each producing
// simultaneous lower limits for pi_m / pi_0 from one dataset.

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hcdb/freq.hpp"
#include "hcdb/inference.hpp"
#include "hcdb/map_prior.hpp"
#include "hcdb/posterior.hpp"
#include "hcdb/priors.hpp"

namespace hcdb {

enum class MethodId {
    GLM,
    BGLM,
    NAIVE_POOL,
    TAP,
    NAIVE_POOL_B,
    TAP_B,
    BETA11,
    EMP_BAYES,
    EMP_BAYES_ROBUST,
    MAP,
    MAP_ROBUST,
};

inline constexpr std::array<MethodId, 11> kAllMethods{
    MethodId::GLM,    MethodId::BGLM,      MethodId::NAIVE_POOL,       MethodId::TAP,
    MethodId::NAIVE_POOL_B, MethodId::TAP_B, MethodId::BETA11, MethodId::EMP_BAYES,
    MethodId::EMP_BAYES_ROBUST, MethodId::MAP, MethodId::MAP_ROBUST,
};

inline std::string_view method_name(MethodId id) {
    switch (id) {
        case MethodId::GLM: return "GLM";
        case MethodId::BGLM: return "BGLM";
        case MethodId::NAIVE_POOL: return "NAIVE_POOL";
        case MethodId::TAP: return "TAP";
        case MethodId::NAIVE_POOL_B: return "NAIVE_POOL_B";
        case MethodId::TAP_B: return "TAP_B";
        case MethodId::BETA11: return "BETA11";
        case MethodId::EMP_BAYES: return "EMP_BAYES";
        case MethodId::EMP_BAYES_ROBUST: return "EMP_BAYES_ROBUST";
        case MethodId::MAP: return "MAP";
        case MethodId::MAP_ROBUST: return "MAP_ROBUST";
    }
    return "?";
}

inline std::optional<MethodId> parse_method(std::string_view name) {
    for (MethodId id : kAllMethods) {
        if (method_name(id) == name) return id;
    }
    return std::nullopt;
}

inline bool is_bayesian(MethodId id) {
    return id == MethodId::BETA11 || id == MethodId::EMP_BAYES || id == MethodId::EMP_BAYES_ROBUST ||
           id == MethodId::MAP || id == MethodId::MAP_ROBUST;
}

inline bool uses_map(MethodId id) { return id == MethodId::MAP || id == MethodId::MAP_ROBUST; }

struct MethodSettings {
    double alpha = 0.05;
    double w_rob = 0.2;
    std::size_t posterior_draws = 10000;
    NnhmConfig nnhm{};  // tau_prior_scale is replaced from the data
    int map_components = 3;
    EmConfig em{};
    double tap_alpha = 0.05;
    RegularizationConfig regularization{};
    bool skip_unconverged_map = false;  // skip posterior sampling when MAP is discarded anyway
};

struct MethodOutcome {
    MethodId id = MethodId::GLM;
    bool ok = false;  // false: fit failed or did not converge; excluded from rates
    std::string diagnostic;
    SimultaneousLimits limits;
    std::vector<double> estimates;
    bool boundary = false;
    std::optional<BetaMixture> prior;
    std::optional<BetaMixture> posterior;
    std::optional<PooledControl> pooled;
    double rhat_max = 0.0;
};

namespace detail {

inline constexpr std::uint64_t kMapStreamIndex = 1000;

inline std::size_t method_index(MethodId id) {
    return static_cast<std::size_t>(std::find(kAllMethods.begin(), kAllMethods.end(), id) - kAllMethods.begin());
}

inline MethodOutcome run_frequentist(MethodId id, const HistoricalControlSet& hcd, const CurrentTrial& trial,
                                     const MethodSettings& s, RngStream stream) {
    MethodOutcome out;
    out.id = id;
    ControlGroup control = trial.control;
    if (id == MethodId::NAIVE_POOL || id == MethodId::NAIVE_POOL_B) {
        out.pooled = pool_naive(trial, hcd);
        control = out.pooled->group();
    } else if (id == MethodId::TAP || id == MethodId::TAP_B) {
        out.pooled = test_then_pool(trial, hcd, s.tap_alpha);
        control = out.pooled->group();
    }
    const bool regularized = id == MethodId::BGLM || id == MethodId::NAIVE_POOL_B || id == MethodId::TAP_B;
    const GlmFit fit = regularized ? fit_regularized_glm(control, trial.treatments, s.regularization)
                                   : fit_log_binomial_glm(control, trial.treatments);
    out.boundary = fit.boundary;
    const FreqLimits fl = simultaneous_lower_rr_limits(fit, 1.0 - s.alpha, stream);
    out.limits = fl.limits;
    out.estimates = fl.estimates;
    out.ok = fit.converged && fl.limits.valid;
    if (!out.ok) out.diagnostic = "GLM did not converge";
    return out;
}

inline MethodOutcome run_bayesian(MethodId id, const BetaMixture& prior, const CurrentTrial& trial,
                                  const MethodSettings& s, const RngStream& stream) {
    MethodOutcome out;
    out.id = id;
    out.prior = prior;
    out.posterior = update(prior, trial.control);
    const DrawMatrix joint = sample_joint_posterior(trial, prior, s.posterior_draws, stream);
    const RatioDrawMatrix ratios = ratio_draws(joint);
    out.limits = besag_lower_limits(ratios, s.alpha);
    for (std::size_t m = 0; m < ratios.M(); ++m) {
        std::vector<double> col = ratios.draws.column(m);
        const std::size_t mid = col.size() / 2;
        std::nth_element(col.begin(), col.begin() + mid, col.end());
        out.estimates.push_back(col[mid]);
    }
    out.ok = true;
    return out;
}

}  // namespace detail

// Runs the requested methods on one dataset. Method i draws from
// stream.child(i); the MAP fit (shared by MAP and MAP_ROBUST) from a
// dedicated child. Failures are isolated per method.
inline std::vector<MethodOutcome> run_methods(const HistoricalControlSet& hcd, const CurrentTrial& trial,
                                              const std::vector<MethodId>& methods, const MethodSettings& s,
                                              const RngStream& stream) {
    std::vector<MethodOutcome> out;
    std::optional<EmpiricalBayesPrior> eb;
    std::optional<MapPrior> map;
    std::string map_error, eb_error;
    bool map_tried = false, eb_tried = false;

    for (MethodId id : methods) {
        const RngStream ms = stream.child(detail::method_index(id));
        MethodOutcome o;
        o.id = id;
        try {
            if (!is_bayesian(id)) {
                o = detail::run_frequentist(id, hcd, trial, s, ms);
            } else if (id == MethodId::BETA11) {
                o = detail::run_bayesian(id, BetaMixture::uniform(), trial, s, ms);
            } else if (id == MethodId::EMP_BAYES || id == MethodId::EMP_BAYES_ROBUST) {
                if (!eb_tried) {
                    eb_tried = true;
                    try {
                        eb = mom_beta_prior(hcd);
                    } catch (const std::exception& e) {
                        eb_error = e.what();
                    }
                }
                if (!eb) throw NumericalError(eb_error);
                const BetaMixture prior = id == MethodId::EMP_BAYES ? eb->prior : robustify(eb->prior, s.w_rob);
                o = detail::run_bayesian(id, prior, trial, s, ms);
            } else {
                if (!map_tried) {
                    map_tried = true;
                    try {
                        const NnhmConfig cfg = nnhm_config_for(hcd, s.nnhm);
                        map = map_prior(hcd, cfg, stream.child(detail::kMapStreamIndex), s.map_components, s.em,
                                        !s.skip_unconverged_map);
                    } catch (const std::exception& e) {
                        map_error = e.what();
                    }
                }
                if (!map) throw NumericalError(map_error);
                if (!map->converged && s.skip_unconverged_map) {
                    o.ok = false;
                    o.rhat_max = map->rhat_max;
                    o.diagnostic = "MAP MCMC did not converge";
                    out.push_back(std::move(o));
                    continue;
                }
                const BetaMixture prior = id == MethodId::MAP ? map->prior : robustify(map->prior, s.w_rob);
                o = detail::run_bayesian(id, prior, trial, s, ms);
                o.rhat_max = map->rhat_max;
                if (!map->converged) {
                    o.ok = false;
                    o.diagnostic = "MAP MCMC did not converge (max R-hat " + std::to_string(map->rhat_max) + ")";
                }
            }
        } catch (const std::exception& e) {
            o = MethodOutcome{};
            o.id = id;
            o.ok = false;
            o.diagnostic = e.what();
        }
        out.push_back(std::move(o));
    }
    return out;
}

}  // namespace hcdb
