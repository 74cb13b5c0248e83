#pragma once

// End-to-end analyses built from the library: the analysis of one study with
// all requested methods, prior planning tables, and prior fitting.
//
// Streams for an analysis with seed s: methods use (s, {0}) exactly as
// run_methods does; the prediction-interval screen uses (s, {1}); prior
// fitting uses (s, {2}).

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hcdb/io.hpp"
#include "hcdb/map_prior.hpp"
#include "hcdb/methods.hpp"
#include "hcdb/posterior.hpp"
#include "hcdb/priors.hpp"
#include "hcdb/version.hpp"

namespace hcdb {

inline RngStream analysis_method_stream(std::uint64_t seed) { return RngStream(seed, {0}); }
inline RngStream analysis_screen_stream(std::uint64_t seed) { return RngStream(seed, {1}); }
inline RngStream prior_fit_stream(std::uint64_t seed) { return RngStream(seed, {2}); }

struct ScreenResult {
    bool available = false;
    std::string note;
    MomEstimate mom;
    PredictionInterval interval;
    double control_proportion = 0.0;
    bool within = false;
};

struct AnalysisReport {
    std::uint64_t seed = 0;
    MethodSettings settings;
    StudyData data;
    ScreenResult screen;
    std::vector<MethodOutcome> outcomes;
};

inline ScreenResult drift_screen(const StudyData& d, std::uint64_t seed, double level = 0.95) {
    ScreenResult s;
    s.control_proportion = d.trial.control.proportion();
    try {
        s.mom = estimate_mom(d.historical);
        RngStream stream = analysis_screen_stream(seed);
        s.interval = prediction_interval_beta_binomial(d.historical, d.trial.control.size, level, stream);
        s.available = true;
        s.within = s.interval.contains(s.control_proportion);
        if (s.mom.rho_hat < kRhoFloor) {
            s.note = "moment estimate of the ICC (" + std::to_string(s.mom.rho_hat) + ") was set to 1e-05";
        }
    } catch (const std::exception& e) {
        s.note = e.what();
    }
    return s;
}

inline AnalysisReport analyze_study(const StudyData& d, const std::vector<MethodId>& methods,
                                    const MethodSettings& settings, std::uint64_t seed) {
    if (!d.has_current) throw InputError("analysis needs a current study (control and treatment rows)");
    d.trial.validate();
    AnalysisReport r;
    r.seed = seed;
    r.settings = settings;
    r.data = d;
    r.screen = drift_screen(d, seed);
    r.outcomes = run_methods(d.historical, d.trial, methods, settings, analysis_method_stream(seed));
    return r;
}

namespace detail {

inline json optional_ess(const BetaMixture& mix) {
    try {
        return ess_elir(mix);
    } catch (const std::exception&) {
        return nullptr;
    }
}

inline json audit(std::string_view method, std::uint64_t seed) {
    return json{{"method", method}, {"seed", seed}, {"version", kVersion}};
}

}  // namespace detail

// Prior table in the (weight, a, b) layout plus its ESS.
inline json prior_table_json(const BetaMixture& mix) {
    return json{{"components", mixture_to_json(mix)}, {"mean", mix.mean()}, {"ess", detail::optional_ess(mix)}};
}

inline json report_to_json(const AnalysisReport& r) {
    json j;
    j["software"] = {{"name", "hcdb"}, {"version", kVersion}};
    j["seed"] = r.seed;
    j["settings"] = {{"alpha", r.settings.alpha},
                     {"w_rob", r.settings.w_rob},
                     {"posterior_draws", r.settings.posterior_draws},
                     {"mcmc_chains", r.settings.nnhm.chains},
                     {"mcmc_iterations", r.settings.nnhm.iterations},
                     {"mcmc_warmup", r.settings.nnhm.warmup},
                     {"map_components_max", r.settings.map_components}};
    j["dataset"] = study_to_json(r.data);

    json screen = detail::audit("PREDICTION_INTERVAL", r.seed);
    screen["available"] = r.screen.available;
    screen["control_proportion"] = r.screen.control_proportion;
    if (r.screen.available) {
        screen["level"] = 0.95;
        screen["lower"] = r.screen.interval.lower;
        screen["upper"] = r.screen.interval.upper;
        screen["within"] = r.screen.within;
        screen["pi_hat"] = r.screen.mom.pi_hat;
        screen["rho_hat"] = r.screen.mom.rho_hat;
        screen["rho_used"] = std::max(r.screen.mom.rho_hat, kRhoFloor);
        screen["a"] = r.screen.interval.a;
        screen["b"] = r.screen.interval.b;
    }
    if (!r.screen.note.empty()) screen["note"] = r.screen.note;
    j["screen"] = screen;

    j["methods"] = json::array();
    for (const auto& o : r.outcomes) {
        json m = detail::audit(method_name(o.id), r.seed);
        m["ok"] = o.ok;
        if (!o.diagnostic.empty()) m["diagnostic"] = o.diagnostic;
        if (uses_map(o.id)) m["rhat_max"] = o.rhat_max;
        if (!is_bayesian(o.id)) m["boundary"] = o.boundary;
        if (o.pooled) {
            m["pooled_control"] = {{"events", o.pooled->events},
                                   {"size", o.pooled->size},
                                   {"historical_groups_kept", o.pooled->kept_history}};
        }
        if (o.prior) m["prior"] = prior_table_json(*o.prior);
        if (o.posterior) m["posterior"] = prior_table_json(*o.posterior);
        json arms = json::array();
        if (!o.limits.lower.empty()) {
            const Decision dec = decide(o.limits);
            for (std::size_t a = 0; a < o.limits.lower.size(); ++a) {
                arms.push_back({{"arm", r.data.treatment_ids[a]},
                                {"estimate", a < o.estimates.size() ? json(o.estimates[a]) : json(nullptr)},
                                {"lower_limit", o.limits.lower[a]},
                                {"rejected", o.ok && dec.rejected[a]}});
            }
        }
        m["arms"] = arms;
        j["methods"].push_back(m);
    }
    return j;
}

// Flat table: one row per (method, arm).
inline void write_limits_csv(std::ostream& os, const AnalysisReport& r) {
    os << "method,arm,estimate,lower_limit,rejected,ok,seed,version\n";
    char buf[64];
    for (const auto& o : r.outcomes) {
        const Decision dec = decide(o.limits);
        for (std::size_t a = 0; a < r.data.treatment_ids.size(); ++a) {
            os << method_name(o.id) << ',' << r.data.treatment_ids[a] << ',';
            if (a < o.estimates.size()) {
                std::snprintf(buf, sizeof buf, "%.8g", o.estimates[a]);
                os << buf;
            } else {
                os << "NA";
            }
            os << ',';
            if (a < o.limits.lower.size()) {
                std::snprintf(buf, sizeof buf, "%.8g", o.limits.lower[a]);
                os << buf << ',' << (o.ok && dec.rejected[a] ? 1 : 0);
            } else {
                os << "NA,NA";
            }
            os << ',' << (o.ok ? 1 : 0) << ',' << r.seed << ',' << kVersion << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Planning

struct PlanResult {
    BetaMixture prior;
    int n0 = 0;
    std::vector<double> w_robs;
    PredictivePmf predictive;
    std::vector<std::vector<RobustWeightPoint>> curves;  // one per w_rob
};

// Prior predictive of y0 under the informative prior and the posterior
// weight of the robust component for each candidate w_rob.
inline PlanResult plan_study(const BetaMixture& informative, int n0, const std::vector<double>& w_robs) {
    if (n0 < 1) throw InputError("n0 must be >= 1");
    PlanResult p;
    p.prior = informative;
    p.n0 = n0;
    p.w_robs = w_robs;
    p.predictive = prior_predictive_pmf(informative, n0, 0.95);
    std::vector<int> grid(n0 + 1);
    for (int y = 0; y <= n0; ++y) grid[y] = y;
    for (double w : w_robs) {
        if (!(w >= 0.0 && w <= 1.0)) throw InputError("w_rob must lie in [0, 1]");
        p.curves.push_back(robust_weight_curve(informative, n0, w, grid));
    }
    return p;
}

inline void write_plan_csv(std::ostream& os, const PlanResult& p) {
    os << "y,pmf,in_central95";
    char buf[64];
    for (double w : p.w_robs) {
        std::snprintf(buf, sizeof buf, ",w%g", w);
        os << buf;
    }
    os << '\n';
    for (int y = 0; y <= p.n0; ++y) {
        std::snprintf(buf, sizeof buf, "%d,%.10g,%d", y, p.predictive.pmf[y], p.predictive.in_central(y) ? 1 : 0);
        os << buf;
        for (const auto& c : p.curves) {
            std::snprintf(buf, sizeof buf, ",%.10g", c[y].weight);
            os << buf;
        }
        os << '\n';
    }
}

inline json plan_to_json(const PlanResult& p, std::uint64_t seed, std::string_view prior_method) {
    json j;
    j["software"] = {{"name", "hcdb"}, {"version", kVersion}};
    j["seed"] = seed;
    j["prior"] = prior_table_json(p.prior);
    j["prior"]["method"] = prior_method;
    j["n0"] = p.n0;
    j["central95"] = {{"lower", p.predictive.central_lower}, {"upper", p.predictive.central_upper}};
    j["curves"] = json::array();
    for (std::size_t i = 0; i < p.w_robs.size(); ++i) {
        json c = {{"w_rob", p.w_robs[i]}, {"weights", json::array()}};
        for (const auto& pt : p.curves[i]) c["weights"].push_back(pt.weight);
        j["curves"].push_back(c);
    }
    j["pmf"] = p.predictive.pmf;
    return j;
}

// ---------------------------------------------------------------------------
// Prior fitting

struct FittedPrior {
    std::string method;  // "MAP" or "EMP_BAYES"
    BetaMixture prior;
    std::optional<MapPrior> map;
    std::optional<EmpiricalBayesPrior> eb;
};

inline FittedPrior fit_prior(const HistoricalControlSet& hcd, const std::string& method,
                             const MethodSettings& settings, std::uint64_t seed) {
    FittedPrior f;
    f.method = method;
    if (method == "MAP") {
        const NnhmConfig cfg = nnhm_config_for(hcd, settings.nnhm);
        f.map = map_prior(hcd, cfg, prior_fit_stream(seed), settings.map_components, settings.em);
        if (!f.map->converged) {
            throw NumericalError("MAP MCMC did not converge (max R-hat " + std::to_string(f.map->rhat_max) + ")");
        }
        f.prior = f.map->prior;
    } else if (method == "EMP_BAYES") {
        f.eb = mom_beta_prior(hcd);
        f.prior = f.eb->prior;
    } else {
        throw InputError("unknown prior method '" + method + "' (use MAP or EMP_BAYES)");
    }
    return f;
}

inline json fitted_prior_to_json(const FittedPrior& f, std::uint64_t seed) {
    json j;
    j["components"] = mixture_to_json(f.prior);
    json meta = detail::audit(f.method, seed);
    meta["ess"] = detail::optional_ess(f.prior);
    meta["mean"] = f.prior.mean();
    if (f.map) {
        meta["rhat_max"] = f.map->rhat_max;
        meta["aic"] = f.map->aic;
        meta["predictive_draws"] = f.map->draws;
    }
    if (f.eb) {
        meta["pi_hat"] = f.eb->estimate.pi_hat;
        meta["rho_hat"] = f.eb->estimate.rho_hat;
        meta["rho_used"] = f.eb->rho_used;
        meta["rho_clamped"] = f.eb->rho_clamped;
        meta["degenerate"] = f.eb->degenerate;
    }
    j["meta"] = meta;
    return j;
}

}  // namespace hcdb
