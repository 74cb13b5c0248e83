#pragma once

// Monte-Carlo estimation of familywise error rate (FWER) and any-pair power
// (APP) over a grid of scenarios.
//
// Replicate s of cell c draws its dataset from stream (seed, {c, s, 0}) and
// its analyses from (seed, {c, s, 1}); all methods see the same dataset.
// Work is spread over threads by (cell, replicate) and reduced by key, so
// output does not depend on the worker count.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hcdb/errors.hpp"
#include "hcdb/methods.hpp"
#include "hcdb/model.hpp"
#include "hcdb/rng.hpp"

namespace hcdb {

enum class RateKind { Fwer, App };

inline std::string_view rate_kind_name(RateKind k) { return k == RateKind::Fwer ? "fwer" : "app"; }

struct RateEstimate {
    double rate = 0.0;
    double mc_se = 0.0;
};

inline RateEstimate estimate_rate(std::span<const int> indicators) {
    if (indicators.empty()) throw DomainError("estimate_rate: no indicators");
    double sum = 0.0;
    for (int i : indicators) sum += i;
    const double n = static_cast<double>(indicators.size());
    const double r = sum / n;
    return {r, std::sqrt(r * (1.0 - r) / n)};
}

struct CellResult {
    ScenarioConfig scenario;
    std::string method;
    RateKind kind = RateKind::Fwer;
    int S = 0;
    int S_converged = 0;
    std::optional<double> rate;  // empty when no replicate converged
    double mc_se = 0.0;
    std::string diagnostic;
};

// Result of one method on one replicate.
struct ReplicateOutcome {
    bool ok = false;
    bool any_rejection = false;
    std::string diagnostic;
};

// Evaluates every method on one dataset; must return one outcome per method,
// in a fixed order.
using ReplicateEvaluator =
    std::function<std::vector<ReplicateOutcome>(const HistoricalControlSet&, const CurrentTrial&, const RngStream&)>;

struct HarnessOptions {
    int S = 2000;
    std::uint64_t master_seed = 20240601;
    int workers = 1;
    std::function<void(std::size_t done, std::size_t total)> progress;
};

// Core driver. Rates are the fraction of converged replicates with at least
// one rejection: for FWER that is 1 - mean(I_s) with I_s = 1 when all limits
// are <= 1; for APP it is the any-rejection rate itself.
inline std::vector<CellResult> run_grid_with(RateKind kind, const std::vector<ScenarioConfig>& grid,
                                             const std::vector<std::string>& method_names,
                                             const ReplicateEvaluator& evaluate, const HarnessOptions& opt) {
    if (opt.S < 1) throw DomainError("harness: S must be >= 1");
    for (const auto& cell : grid) cell.validate();
    const std::size_t n_methods = method_names.size();
    const std::size_t n_tasks = grid.size() * static_cast<std::size_t>(opt.S);

    // 0: failed, 1: ok without rejection, 2: ok with rejection
    std::vector<unsigned char> status(n_tasks * n_methods, 0);
    std::vector<std::string> first_diag(grid.size() * n_methods);
    std::vector<std::size_t> first_diag_rep(grid.size() * n_methods, static_cast<std::size_t>(-1));
    std::mutex diag_mutex;
    std::atomic<std::size_t> next{0}, done{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::size_t task = next.fetch_add(1);
            if (task >= n_tasks) return;
            const std::size_t cell = task / opt.S;
            const std::size_t rep = task % opt.S;
            try {
                RngStream data_stream(opt.master_seed, {cell, rep, 0});
                const HistoricalControlSet hcd = sample_historical_set(grid[cell], data_stream);
                const CurrentTrial trial = sample_current_trial(grid[cell], data_stream);
                const RngStream method_stream(opt.master_seed, {cell, rep, 1});
                const auto outcomes = evaluate(hcd, trial, method_stream);
                if (outcomes.size() != n_methods) throw DomainError("harness: evaluator returned wrong method count");
                for (std::size_t m = 0; m < n_methods; ++m) {
                    const auto& o = outcomes[m];
                    status[task * n_methods + m] = o.ok ? (o.any_rejection ? 2 : 1) : 0;
                    if (!o.ok && !o.diagnostic.empty()) {
                        std::lock_guard lock(diag_mutex);
                        const std::size_t key = cell * n_methods + m;
                        // keep the diagnostic of the lowest replicate for determinism
                        if (rep < first_diag_rep[key]) {
                            first_diag_rep[key] = rep;
                            first_diag[key] = o.diagnostic;
                        }
                    }
                }
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(n_tasks);
                return;
            }
            const std::size_t d = done.fetch_add(1) + 1;
            if (opt.progress) opt.progress(d, n_tasks);
        }
    };

    const int workers = std::max(1, opt.workers);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<CellResult> results;
    for (std::size_t cell = 0; cell < grid.size(); ++cell) {
        for (std::size_t m = 0; m < n_methods; ++m) {
            CellResult r;
            r.scenario = grid[cell];
            r.method = method_names[m];
            r.kind = kind;
            r.S = opt.S;
            std::vector<int> indicators;
            for (int rep = 0; rep < opt.S; ++rep) {
                const unsigned char st = status[(cell * opt.S + rep) * n_methods + m];
                if (st != 0) indicators.push_back(st == 2 ? 1 : 0);
            }
            r.S_converged = static_cast<int>(indicators.size());
            if (!indicators.empty()) {
                const RateEstimate e = estimate_rate(indicators);
                r.rate = e.rate;
                r.mc_se = e.mc_se;
            } else {
                r.diagnostic = first_diag[cell * n_methods + m].empty() ? "no replicate converged"
                                                                        : first_diag[cell * n_methods + m];
            }
            results.push_back(std::move(r));
        }
    }
    return results;
}

struct HarnessConfig {
    int S = 2000;
    std::vector<MethodId> methods{kAllMethods.begin(), kAllMethods.end()};
    std::uint64_t master_seed = 20240601;
    int workers = 1;
    MethodSettings settings = harness_default_settings();
    std::function<void(std::size_t, std::size_t)> progress;

    static MethodSettings harness_default_settings() {
        MethodSettings s;
        s.posterior_draws = 4000;
        s.nnhm.chains = 4;
        s.nnhm.iterations = 1500;
        s.nnhm.warmup = 500;
        s.em.screen_iterations = 10;
        s.em.max_iterations = 100;
        s.skip_unconverged_map = true;
        return s;
    }
};

inline ReplicateEvaluator method_evaluator(const std::vector<MethodId>& methods, const MethodSettings& settings) {
    return [methods, settings](const HistoricalControlSet& hcd, const CurrentTrial& trial, const RngStream& stream) {
        std::vector<ReplicateOutcome> out;
        for (const auto& o : run_methods(hcd, trial, methods, settings, stream)) {
            ReplicateOutcome r;
            r.ok = o.ok;
            r.diagnostic = o.diagnostic;
            if (o.ok) r.any_rejection = decide(o.limits).any;
            out.push_back(std::move(r));
        }
        return out;
    };
}

inline std::vector<CellResult> run_grid(RateKind kind, const std::vector<ScenarioConfig>& grid,
                                        const HarnessConfig& cfg) {
    std::vector<std::string> names;
    for (MethodId id : cfg.methods) names.emplace_back(method_name(id));
    HarnessOptions opt{cfg.S, cfg.master_seed, cfg.workers, cfg.progress};
    return run_grid_with(kind, grid, names, method_evaluator(cfg.methods, cfg.settings), opt);
}

inline std::vector<CellResult> run_fwer_grid(const std::vector<ScenarioConfig>& grid, const HarnessConfig& cfg) {
    for (const auto& c : grid) {
        if (c.Delta_M != 1.0) throw InvalidScenario("FWER grid requires Delta_M = 1 in every scenario");
    }
    return run_grid(RateKind::Fwer, grid, cfg);
}

inline std::vector<CellResult> run_app_grid(const std::vector<ScenarioConfig>& grid, const HarnessConfig& cfg) {
    for (const auto& c : grid) {
        if (c.delta != 1.0) throw InvalidScenario("APP grid requires delta = 1 in every scenario");
    }
    return run_grid(RateKind::App, grid, cfg);
}

// ---------------------------------------------------------------------------
// Results file

inline std::string format_number(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

inline void write_results_csv(std::ostream& os, const std::vector<CellResult>& results) {
    os << "H,pi,rho,n_h,M,n0,n_m,delta,Delta_M,method,S,S_converged,rate,mc_se,kind\n";
    for (const auto& r : results) {
        const auto& c = r.scenario;
        char rate[32] = "NA", se[32] = "NA";
        if (r.rate) {
            std::snprintf(rate, sizeof rate, "%.6f", *r.rate);
            std::snprintf(se, sizeof se, "%.6f", r.mc_se);
        }
        os << c.H << ',' << format_number(c.pi) << ',' << format_number(c.rho) << ',' << c.n_h << ',' << c.M << ','
           << c.n0 << ',' << c.n_m << ',' << format_number(c.delta) << ',' << format_number(c.Delta_M) << ','
           << r.method << ',' << r.S << ',' << r.S_converged << ',' << rate << ',' << se << ','
           << rate_kind_name(r.kind) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Scenario grids

struct GridAxes {
    std::vector<double> H, pi, rho, n_h, M, n0, n_m, delta, Delta_M;

    std::vector<double>* axis(const std::string& name) {
        if (name == "H") return &H;
        if (name == "pi") return &pi;
        if (name == "rho") return &rho;
        if (name == "n_h") return &n_h;
        if (name == "M") return &M;
        if (name == "n0") return &n0;
        if (name == "n_m") return &n_m;
        if (name == "delta") return &delta;
        if (name == "Delta_M") return &Delta_M;
        return nullptr;
    }
};

// Values printed in bold in the simulation design (real-life NTP settings).
inline GridAxes design_bold_axes(RateKind kind) {
    GridAxes g;
    g.H = {5, 10, 20};
    g.pi = {0.01, 0.1, 0.2, 0.3, 0.4, 0.5};
    g.rho = {1e-05, 0.01, 0.04};
    g.n_h = {50};
    g.M = {4};
    g.n0 = {50};
    g.n_m = {50};
    g.delta = {1.0};
    g.Delta_M = kind == RateKind::Fwer ? std::vector<double>{1.0} : std::vector<double>{1.25, 1.5, 1.75};
    return g;
}

// Every value of the simulation design.
inline GridAxes design_full_axes(RateKind kind) {
    GridAxes g = design_bold_axes(kind);
    g.H = {5, 10, 20, 100};
    g.rho = {1e-05, 0.01, 0.04, 0.08};
    g.n0 = {10, 50};
    if (kind == RateKind::Fwer) g.delta = {1.0, 1.25, 1.5};
    return g;
}

// Small grid for smoke runs.
inline GridAxes reduced_axes(RateKind kind) {
    GridAxes g = design_bold_axes(kind);
    g.H = {20};
    g.pi = {0.1, 0.5};
    g.rho = {0.01};
    g.n0 = {10, 50};
    if (kind == RateKind::App) g.Delta_M = {1.5};
    return g;
}

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        const auto b = cur.find_first_not_of(" \t");
        const auto e = cur.find_last_not_of(" \t");
        out.push_back(b == std::string::npos ? std::string() : cur.substr(b, e - b + 1));
    }
    return out;
}

inline int as_count(double v, const char* axis) {
    if (v != std::floor(v) || v < 1) throw InputError(std::string("grid axis ") + axis + " needs positive integers");
    return static_cast<int>(v);
}

}  // namespace detail

// Grid spec: a base ("bold", "full" or "reduced"; default "bold", alias
// "paper-grid") followed by ';'-separated axis edits "axis=v1,v2" (replace)
// or "axis+=v" (extend), e.g. "bold;n0=10,50;rho+=0.08".
inline std::vector<ScenarioConfig> build_grid(RateKind kind, const std::string& spec) {
    auto parts = detail::split(spec, ';');
    if (parts.empty()) parts.push_back("bold");
    GridAxes g;
    std::size_t first_edit = 0;
    if (parts[0] == "bold" || parts[0] == "paper-grid") {
        g = design_bold_axes(kind);
        first_edit = 1;
    } else if (parts[0] == "full") {
        g = design_full_axes(kind);
        first_edit = 1;
    } else if (parts[0] == "reduced") {
        g = reduced_axes(kind);
        first_edit = 1;
    } else {
        g = design_bold_axes(kind);
    }
    bool delta_set = false, effect_set = false;
    for (std::size_t i = first_edit; i < parts.size(); ++i) {
        if (parts[i].empty()) continue;
        const auto eq = parts[i].find('=');
        if (eq == std::string::npos || eq == 0) throw InputError("grid spec: expected axis=values in '" + parts[i] + "'");
        const bool extend = parts[i][eq - 1] == '+';
        const std::string name = parts[i].substr(0, extend ? eq - 1 : eq);
        std::vector<double>* axis = g.axis(name);
        if (!axis) throw InputError("grid spec: unknown axis '" + name + "'");
        std::vector<double> values;
        for (const auto& tok : detail::split(parts[i].substr(eq + 1), ',')) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw InputError("grid spec: bad number '" + tok + "' for axis " + name);
            }
        }
        if (values.empty()) throw InputError("grid spec: axis " + name + " has no values");
        if (extend) axis->insert(axis->end(), values.begin(), values.end()); else *axis = values;
        delta_set = delta_set || name == "delta";
        effect_set = effect_set || name == "Delta_M";
    }
    if (kind == RateKind::Fwer) {
        if (effect_set && (g.Delta_M.size() != 1 || g.Delta_M[0] != 1.0)) {
            throw InputError("grid spec: FWER simulations fix Delta_M = 1");
        }
        g.Delta_M = {1.0};
    } else {
        if (delta_set && (g.delta.size() != 1 || g.delta[0] != 1.0)) {
            throw InputError("grid spec: APP simulations fix delta = 1");
        }
        g.delta = {1.0};
    }

    std::vector<ScenarioConfig> grid;
    for (double H : g.H)
        for (double pi : g.pi)
            for (double rho : g.rho)
                for (double n_h : g.n_h)
                    for (double M : g.M)
                        for (double n0 : g.n0)
                            for (double n_m : g.n_m)
                                for (double delta : g.delta)
                                    for (double eff : g.Delta_M) {
                                        ScenarioConfig c;
                                        c.H = detail::as_count(H, "H");
                                        c.pi = pi;
                                        c.rho = rho;
                                        c.n_h = detail::as_count(n_h, "n_h");
                                        c.M = detail::as_count(M, "M");
                                        c.n0 = detail::as_count(n0, "n0");
                                        c.n_m = detail::as_count(n_m, "n_m");
                                        c.delta = delta;
                                        c.Delta_M = eff;
                                        try {
                                            c.validate();
                                        } catch (const std::exception& e) {
                                            throw InputError(std::string("grid spec: invalid scenario: ") + e.what());
                                        }
                                        grid.push_back(c);
                                    }
    return grid;
}

}  // namespace hcdb
