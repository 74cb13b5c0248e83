#pragma once

// Data types and the beta-binomial data-generating process.
//
//   pi_h ~ Beta(a, b),                 y_h ~ Bin(n_h, pi_h)       h = 1..H
//   pi_0 ~ Beta(a_0, b_0), E(pi_0) = delta * pi, a_0 + b_0 = a + b
//   y_0 ~ Bin(n_0, pi_0),              y_m ~ Bin(n_m, min(1, Delta_m * pi_0))

#include <cmath>
#include <string>
#include <vector>

#include "hcdb/distributions.hpp"
#include "hcdb/errors.hpp"
#include "hcdb/rng.hpp"

namespace hcdb {

struct ControlGroup {
    int events = 0;
    int size = 1;

    double proportion() const { return static_cast<double>(events) / size; }

    void validate() const {
        if (size < 1) throw DomainError("group size must be >= 1");
        if (events < 0 || events > size) {
            throw DomainError("events must satisfy 0 <= events <= size (events=" +
                              std::to_string(events) + ", size=" + std::to_string(size) + ")");
        }
    }

    friend bool operator==(const ControlGroup&, const ControlGroup&) = default;
};

struct HistoricalControlSet {
    std::vector<ControlGroup> groups;

    std::size_t count() const { return groups.size(); }

    int total_events() const {
        int s = 0;
        for (const auto& g : groups) s += g.events;
        return s;
    }

    int total_size() const {
        int s = 0;
        for (const auto& g : groups) s += g.size;
        return s;
    }

    void validate() const {
        if (groups.empty()) throw DomainError("historical control set is empty");
        for (const auto& g : groups) g.validate();
    }

    friend bool operator==(const HistoricalControlSet&, const HistoricalControlSet&) = default;
};

struct CurrentTrial {
    ControlGroup control;
    std::vector<ControlGroup> treatments;

    std::size_t arms() const { return treatments.size(); }

    void validate() const {
        control.validate();
        if (treatments.empty()) throw DomainError("at least one treatment arm is required");
        for (const auto& t : treatments) t.validate();
    }

    friend bool operator==(const CurrentTrial&, const CurrentTrial&) = default;
};

// Beta law parameterized by mean pi and intra-class correlation rho = 1/(1+a+b).
class Population {
public:
    Population(double pi, double rho) : pi_(pi), rho_(rho) {
        if (!(pi > 0.0 && pi < 1.0)) throw DomainError("Population: pi must lie in (0, 1)");
        if (!(rho > 0.0 && rho < 1.0)) throw DomainError("Population: rho must lie in (0, 1)");
    }

    static Population from_shapes(double a, double b) {
        if (!(a > 0.0) || !(b > 0.0)) throw DomainError("Population: shapes must be positive");
        return Population(a / (a + b), 1.0 / (1.0 + a + b));
    }

    double pi() const { return pi_; }
    double rho() const { return rho_; }
    double precision() const { return 1.0 / rho_ - 1.0; }  // a + b
    double a() const { return pi_ * precision(); }
    double b() const { return (1.0 - pi_) * precision(); }

private:
    double pi_;
    double rho_;
};

// One cell of the simulation grid.
struct ScenarioConfig {
    int H = 20;
    double pi = 0.1;
    double rho = 0.01;
    int n_h = 50;
    int M = 4;
    int n0 = 50;
    int n_m = 50;
    double delta = 1.0;
    double Delta_M = 1.0;

    Population population() const { return Population(pi, rho); }

    void validate() const {
        if (H < 1 || n_h < 1 || M < 1 || n0 < 1 || n_m < 1) {
            throw InvalidScenario("scenario counts must all be >= 1");
        }
        (void)population();
        if (!(delta >= 0.0)) throw InvalidScenario("drift multiplier must be >= 0");
        if (!(delta * pi < 1.0)) throw InvalidScenario("drifted control mean delta*pi must be < 1");
        if (!(delta * pi > 0.0)) throw InvalidScenario("drifted control mean delta*pi must be > 0");
        if (!(Delta_M >= 1.0)) throw InvalidScenario("maximum effect Delta_M must be >= 1");
    }
};

// Delta_m = 1 + (m / M)(Delta_M - 1), m = 1..M.
inline std::vector<double> effect_vector(int M, double Delta_M) {
    if (M < 1) throw DomainError("effect_vector: M must be >= 1");
    if (!(Delta_M >= 1.0)) throw DomainError("effect_vector: Delta_M must be >= 1");
    std::vector<double> out(M);
    for (int m = 1; m <= M; ++m) {
        out[m - 1] = 1.0 + (static_cast<double>(m) / M) * (Delta_M - 1.0);
    }
    return out;
}

inline HistoricalControlSet sample_historical_set(const ScenarioConfig& cfg, RngStream& stream) {
    cfg.validate();
    const Population pop = cfg.population();
    HistoricalControlSet hcd;
    hcd.groups.reserve(cfg.H);
    for (int h = 0; h < cfg.H; ++h) {
        const double p = sample_beta(stream, pop.a(), pop.b());
        hcd.groups.push_back({sample_binomial(stream, cfg.n_h, p), cfg.n_h});
    }
    return hcd;
}

inline double treatment_probability(double pi0, double effect) {
    return std::min(1.0, effect * pi0);
}

inline CurrentTrial sample_current_trial(const ScenarioConfig& cfg, RngStream& stream) {
    cfg.validate();
    const Population pop = cfg.population();
    const double mean0 = cfg.delta * cfg.pi;
    const double a0 = mean0 * pop.precision();
    const double b0 = (1.0 - mean0) * pop.precision();
    const double pi0 = sample_beta(stream, a0, b0);

    CurrentTrial trial;
    trial.control = {sample_binomial(stream, cfg.n0, pi0), cfg.n0};
    for (double effect : effect_vector(cfg.M, cfg.Delta_M)) {
        const double p = treatment_probability(pi0, effect);
        trial.treatments.push_back({sample_binomial(stream, cfg.n_m, p), cfg.n_m});
    }
    return trial;
}

}  // namespace hcdb
