#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "hcdb/distributions.hpp"
#include "hcdb/errors.hpp"

namespace hcdb {

struct BetaComponent {
    double a = 1.0;
    double b = 1.0;

    double mean() const { return a / (a + b); }

    friend bool operator==(const BetaComponent&, const BetaComponent&) = default;
};

// Weighted list of beta components: the representation of every prior and
// posterior for the control probability.
class BetaMixture {
public:
    BetaMixture() = default;

    BetaMixture(std::vector<double> weights, std::vector<BetaComponent> components)
        : weights_(std::move(weights)), components_(std::move(components)) {
        validate();
    }

    static BetaMixture single(double a, double b) { return BetaMixture({1.0}, {{a, b}}); }
    static BetaMixture uniform() { return single(1.0, 1.0); }

    std::size_t size() const { return components_.size(); }
    const std::vector<double>& weights() const { return weights_; }
    const std::vector<BetaComponent>& components() const { return components_; }
    double weight(std::size_t k) const { return weights_.at(k); }
    const BetaComponent& component(std::size_t k) const { return components_.at(k); }

    double mean() const {
        double m = 0.0;
        for (std::size_t k = 0; k < size(); ++k) m += weights_[k] * components_[k].mean();
        return m;
    }

    double cdf(double x) const {
        double c = 0.0;
        for (std::size_t k = 0; k < size(); ++k) {
            c += weights_[k] * beta_cdf(x, components_[k].a, components_[k].b);
        }
        return c;
    }

    double log_pdf(double x) const {
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> terms(size());
        for (std::size_t k = 0; k < size(); ++k) {
            terms[k] = std::log(weights_[k]) + beta_log_pdf(x, components_[k].a, components_[k].b);
            mx = std::max(mx, terms[k]);
        }
        if (!std::isfinite(mx)) return mx;
        double s = 0.0;
        for (double t : terms) s += std::exp(t - mx);
        return mx + std::log(s);
    }

    double pdf(double x) const { return std::exp(log_pdf(x)); }

    void validate() const {
        if (components_.empty()) throw DomainError("BetaMixture: needs at least one component");
        if (weights_.size() != components_.size()) {
            throw DomainError("BetaMixture: weight and component counts differ");
        }
        double total = 0.0;
        for (std::size_t k = 0; k < size(); ++k) {
            if (!(weights_[k] >= 0.0)) throw DomainError("BetaMixture: negative weight");
            const auto& c = components_[k];
            if (!(c.a > 0.0) || !(c.b > 0.0) || !std::isfinite(c.a) || !std::isfinite(c.b)) {
                throw DomainError("BetaMixture: component shapes must be positive and finite");
            }
            total += weights_[k];
        }
        if (std::abs(total - 1.0) > 1e-12) {
            throw DomainError("BetaMixture: weights sum to " + std::to_string(total) + ", not 1");
        }
    }

    // Renormalizes raw non-negative weights and drops zero-weight components.
    static BetaMixture normalized(std::vector<double> weights, std::vector<BetaComponent> components) {
        const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
        if (!(total > 0.0)) throw DomainError("BetaMixture: weights sum to zero");
        std::vector<double> w;
        std::vector<BetaComponent> c;
        for (std::size_t k = 0; k < weights.size(); ++k) {
            if (weights[k] > 0.0) {
                w.push_back(weights[k] / total);
                c.push_back(components[k]);
            }
        }
        // Absorb rounding so the sum is 1 to the last bit we can manage.
        const double s = std::accumulate(w.begin(), w.end(), 0.0);
        for (double& x : w) x /= s;
        return BetaMixture(std::move(w), std::move(c));
    }

    friend bool operator==(const BetaMixture&, const BetaMixture&) = default;

private:
    std::vector<double> weights_;
    std::vector<BetaComponent> components_;
};

}  // namespace hcdb
