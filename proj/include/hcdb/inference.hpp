#pragma once

// Joint posterior draws for control and treatment arms and rank-based
// simultaneous lower credible limits for the risk ratios pi_m / pi_0.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "hcdb/errors.hpp"
#include "hcdb/mixture.hpp"
#include "hcdb/model.hpp"
#include "hcdb/posterior.hpp"
#include "hcdb/rng.hpp"

namespace hcdb {

// Row-major rows x cols matrix of doubles.
class DrawMatrix {
public:
    DrawMatrix() = default;
    DrawMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    friend bool operator==(const DrawMatrix&, const DrawMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// B x M matrix of ratio draws pi_mb / pi_0b.
struct RatioDrawMatrix {
    DrawMatrix draws;

    std::size_t B() const { return draws.rows(); }
    std::size_t M() const { return draws.cols(); }
};

struct SimultaneousLimits {
    std::vector<double> lower;
    double alpha = 0.05;
    std::size_t B = 0;
    bool valid = true;
};

inline constexpr double kControlDrawFloor = 1e-12;
inline constexpr std::size_t kMinPosteriorDraws = 1000;

// Column 0: posterior of the control under control_prior; column m: posterior
// of arm m under a uniform prior. Column c draws from stream.child(c).
inline DrawMatrix sample_joint_posterior(const CurrentTrial& trial, const BetaMixture& control_prior, std::size_t B,
                                         const RngStream& stream) {
    trial.validate();
    if (B < kMinPosteriorDraws) throw DomainError("sample_joint_posterior: need B >= 1000");
    const std::size_t M = trial.arms();
    DrawMatrix out(B, M + 1);
    {
        const BetaMixture post = update(control_prior, trial.control);
        RngStream s = stream.child(0);
        for (std::size_t b = 0; b < B; ++b) out(b, 0) = sample_mixture(post, s);
    }
    for (std::size_t m = 0; m < M; ++m) {
        const auto& g = trial.treatments[m];
        const double a = 1.0 + g.events, bb = 1.0 + g.size - g.events;
        RngStream s = stream.child(m + 1);
        for (std::size_t b = 0; b < B; ++b) out(b, m + 1) = sample_beta(s, a, bb);
    }
    return out;
}

inline RatioDrawMatrix ratio_draws(const DrawMatrix& joint) {
    if (joint.cols() < 2) throw DomainError("ratio_draws: need a control and at least one arm");
    RatioDrawMatrix out{DrawMatrix(joint.rows(), joint.cols() - 1)};
    for (std::size_t b = 0; b < joint.rows(); ++b) {
        const double control = std::max(joint(b, 0), kControlDrawFloor);
        for (std::size_t m = 1; m < joint.cols(); ++m) out.draws(b, m - 1) = joint(b, m) / control;
    }
    return out;
}

// Nearest integer to x, halves rounded up.
inline long round_half_up(double x) {
    // B * (1 - alpha) carries representation error, e.g. 1000 * 0.95.
    return static_cast<long>(std::floor(x + 0.5 + 1e-9));
}

inline SimultaneousLimits besag_lower_limits(const RatioDrawMatrix& ratios, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("besag_lower_limits: alpha must lie in (0, 1)");
    const std::size_t B = ratios.B(), M = ratios.M();
    if (B < 1 || M < 1) throw DomainError("besag_lower_limits: empty draw matrix");

    // Per-column ordinal ranks (ties by row index) and order statistics.
    std::vector<std::size_t> min_rank(B, B);
    std::vector<std::vector<double>> order_stats(M);
    std::vector<std::size_t> idx(B);
    for (std::size_t m = 0; m < M; ++m) {
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t i, std::size_t j) { return ratios.draws(i, m) < ratios.draws(j, m); });
        auto& os = order_stats[m];
        os.resize(B);
        for (std::size_t r = 0; r < B; ++r) {
            os[r] = ratios.draws(idx[r], m);
            min_rank[idx[r]] = std::min(min_rank[idx[r]], r + 1);
        }
    }
    std::vector<long> R(B);
    for (std::size_t b = 0; b < B; ++b) R[b] = static_cast<long>(B) + 1 - static_cast<long>(min_rank[b]);

    long q = round_half_up(static_cast<double>(B) * (1.0 - alpha));
    q = std::clamp<long>(q, 1, static_cast<long>(B));
    std::nth_element(R.begin(), R.begin() + (q - 1), R.end());
    const long Rq = R[q - 1];
    const long pos = static_cast<long>(B) + 1 - Rq;
    if (pos < 1) throw DomainError("besag_lower_limits: alpha too small for B");

    SimultaneousLimits out;
    out.alpha = alpha;
    out.B = B;
    out.lower.resize(M);
    for (std::size_t m = 0; m < M; ++m) out.lower[m] = order_stats[m][pos - 1];
    return out;
}

// Per-column empirical alpha quantile using the same order-statistic convention
// as the single-column case of besag_lower_limits.
inline std::vector<double> pointwise_lower_limits(const RatioDrawMatrix& ratios, double alpha) {
    std::vector<double> out(ratios.M());
    for (std::size_t m = 0; m < ratios.M(); ++m) {
        RatioDrawMatrix single{DrawMatrix(ratios.B(), 1)};
        for (std::size_t b = 0; b < ratios.B(); ++b) single.draws(b, 0) = ratios.draws(b, m);
        out[m] = besag_lower_limits(single, alpha).lower[0];
    }
    return out;
}

struct Decision {
    std::vector<bool> rejected;
    bool any = false;
};

inline Decision decide(const SimultaneousLimits& limits) {
    Decision d;
    for (double l : limits.lower) {
        const bool r = l > 1.0;
        d.rejected.push_back(r);
        d.any = d.any || r;
    }
    return d;
}

}  // namespace hcdb
