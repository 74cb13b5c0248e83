#pragma once

// Maximum-likelihood fit of a K-component beta mixture to draws in (0, 1) by
// expectation-maximization. The M-step for each component solves the weighted
// beta score equations
//
//   psi(a) - psi(a + b) = mean_r(log p),   psi(b) - psi(a + b) = mean_r(log(1 - p))
//
// by damped Newton iterations that never decrease the weighted likelihood, so
// the observed-data log-likelihood is monotone across EM iterations.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "hcdb/distributions.hpp"
#include "hcdb/errors.hpp"
#include "hcdb/mixture.hpp"

namespace hcdb {

struct EmConfig {
    int max_iterations = 500;
    double tolerance = 1e-8;  // absolute log-likelihood gain
    int starts = 5;
    double min_weight = 1e-6;
    double max_precision = 1e6;  // a + b cap; floors the component variance
    // > 0: run every start for this many iterations, then continue only the
    // best one. 0: run every start to convergence.
    int screen_iterations = 20;
    bool record_trace = false;
};

struct BetaMixtureFit {
    BetaMixture mixture;
    double loglik = -std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    int requested_components = 0;
    int dropped_components = 0;
    std::vector<double> loglik_trace;  // one entry per EM iteration when recorded
};

namespace detail {

struct EmData {
    std::vector<double> lp;  // log p
    std::vector<double> lq;  // log(1 - p)
    std::vector<double> sorted;
};

struct EmState {
    std::vector<double> w;
    std::vector<BetaComponent> c;
};

inline double logit_safe(double p) {
    p = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return std::log(p / (1.0 - p));
}

inline double beta_weighted_objective(double a, double b, double s1, double s2) {
    return (a - 1.0) * s1 + (b - 1.0) * s2 - log_beta_fn(a, b);
}

// Maximizes (a-1) s1 + (b-1) s2 - log B(a, b) starting at (a, b).
inline BetaComponent beta_mle_newton(BetaComponent start, double s1, double s2, double max_precision) {
    using boost::math::digamma;
    using boost::math::trigamma;
    double a = start.a, b = start.b;
    double f = beta_weighted_objective(a, b, s1, s2);
    for (int it = 0; it < 100; ++it) {
        const double psi_ab = digamma(a + b);
        const double g1 = s1 - digamma(a) + psi_ab;
        const double g2 = s2 - digamma(b) + psi_ab;
        const double t_ab = trigamma(a + b);
        const double h11 = -trigamma(a) + t_ab;
        const double h22 = -trigamma(b) + t_ab;
        const double h12 = t_ab;
        const double det = h11 * h22 - h12 * h12;
        double da, db;
        if (det > 0.0 && h11 < 0.0) {
            da = -(h22 * g1 - h12 * g2) / det;
            db = -(-h12 * g1 + h11 * g2) / det;
        } else {
            da = g1;  // gradient ascent fallback
            db = g2;
        }
        double t = 1.0;
        bool moved = false;
        for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
            const double na = a + t * da, nb = b + t * db;
            if (!(na > 0.0) || !(nb > 0.0) || na + nb > max_precision) continue;
            const double nf = beta_weighted_objective(na, nb, s1, s2);
            if (nf >= f) {
                const double rel = std::max(std::abs(na - a) / a, std::abs(nb - b) / b);
                a = na;
                b = nb;
                f = nf;
                moved = rel > 1e-12;
                break;
            }
        }
        if (!moved) break;
        if (std::abs(t * da) < 1e-10 * a && std::abs(t * db) < 1e-10 * b) break;
    }
    return {a, b};
}

inline BetaComponent moment_match(double mean, double var, double max_precision) {
    mean = std::clamp(mean, 1e-9, 1.0 - 1e-9);
    const double vmax = mean * (1.0 - mean);
    double precision = (var > 0.0 && var < vmax) ? vmax / var - 1.0 : 2.0;
    precision = std::clamp(precision, 1e-2, max_precision * 0.5);
    return {std::max(mean * precision, 1e-3), std::max((1.0 - mean) * precision, 1e-3)};
}

// Slices the sorted draws at the given cumulative fractions and moment-matches
// one component per slice.
inline EmState init_from_cuts(const std::vector<double>& sorted, const std::vector<double>& cuts,
                              double max_precision) {
    EmState st;
    const std::size_t n = sorted.size();
    std::size_t begin = 0;
    for (std::size_t j = 0; j <= cuts.size(); ++j) {
        std::size_t end = j < cuts.size() ? static_cast<std::size_t>(cuts[j] * n) : n;
        end = std::clamp(end, begin + 2, n);
        if (begin + 2 > n) begin = n - 2;
        double m = 0.0;
        for (std::size_t i = begin; i < end; ++i) m += sorted[i];
        m /= (end - begin);
        double v = 0.0;
        for (std::size_t i = begin; i < end; ++i) v += (sorted[i] - m) * (sorted[i] - m);
        v /= (end - begin);
        st.c.push_back(moment_match(m, v, max_precision));
        st.w.push_back(static_cast<double>(end - begin) / n);
        begin = end;
    }
    double total = 0.0;
    for (double x : st.w) total += x;
    for (double& x : st.w) x /= total;
    return st;
}

inline std::vector<EmState> em_starts(const EmData& data, int K, const EmConfig& cfg) {
    std::vector<EmState> out;
    const auto& s = data.sorted;
    if (K == 1) {
        out.push_back(init_from_cuts(s, {}, cfg.max_precision));
        return out;
    }
    auto cuts_with = [&](auto fraction) {
        std::vector<double> cuts;
        for (int j = 1; j < K; ++j) cuts.push_back(std::clamp(fraction(static_cast<double>(j) / K), 0.01, 0.99));
        std::sort(cuts.begin(), cuts.end());
        return cuts;
    };
    out.push_back(init_from_cuts(s, cuts_with([](double f) { return f; }), cfg.max_precision));
    {
        // equal-width slices on the logit scale
        const double lo = logit_safe(s.front()), hi = logit_safe(s.back());
        std::vector<double> cuts;
        for (int j = 1; j < K; ++j) {
            const double x = lo + (hi - lo) * j / K;
            const double p = 1.0 / (1.0 + std::exp(-x));
            const auto it = std::lower_bound(s.begin(), s.end(), p);
            cuts.push_back(std::clamp(static_cast<double>(it - s.begin()) / s.size(), 0.01, 0.99));
        }
        out.push_back(init_from_cuts(s, cuts, cfg.max_precision));
    }
    const double shift = 0.25 / K;
    out.push_back(init_from_cuts(s, cuts_with([&](double f) { return f - shift; }), cfg.max_precision));
    out.push_back(init_from_cuts(s, cuts_with([&](double f) { return f + shift; }), cfg.max_precision));
    out.push_back(init_from_cuts(s, cuts_with([](double f) { return f * f; }), cfg.max_precision));
    out.resize(std::min<std::size_t>(out.size(), std::max(1, cfg.starts)));
    return out;
}

// Per-component sufficient statistics of one E-step.
struct EmStats {
    std::vector<double> wsum, s1, s2;  // sum r, sum r log p, sum r log(1 - p)
};

// Log-likelihood at st; fills the responsibility-weighted statistics if asked.
inline double em_estep(const EmData& data, const EmState& st, EmStats* stats) {
    const std::size_t K = st.c.size();
    const std::size_t n = data.lp.size();
    std::vector<double> base(K), am1(K), bm1(K), t(K);
    for (std::size_t k = 0; k < K; ++k) {
        base[k] = std::log(st.w[k]) - log_beta_fn(st.c[k].a, st.c[k].b);
        am1[k] = st.c[k].a - 1.0;
        bm1[k] = st.c[k].b - 1.0;
    }
    if (stats) {
        stats->wsum.assign(K, 0.0);
        stats->s1.assign(K, 0.0);
        stats->s2.assign(K, 0.0);
    }
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lp = data.lp[i], lq = data.lq[i];
        std::size_t kmax = 0;
        for (std::size_t k = 0; k < K; ++k) {
            t[k] = base[k] + am1[k] * lp + bm1[k] * lq;
            if (t[k] > t[kmax]) kmax = k;
        }
        const double mx = t[kmax];
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            t[k] = k == kmax ? 1.0 : std::exp(t[k] - mx);
            s += t[k];
        }
        ll += mx + std::log(s);
        if (stats) {
            const double inv = 1.0 / s;
            for (std::size_t k = 0; k < K; ++k) {
                const double r = t[k] * inv;
                stats->wsum[k] += r;
                stats->s1[k] += r * lp;
                stats->s2[k] += r * lq;
            }
        }
    }
    return ll;
}

// One EM map: E-step at st, then weight and Newton shape updates.
// Returns the log-likelihood at st.
inline double em_step(const EmData& data, const EmState& st, EmState& next, EmStats& stats, const EmConfig& cfg) {
    const std::size_t K = st.c.size();
    const double n = static_cast<double>(data.lp.size());
    const double ll = em_estep(data, st, &stats);
    next = st;
    for (std::size_t k = 0; k < K; ++k) {
        const double wsum = stats.wsum[k];
        next.w[k] = wsum / n;
        if (wsum > 0.0) {
            next.c[k] = beta_mle_newton(st.c[k], stats.s1[k] / wsum, stats.s2[k] / wsum, cfg.max_precision);
        }
    }
    // Zero-weight components would make log(w) = -inf; keep them at a tiny floor.
    for (double& w : next.w) w = std::max(w, 1e-300);
    return ll;
}

// (log w, log a, log b) per component.
inline std::vector<double> em_params(const EmState& st) {
    std::vector<double> p;
    for (std::size_t k = 0; k < st.c.size(); ++k) {
        p.push_back(std::log(st.w[k]));
        p.push_back(std::log(st.c[k].a));
        p.push_back(std::log(st.c[k].b));
    }
    return p;
}

inline bool em_from_params(const std::vector<double>& p, EmState& st, double max_precision) {
    const std::size_t K = p.size() / 3;
    st.w.assign(K, 0.0);
    st.c.assign(K, {});
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        st.w[k] = std::exp(p[3 * k]);
        st.c[k] = {std::exp(p[3 * k + 1]), std::exp(p[3 * k + 2])};
        if (!std::isfinite(st.w[k]) || !(st.c[k].a > 0.0) || !(st.c[k].b > 0.0) || !std::isfinite(st.c[k].a) ||
            !std::isfinite(st.c[k].b) || st.c[k].a + st.c[k].b > max_precision) {
            return false;
        }
        total += st.w[k];
    }
    if (!(total > 0.0) || !std::isfinite(total)) return false;
    for (double& w : st.w) w = std::max(w / total, 1e-300);
    return true;
}

// EM accelerated by squared extrapolation (SQUAREM). Each cycle takes two EM
// maps, extrapolates along them and stabilizes with a third map; the
// extrapolated point is kept only if it does not lower the log-likelihood,
// so the sequence of cycle log-likelihoods is non-decreasing. Iterations count
// EM maps.
inline BetaMixtureFit run_em(const EmData& data, EmState st, const EmConfig& cfg) {
    EmStats stats;
    BetaMixtureFit fit;
    EmState s1, s2, s3, s4;
    double ll = -std::numeric_limits<double>::infinity();
    int maps = 0;
    for (;;) {
        const double ll0 = em_step(data, st, s1, stats, cfg);
        ++maps;
        if (maps > 1) {
            if (cfg.record_trace) fit.loglik_trace.push_back(ll0);
            const double gain = ll0 - ll;
            ll = ll0;
            if (gain < cfg.tolerance) {
                fit.converged = true;
                break;
            }
        } else {
            ll = ll0;
        }
        if (maps >= cfg.max_iterations) {
            // take the final map so the fit reflects every counted iteration
            st = s1;
            ll = em_estep(data, st, nullptr);
            if (cfg.record_trace) fit.loglik_trace.push_back(ll);
            break;
        }
        const double ll1 = em_step(data, s1, s2, stats, cfg);
        ++maps;
        if (maps >= cfg.max_iterations) {
            st = s2;
            ll = em_estep(data, st, nullptr);
            if (cfg.record_trace) fit.loglik_trace.push_back(ll);
            break;
        }
        const auto p0 = em_params(st), p1 = em_params(s1), p2 = em_params(s2);
        double rr = 0.0, vv = 0.0;
        std::vector<double> r(p0.size()), v(p0.size());
        for (std::size_t i = 0; i < p0.size(); ++i) {
            r[i] = p1[i] - p0[i];
            v[i] = p2[i] - p1[i] - r[i];
            rr += r[i] * r[i];
            vv += v[i] * v[i];
        }
        EmState next = s2;
        if (vv > 0.0) {
            const double alpha = std::min(-1.0, -std::sqrt(rr / vv));
            std::vector<double> pe(p0.size());
            for (std::size_t i = 0; i < p0.size(); ++i) pe[i] = p0[i] - 2.0 * alpha * r[i] + alpha * alpha * v[i];
            if (alpha < -1.0 && em_from_params(pe, s3, cfg.max_precision)) {
                const double lle = em_step(data, s3, s4, stats, cfg);
                ++maps;
                if (std::isfinite(lle) && lle >= ll1) next = s4;
            }
        }
        st = std::move(next);
        fit.iterations = maps;
    }
    fit.iterations = maps;
    double total = 0.0;
    for (double w : st.w) total += w;
    for (double& w : st.w) w /= total;
    fit.mixture = BetaMixture(st.w, st.c);
    fit.loglik = ll;
    return fit;
}

}  // namespace detail

inline BetaMixtureFit fit_beta_mixture_em(std::span<const double> draws, int K, const EmConfig& cfg = {}) {
    if (K < 1) throw DomainError("fit_beta_mixture_em: K must be >= 1");
    if (draws.size() < 100) throw DomainError("fit_beta_mixture_em: need at least 100 draws");

    detail::EmData data;
    data.lp.reserve(draws.size());
    data.lq.reserve(draws.size());
    for (double p : draws) {
        if (!(p > 0.0 && p < 1.0)) throw DomainError("fit_beta_mixture_em: draws must lie in (0, 1)");
        data.lp.push_back(std::log(p));
        data.lq.push_back(std::log1p(-p));
        data.sorted.push_back(p);
    }
    std::sort(data.sorted.begin(), data.sorted.end());

    BetaMixtureFit best;
    auto starts = detail::em_starts(data, K, cfg);
    if (cfg.screen_iterations > 0 && starts.size() > 1 && cfg.screen_iterations < cfg.max_iterations) {
        EmConfig screen = cfg;
        screen.max_iterations = cfg.screen_iterations;
        for (auto& start : starts) {
            BetaMixtureFit f = detail::run_em(data, std::move(start), screen);
            if (f.loglik > best.loglik) best = std::move(f);
        }
        if (!best.converged) {
            EmConfig rest = cfg;
            rest.max_iterations = cfg.max_iterations - best.iterations;
            detail::EmState st{best.mixture.weights(), best.mixture.components()};
            BetaMixtureFit f = detail::run_em(data, std::move(st), rest);
            f.iterations += best.iterations;
            if (cfg.record_trace) f.loglik_trace.insert(f.loglik_trace.begin(), best.loglik_trace.begin(), best.loglik_trace.end());
            best = std::move(f);
        }
    } else {
        for (auto& start : starts) {
            BetaMixtureFit f = detail::run_em(data, std::move(start), cfg);
            if (f.loglik > best.loglik) best = std::move(f);
        }
    }
    best.requested_components = K;

    if (K > 1) {
        const auto& w = best.mixture.weights();
        if (*std::min_element(w.begin(), w.end()) < cfg.min_weight) {
            BetaMixtureFit smaller = fit_beta_mixture_em(draws, K - 1, cfg);
            smaller.requested_components = K;
            smaller.dropped_components += 1;
            return smaller;
        }
    }
    return best;
}

inline double beta_mixture_aic(const BetaMixtureFit& fit) {
    const double k = static_cast<double>(fit.mixture.size());
    return 2.0 * (3.0 * k - 1.0) - 2.0 * fit.loglik;
}

}  // namespace hcdb
