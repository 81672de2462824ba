#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace blockdiff {

/// Per-step retention factors alpha_t and their running products alpha_bar_t
/// for a categorical corruption chain. alpha_bar must decay to ~0 by step T
/// so the chain forgets its origin.
struct NoiseSchedule {
    int t_max = 0;
    std::vector<double> alpha;      // alpha[t-1] = alpha_t, t = 1..T
    std::vector<double> alpha_bar;  // alpha_bar[t-1] = prod_{s<=t} alpha_s

    double alpha_at(int t) const { return alpha[t - 1]; }

    /// alpha_bar_t with the t = 0 convention alpha_bar_0 = 1.
    double alpha_bar_at(int t) const { return t == 0 ? 1.0 : alpha_bar[t - 1]; }

    void validate() const {
        if (t_max < 1 || static_cast<int>(alpha.size()) != t_max ||
            static_cast<int>(alpha_bar.size()) != t_max)
            throw std::invalid_argument("NoiseSchedule: inconsistent sizes");
        double prod = 1.0;
        for (int t = 1; t <= t_max; ++t) {
            if (alpha[t - 1] < 0.0 || alpha[t - 1] > 1.0)
                throw std::invalid_argument("NoiseSchedule: alpha out of [0,1]");
            prod *= alpha[t - 1];
            if (std::abs(prod - alpha_bar[t - 1]) > 1e-12)
                throw std::invalid_argument("NoiseSchedule: alpha_bar is not the running product");
        }
        if (alpha_bar[t_max - 1] > 1e-4)
            throw std::invalid_argument("NoiseSchedule: alpha_bar at T must be <= 1e-4 for stationarity");
    }
};

/// Cosine-shaped alpha_bar with the usual 0.008 offset, clamped to
/// [1e-5, 1]; alpha_t recovered as consecutive ratios so the running-product
/// invariant holds exactly.
inline NoiseSchedule cosine_schedule(int t_max) {
    if (t_max < 1) throw std::invalid_argument("cosine_schedule: t_max must be >= 1");
    constexpr double s = 0.008;
    auto bar = [&](double t) {
        double x = (t / t_max + s) / (1.0 + s) * M_PI / 2.0;
        double c = std::cos(x);
        double c0 = std::cos(s / (1.0 + s) * M_PI / 2.0);
        return (c * c) / (c0 * c0);
    };
    NoiseSchedule sched;
    sched.t_max = t_max;
    sched.alpha.resize(t_max);
    sched.alpha_bar.resize(t_max);
    double prev = 1.0;
    for (int t = 1; t <= t_max; ++t) {
        double ab = std::min(1.0, std::max(1e-5, bar(static_cast<double>(t))));
        ab = std::min(ab, prev);  // keep nonincreasing after clamping
        sched.alpha[t - 1] = ab / prev;
        sched.alpha_bar[t - 1] = prev * sched.alpha[t - 1];
        prev = sched.alpha_bar[t - 1];
    }
    sched.validate();
    return sched;
}

/// Linear alpha_bar decay, same clamping conventions as cosine_schedule.
inline NoiseSchedule linear_schedule(int t_max) {
    if (t_max < 1) throw std::invalid_argument("linear_schedule: t_max must be >= 1");
    NoiseSchedule sched;
    sched.t_max = t_max;
    sched.alpha.resize(t_max);
    sched.alpha_bar.resize(t_max);
    double prev = 1.0;
    for (int t = 1; t <= t_max; ++t) {
        double ab = std::max(1e-5, 1.0 - static_cast<double>(t) / t_max);
        sched.alpha[t - 1] = ab / prev;
        sched.alpha_bar[t - 1] = prev * sched.alpha[t - 1];
        prev = sched.alpha_bar[t - 1];
    }
    sched.validate();
    return sched;
}

/// Uniform-stationary transition family over k states. One-step kernel:
///   Q_t = alpha_t * I + (1 - alpha_t) * 1 m^T,  m = uniform(1/k).
struct TransitionFamily {
    int k = 0;
    std::vector<double> m;  // stationary distribution, uniform
    NoiseSchedule schedule;

    /// k == 1 is the degenerate single-class chain: every distribution is a
    /// delta and the losses over such elements are identically zero.
    static TransitionFamily uniform(int k, NoiseSchedule sched) {
        if (k < 1) throw std::invalid_argument("TransitionFamily: need at least 1 state");
        sched.validate();
        TransitionFamily f;
        f.k = k;
        f.m.assign(k, 1.0 / k);
        f.schedule = std::move(sched);
        return f;
    }

    void check_step(int t) const {
        if (t < 1 || t > schedule.t_max)
            throw std::invalid_argument("TransitionFamily: step t=" + std::to_string(t) + " out of [1, " +
                                        std::to_string(schedule.t_max) + "]");
    }
};

/// Row-stochastic one-step matrix Q_t (row = from-state, column = to-state).
inline std::vector<double> transition_matrix(const TransitionFamily& f, int t) {
    f.check_step(t);
    double a = f.schedule.alpha_at(t);
    std::vector<double> q(static_cast<std::size_t>(f.k) * f.k);
    for (int i = 0; i < f.k; ++i)
        for (int j = 0; j < f.k; ++j) q[static_cast<std::size_t>(i) * f.k + j] = (1.0 - a) * f.m[j] + (i == j ? a : 0.0);
    return q;
}

/// Multi-step matrix Qbar_{t|s} = Q_{s+1} ... Q_t, in closed form via the
/// ratio alpha_bar_t / alpha_bar_s.
inline std::vector<double> accumulated_transition(const TransitionFamily& f, int s, int t) {
    if (s < 0 || s >= t || t > f.schedule.t_max)
        throw std::invalid_argument("accumulated_transition: need 0 <= s < t <= T");
    double a = f.schedule.alpha_bar_at(t) / f.schedule.alpha_bar_at(s);
    std::vector<double> q(static_cast<std::size_t>(f.k) * f.k);
    for (int i = 0; i < f.k; ++i)
        for (int j = 0; j < f.k; ++j) q[static_cast<std::size_t>(i) * f.k + j] = (1.0 - a) * f.m[j] + (i == j ? a : 0.0);
    return q;
}

/// q(x_t | x_0) for a clean state x0: alpha_bar_t * onehot(x0) + (1 - alpha_bar_t) * m.
inline std::vector<double> forward_marginal(const TransitionFamily& f, int x0, int t) {
    f.check_step(t);
    if (x0 < 0 || x0 >= f.k) throw std::invalid_argument("forward_marginal: x0 out of range");
    double ab = f.schedule.alpha_bar_at(t);
    std::vector<double> p(f.k);
    for (int v = 0; v < f.k; ++v) p[v] = (1.0 - ab) * f.m[v] + (v == x0 ? ab : 0.0);
    return p;
}

/// Exact reverse conditional q(x_{t-1} | x_t, x_0):
///   proportional to q(x_t | x_{t-1}) * q(x_{t-1} | x_0).
inline std::vector<double> posterior(const TransitionFamily& f, int xt, int x0, int t) {
    f.check_step(t);
    if (xt < 0 || xt >= f.k || x0 < 0 || x0 >= f.k)
        throw std::invalid_argument("posterior: state out of range");
    auto qt = transition_matrix(f, t);
    // Row x0 of Qbar_{t-1}; Qbar_0 = I.
    std::vector<double> prev(f.k, 0.0);
    if (t == 1) {
        prev[x0] = 1.0;
    } else {
        auto qb = accumulated_transition(f, 0, t - 1);
        for (int v = 0; v < f.k; ++v) prev[v] = qb[static_cast<std::size_t>(x0) * f.k + v];
    }
    std::vector<double> num(f.k);
    double denom = 0.0;
    for (int v = 0; v < f.k; ++v) {
        num[v] = qt[static_cast<std::size_t>(v) * f.k + xt] * prev[v];
        denom += num[v];
    }
    if (denom <= 0.0)
        throw std::runtime_error("posterior: zero denominator; cannot occur with a uniform stationary "
                                 "distribution and alpha_bar < 1");
    for (double& v : num) v /= denom;
    return num;
}

/// p(x_{t-1} | x_t) under a predicted clean-state distribution:
/// the posterior mixture  sum_{x0} q(x_{t-1} | x_t, x0) * x0_probs[x0].
inline std::vector<double> reverse_step_distribution(const TransitionFamily& f, int xt, int t,
                                                     const std::vector<double>& x0_probs) {
    f.check_step(t);
    if (static_cast<int>(x0_probs.size()) != f.k)
        throw std::invalid_argument("reverse_step_distribution: x0_probs has wrong length");
    double total = 0.0;
    for (double p : x0_probs) total += p;
    if (std::abs(total - 1.0) > 1e-6)
        throw std::invalid_argument("reverse_step_distribution: x0_probs is not normalized");
    std::vector<double> out(f.k, 0.0);
    for (int c = 0; c < f.k; ++c) {
        if (x0_probs[c] == 0.0) continue;
        auto post = posterior(f, xt, c, t);
        for (int v = 0; v < f.k; ++v) out[v] += x0_probs[c] * post[v];
    }
    return out;
}

/// KL(q || p) with the 0 log 0 = 0 convention. Errors if p lacks support
/// where q has mass.
inline double kl_term(const std::vector<double>& q_dist, const std::vector<double>& p_dist) {
    if (q_dist.size() != p_dist.size()) throw std::invalid_argument("kl_term: length mismatch");
    double kl = 0.0;
    for (std::size_t v = 0; v < q_dist.size(); ++v) {
        if (q_dist[v] == 0.0) continue;
        if (p_dist[v] <= 0.0) throw std::invalid_argument("kl_term: p has zero mass where q is positive");
        kl += q_dist[v] * std::log(q_dist[v] / p_dist[v]);
    }
    return kl < 0.0 ? 0.0 : kl;  // guard tiny negative round-off
}

/// -log p(true class). Zero predicted mass surfaces as +infinity so a loss
/// blow-up is diagnosable rather than silently clipped.
inline double cross_entropy_term(int x0, const std::vector<double>& x0_probs) {
    if (x0 < 0 || x0 >= static_cast<int>(x0_probs.size()))
        throw std::invalid_argument("cross_entropy_term: true class out of range");
    double p = x0_probs[x0];
    if (p <= 0.0) return std::numeric_limits<double>::infinity();
    return -std::log(p);
}

}  // namespace blockdiff
