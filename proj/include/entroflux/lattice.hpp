#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "entroflux/process.hpp"

namespace entroflux {

// Dense endpoint kernels are refused beyond this budget.
inline constexpr int kLatticeMaxKernelSites = 512;
inline constexpr int kLatticeMaxKernelSteps = 4096;

// 1-D random walkers on sites x_min + i*ell. A walker at x jumps right with
// probability q_right(x) and left with 1 - q_right(x) every dt. Walls are
// reflecting: an attempted jump off the lattice leaves the walker in place
// (the domain is chosen wide enough that boundary mass stays < 1e-12).
struct LatticeState {
    double ell = 0.1;
    double dt = 0.01;
    double x_min = 0.0;
    Eigen::VectorXd p;        // occupancy, sums to 1
    Eigen::VectorXd q_right;  // per-site jump probability
    long walkers = 1000;      // M, used only for Shannon-information reporting

    int sites() const { return static_cast<int>(p.size()); }
    double site_x(int i) const { return x_min + ell * i; }
    double implied_sigma_sq() const { return ell * ell / dt; }

    void validate() const {
        if (ell <= 0 || dt <= 0) throw ConfigError("lattice: ell and dt must be positive");
        if (p.size() < 3 || p.size() != q_right.size())
            throw ConfigError("lattice: occupancy/jump vectors inconsistent");
        if (std::abs(p.sum() - 1.0) > 1e-12)
            throw ConfigError("lattice: occupancy must sum to 1");
        if ((q_right.array() < 0).any() || (q_right.array() > 1).any())
            throw ConfigError("lattice: jump probabilities must lie in [0,1]");
    }
};

struct LatticeTrajectory {
    LatticeState spec;                    // parameters; spec.p is the initial state
    std::vector<Eigen::VectorXd> states;  // occupancies at steps 0..n

    int steps() const { return static_cast<int>(states.size()) - 1; }
    double time_at(int k) const { return spec.dt * k; }
};

// q_R = 1/2 + (dt / 2 ell) b+(x, s), valid while |b+ dt / 2 ell| <= 1/2.
inline Eigen::VectorXd jump_probs_from_drift(
    const std::function<double(double, double)>& b_plus, double ell, double dt,
    double x_min, int sites, double s = 0.0) {
    Eigen::VectorXd q(sites);
    for (int i = 0; i < sites; ++i) {
        const double x = x_min + ell * i;
        q[i] = 0.5 + 0.5 * dt / ell * b_plus(x, s);
        if (q[i] < 0.0 || q[i] > 1.0)
            throw ConfigError("jump probability leaves [0,1] at site " + std::to_string(i) +
                              " (x = " + std::to_string(x) + ", q_R = " + std::to_string(q[i]) +
                              "); shrink the domain or the drift");
    }
    return q;
}

// One master-equation update p'(x) = q_R(x-l) p(x-l) + q_L(x+l) p(x+l),
// with reflecting walls at both ends.
inline Eigen::VectorXd step_forward(const LatticeState& st) {
    const int n = st.sites();
    const Eigen::VectorXd& p = st.p;
    const Eigen::VectorXd& qr = st.q_right;
    Eigen::VectorXd out(n);
    out[0] = (1.0 - qr[1]) * p[1] + (1.0 - qr[0]) * p[0];
    for (int i = 1; i + 1 < n; ++i)
        out[i] = qr[i - 1] * p[i - 1] + (1.0 - qr[i + 1]) * p[i + 1];
    out[n - 1] = qr[n - 2] * p[n - 2] + qr[n - 1] * p[n - 1];
    if (std::abs(out.sum() - 1.0) > 1e-12)
        throw NumericalError("step_forward lost probability mass: |sum - 1| = " +
                             std::to_string(std::abs(out.sum() - 1.0)));
    return out;
}

inline LatticeTrajectory run_forward(const LatticeState& st, int steps) {
    st.validate();
    LatticeTrajectory traj;
    traj.spec = st;
    traj.states.reserve(steps + 1);
    traj.states.push_back(st.p);
    LatticeState cur = st;
    for (int k = 0; k < steps; ++k) {
        cur.p = step_forward(cur);
        traj.states.push_back(cur.p);
    }
    return traj;
}

// Playback coefficients of one forward step (Bayes reversal of the kernel).
// q_stay is nonzero only at the two wall sites where reflection can hold a
// walker in place.
struct ReverseProbs {
    Eigen::VectorXd q_right;
    Eigen::VectorXd q_left;
    Eigen::VectorXd q_stay;
};

inline ReverseProbs reverse_probs(const Eigen::VectorXd& p_before,
                                  const Eigen::VectorXd& p_after,
                                  const Eigen::VectorXd& q_right) {
    const int n = static_cast<int>(p_before.size());
    ReverseProbs rp;
    rp.q_right = Eigen::VectorXd::Zero(n);
    rp.q_left = Eigen::VectorXd::Zero(n);
    rp.q_stay = Eigen::VectorXd::Zero(n);
    auto ql = [&](int i) { return 1.0 - q_right[i]; };
    for (int i = 0; i < n; ++i) {
        double incoming = 0.0;
        double wl = 0.0, wr = 0.0, ws = 0.0;
        if (i > 0) { wl = q_right[i - 1] * p_before[i - 1]; incoming += wl; }
        if (i + 1 < n) { wr = ql(i + 1) * p_before[i + 1]; incoming += wr; }
        if (i == 0) { ws = ql(0) * p_before[0]; incoming += ws; }
        if (i == n - 1) { ws = q_right[n - 1] * p_before[n - 1]; incoming += ws; }
        if (p_after[i] <= 0.0) {
            if (incoming > 0.0)
                throw std::logic_error(
                    "reverse_probs: p_after vanishes at site " + std::to_string(i) +
                    " despite nonzero incoming flux (states are not one forward step apart)");
            continue;
        }
        // q~_L(x) receives from x-l, q~_R(x) from x+l
        rp.q_left[i] = wl / p_after[i];
        rp.q_right[i] = wr / p_after[i];
        rp.q_stay[i] = ws / p_after[i];
    }
    return rp;
}

// Total entropy over the whole trajectory,
//   S_tot = sum_steps sum_x p_after(x) [ q~_R log(q~_R/q_R) + q~_L log(q~_L/q_L) + ... ],
// with the reverse kernels indexed on the later state of each step. Zero
// occupancies are skipped (0 log 0 = 0).
inline double stot_discrete(const LatticeTrajectory& traj) {
    const Eigen::VectorXd& qr = traj.spec.q_right;
    const int n = traj.spec.sites();
    double stot = 0.0;
    auto term = [&](double qt, double qf, int step, int site) {
        if (qt <= 0.0) return 0.0;
        if (qf <= 0.0)
            throw NumericalError("stot_discrete: reverse flux against zero forward "
                                 "probability at step " + std::to_string(step) +
                                 ", site " + std::to_string(site));
        return qt * std::log(qt / qf);
    };
    for (int k = 0; k < traj.steps(); ++k) {
        const Eigen::VectorXd& pb = traj.states[k];
        const Eigen::VectorXd& pa = traj.states[k + 1];
        const ReverseProbs rp = reverse_probs(pb, pa, qr);
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            if (pa[i] <= 0.0) continue;
            double kl = term(rp.q_right[i], qr[i], k, i) +
                        term(rp.q_left[i], 1.0 - qr[i], k, i);
            if (i == 0) kl += term(rp.q_stay[0], 1.0 - qr[0], k, i);
            if (i == n - 1) kl += term(rp.q_stay[n - 1], qr[n - 1], k, i);
            acc += pa[i] * kl;
        }
        stot += acc;
    }
    return stot;
}

struct StotRun {
    double stot = 0.0;
    Eigen::VectorXd final_p;
};

// Streaming variant of run_forward + stot_discrete: accumulates the per-step
// entropy without recording the trajectory (refinement ladders get long).
inline StotRun stot_forward(const LatticeState& st, int steps) {
    st.validate();
    const Eigen::VectorXd& qr = st.q_right;
    const int n = st.sites();
    LatticeState cur = st;
    double stot = 0.0;
    for (int k = 0; k < steps; ++k) {
        const Eigen::VectorXd next = step_forward(cur);
        const ReverseProbs rp = reverse_probs(cur.p, next, qr);
        auto term = [&](double qt, double qf, int site) {
            if (qt <= 0.0) return 0.0;
            if (qf <= 0.0)
                throw NumericalError("stot_forward: zero forward probability against "
                                     "reverse flux at step " + std::to_string(k) +
                                     ", site " + std::to_string(site));
            return qt * std::log(qt / qf);
        };
        for (int i = 0; i < n; ++i) {
            if (next[i] <= 0.0) continue;
            double kl = term(rp.q_right[i], qr[i], i) + term(rp.q_left[i], 1.0 - qr[i], i);
            if (i == 0) kl += term(rp.q_stay[0], 1.0 - qr[0], i);
            if (i == n - 1) kl += term(rp.q_stay[n - 1], qr[n - 1], i);
            stot += next[i] * kl;
        }
        cur.p = next;
    }
    return {stot, cur.p};
}

// Applies the reverse master equation to p_after; exact inverse of step_forward.
inline Eigen::VectorXd step_reverse(const Eigen::VectorXd& p_before,
                                    const Eigen::VectorXd& p_after,
                                    const Eigen::VectorXd& q_right) {
    const ReverseProbs rp = reverse_probs(p_before, p_after, q_right);
    const int n = static_cast<int>(p_before.size());
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        if (p_after[i] <= 0.0) continue;
        const double m = p_after[i];
        if (i > 0) out[i - 1] += rp.q_left[i] * m;
        if (i + 1 < n) out[i + 1] += rp.q_right[i] * m;
        out[i] += rp.q_stay[i] * m;
    }
    return out;
}

struct EndpointInfo {
    double kl_endpoint = 0.0;    // D_KL(h* || g) over the given start occupancy
    double bits_per_walker = 0.0;
    double stot = 0.0;
};

namespace detail {

// y = K x for the tridiagonal forward kernel (columns = conditioning site).
inline void apply_forward_kernel(const Eigen::VectorXd& qr, const Eigen::MatrixXd& in,
                                 Eigen::MatrixXd& out) {
    const int n = static_cast<int>(qr.size());
    out.resize(n, in.cols());
    for (int c = 0; c < in.cols(); ++c) {
        out(0, c) = (1.0 - qr[1]) * in(1, c) + (1.0 - qr[0]) * in(0, c);
        for (int i = 1; i + 1 < n; ++i)
            out(i, c) = qr[i - 1] * in(i - 1, c) + (1.0 - qr[i + 1]) * in(i + 1, c);
        out(n - 1, c) = qr[n - 2] * in(n - 2, c) + qr[n - 1] * in(n - 1, c);
    }
}

inline void apply_reverse_kernel(const ReverseProbs& rp, const Eigen::MatrixXd& in,
                                 Eigen::MatrixXd& out) {
    const int n = static_cast<int>(rp.q_right.size());
    out.setZero(n, in.cols());
    for (int c = 0; c < in.cols(); ++c) {
        for (int i = 0; i < n; ++i) {
            const double m = in(i, c);
            if (m == 0.0) continue;
            if (i > 0) out(i - 1, c) += rp.q_left[i] * m;
            if (i + 1 < n) out(i + 1, c) += rp.q_right[i] * m;
            out(i, c) += rp.q_stay[i] * m;
        }
    }
}

}  // namespace detail

// Endpoint kernels h*(x_T | x_0) (exact playback of the recorded trajectory)
// and g(x_T | x_0) (forward dynamics applied for the same number of steps),
// composed as dense matrices of tridiagonal factors. p_start weights the
// conditioning site; pass the trajectory's final state for the exact
// fluctuation-theorem inequality stot >= kl.
inline EndpointInfo endpoint_kl_and_shannon(const LatticeTrajectory& traj,
                                            const Eigen::VectorXd& p_start) {
    const int n = traj.spec.sites();
    const int steps = traj.steps();
    if (n > kLatticeMaxKernelSites || steps > kLatticeMaxKernelSteps)
        throw ConfigError("endpoint kernels refused: " + std::to_string(n) + " sites x " +
                          std::to_string(steps) + " steps exceeds the " +
                          std::to_string(kLatticeMaxKernelSites) + " x " +
                          std::to_string(kLatticeMaxKernelSteps) + " budget");
    const Eigen::VectorXd& qr = traj.spec.q_right;

    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n), tmp;
    for (int k = steps; k >= 1; --k) {
        const ReverseProbs rp = reverse_probs(traj.states[k - 1], traj.states[k], qr);
        detail::apply_reverse_kernel(rp, h, tmp);
        h.swap(tmp);
    }
    Eigen::MatrixXd g = Eigen::MatrixXd::Identity(n, n);
    for (int k = 0; k < steps; ++k) {
        detail::apply_forward_kernel(qr, g, tmp);
        g.swap(tmp);
    }

    EndpointInfo info;
    for (int c = 0; c < n; ++c) {
        if (p_start[c] <= 0.0) continue;
        double kl = 0.0;
        for (int j = 0; j < n; ++j) {
            const double hv = h(j, c);
            if (hv <= 0.0) continue;
            if (g(j, c) <= 0.0)
                throw NumericalError("endpoint kernel support mismatch at (" +
                                     std::to_string(j) + "," + std::to_string(c) + ")");
            kl += hv * std::log(hv / g(j, c));
        }
        info.kl_endpoint += p_start[c] * kl;
    }
    info.bits_per_walker = info.kl_endpoint / std::log(2.0);
    info.stot = stot_discrete(traj);
    if (info.stot < info.kl_endpoint - 1e-9)
        throw std::logic_error("log-sum inequality violated: stot = " +
                               std::to_string(info.stot) + " < kl = " +
                               std::to_string(info.kl_endpoint));
    return info;
}

// Detailed-balance solution p_eq(x+l)/p_eq(x) = q_R(x)/q_L(x+l), normalized.
// Requires a confining profile (no outward drift at the walls).
inline Eigen::VectorXd stationary_distribution(const Eigen::VectorXd& q_right,
                                               double /*ell*/) {
    const int n = static_cast<int>(q_right.size());
    if (q_right[0] < 0.5 || q_right[n - 1] > 0.5)
        throw ConfigError("stationary_distribution: drift is not confining "
                          "(q_R(left) = " + std::to_string(q_right[0]) +
                          ", q_R(right) = " + std::to_string(q_right[n - 1]) + ")");
    Eigen::VectorXd logp(n);
    logp[0] = 0.0;
    for (int i = 0; i + 1 < n; ++i) {
        const double ql_next = 1.0 - q_right[i + 1];
        if (q_right[i] <= 0.0 || ql_next <= 0.0)
            throw ConfigError("stationary_distribution: chain not irreducible at site " +
                              std::to_string(i));
        logp[i + 1] = logp[i] + std::log(q_right[i]) - std::log(ql_next);
    }
    const double mx = logp.maxCoeff();
    Eigen::VectorXd p = (logp.array() - mx).exp();
    p /= p.sum();
    return p;
}

// Midpoint discretization of a Gaussian density onto the lattice sites.
inline Eigen::VectorXd discretize_gaussian(double mean, double var, double x_min,
                                           double ell, int sites) {
    Eigen::VectorXd p(sites);
    for (int i = 0; i < sites; ++i) {
        const double x = x_min + ell * i;
        p[i] = std::exp(-(x - mean) * (x - mean) / (2.0 * var));
    }
    p /= p.sum();
    return p;
}

inline Eigen::VectorXd discretize_gaussian(double mean, double var,
                                           const LatticeState& st) {
    return discretize_gaussian(mean, var, st.x_min, st.ell, st.sites());
}

// Continuum total entropy of the matched OU SDE dY = -c Y ds + sigma dB
// started at N(m0, v0): dense trapezoidal quadrature of the closed-form
// 1-D Gaussian rate. This is the lattice laboratory's convergence oracle.
inline double ou_continuum_stot(double c, double sigma_sq, double m0, double v0,
                                double T, int points = 20001) {
    const double v_eq = sigma_sq / (2.0 * c);
    auto rate = [&](double s) {
        const double mu = std::exp(-c * s);
        const double m = m0 * mu;
        const double v = v0 * mu * mu + v_eq * (1.0 - mu * mu);
        const double a = 1.0 / v - 1.0 / v_eq;  // score-gap slope
        return 0.5 * sigma_sq * (a * a * v + m * m / (v_eq * v_eq));
    };
    const double h = T / (points - 1);
    double acc = 0.5 * (rate(0.0) + rate(T));
    for (int i = 1; i + 1 < points; ++i) acc += rate(h * i);
    return acc * h;
}

// OU lattice assembly: drift b+ = -c x discretized with sigma^2 = ell^2/dt,
// start N(m0, v0), domain wide enough that wall occupancy is negligible.
inline LatticeState make_ou_lattice(double c, double sigma_sq, double m0, double v0,
                                    double ell, double domain_sigmas = 8.0,
                                    long walkers = 1000) {
    LatticeState st;
    st.ell = ell;
    st.dt = ell * ell / sigma_sq;
    const double v_eq = sigma_sq / (2.0 * c);
    const double wide = std::sqrt(std::max(v0, v_eq));
    const double lo = std::min(0.0, m0) - domain_sigmas * wide;
    const double hi = std::max(0.0, m0) + domain_sigmas * wide;
    const int sites = static_cast<int>(std::ceil((hi - lo) / ell)) + 1;
    st.x_min = lo;
    st.walkers = walkers;
    st.q_right = jump_probs_from_drift(
        [c](double x, double) { return -c * x; }, ell, st.dt, st.x_min, sites);
    st.p = discretize_gaussian(m0, v0, lo, ell, sites);
    return st;
}

}  // namespace entroflux
