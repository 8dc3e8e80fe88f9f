#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "entroflux/estimate.hpp"
#include "entroflux/gaussian_mixture.hpp"
#include "entroflux/process.hpp"
#include "entroflux/rng.hpp"
#include "entroflux/threads.hpp"

namespace entroflux {

// Batched network (or oracle) output eps_theta(Y, s), rows are samples.
using EpsFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, double)>;

inline EpsFn eps_zero() {
    return [](const Eigen::MatrixXd& Y, double) {
        return Eigen::MatrixXd::Zero(Y.rows(), Y.cols()).eval();
    };
}

// Exact entropy-matching target for an analytic mixture:
// eps*(y, s) = grad log p(y, s) - grad log p_eq(y).
inline EpsFn eps_oracle(const GaussianMixture& p_d, const DiffusionSpec& spec) {
    return [p_d, spec](const Eigen::MatrixXd& Y, double s) {
        const GaussianMixture gm_s = pushforward(p_d, s, spec);
        Eigen::VectorXd logp;
        Eigen::MatrixXd score;
        log_density_and_score_rows(Y, gm_s, logp, score);
        return Eigen::MatrixXd(score - qid_score_rows(Y, spec));
    };
}

enum class CurveKind { IdealTot, Neural, ScoreMatch };

inline std::string to_string(CurveKind k) {
    switch (k) {
        case CurveKind::IdealTot: return "ideal_tot";
        case CurveKind::Neural: return "neural";
        case CurveKind::ScoreMatch: return "score_match";
    }
    return "?";
}

// Entropy-production rate and cumulative entropy on a time grid, with
// Monte-Carlo standard errors and quadrature diagnostics.
struct EntropyCurve {
    Eigen::VectorXd s_grid;
    Eigen::VectorXd rate, rate_stderr;
    Eigen::VectorXd cumulative, cumulative_stderr;
    CurveKind kind = CurveKind::IdealTot;
    double head_estimate = 0.0;  // integral clipped off at [0, s_lo)
    double tail_estimate = 0.0;  // integral clipped off at (s_hi, horizon] (SL)
    double quad_error_estimate = 0.0;

    MCEstimate total() const {
        return {cumulative[cumulative.size() - 1],
                cumulative_stderr[cumulative_stderr.size() - 1],
                static_cast<std::int64_t>(s_grid.size())};
    }

    void to_csv(std::ostream& os) const {
        os << "s,rate,rate_stderr,cumulative,cumulative_stderr,kind\n";
        char buf[256];
        for (int i = 0; i < s_grid.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%s\n",
                          s_grid[i], rate[i], rate_stderr[i], cumulative[i],
                          cumulative_stderr[i], to_string(kind).c_str());
            os << buf;
        }
    }
};

// Ideal entropy production rate at time s,
//   (sigma^2/2) E_{p(.,s)} | grad log p_eq - grad log p |^2,
// with both scores exact (p(.,s) is the pushforward mixture).
inline MCEstimate ideal_rate(double s, const GaussianMixture& p_d,
                             const DiffusionSpec& spec, int n, Rng& rng) {
    const GaussianMixture gm_s = pushforward(p_d, s, spec);
    const Eigen::MatrixXd X = sample(gm_s, n, rng);
    Eigen::VectorXd logp;
    Eigen::MatrixXd score;
    log_density_and_score_rows(X, gm_s, logp, score);
    const Eigen::MatrixXd gap = qid_score_rows(X, spec) - score;
    const double w = 0.5 * sigma(s, spec) * sigma(s, spec);
    MeanAccumulator acc;
    for (int i = 0; i < n; ++i) acc.add(w * gap.row(i).squaredNorm());
    return acc.estimate();
}

namespace detail {

inline MCEstimate curve_rate_at(CurveKind kind, double s, const GaussianMixture& p_d,
                                const DiffusionSpec& spec, const EpsFn& eps_fn, int n,
                                Rng& rng) {
    if (kind == CurveKind::IdealTot) return ideal_rate(s, p_d, spec, n, rng);
    const double w = 0.5 * sigma(s, spec) * sigma(s, spec);
    MeanAccumulator acc;
    if (kind == CurveKind::Neural || (kind == CurveKind::ScoreMatch && eps_fn)) {
        // probe with fresh data propagated through the perturbation kernel
        const Eigen::MatrixXd Yd = sample(p_d, n, rng);
        Eigen::MatrixXd eps(n, p_d.dim());
        rng.fill_normal(eps);
        const KernelParams k = kernel_params(s, spec);
        const Eigen::MatrixXd Ys = k.mu * Yd + k.sigma_big * eps;
        Eigen::MatrixXd out = eps_fn(Ys, s);
        if (kind == CurveKind::ScoreMatch) out += qid_score_rows(Ys, spec);
        for (int i = 0; i < n; ++i) acc.add(w * out.row(i).squaredNorm());
    } else {
        // exact score-matching integrand (sigma^2/2) E | grad log p |^2
        const GaussianMixture gm_s = pushforward(p_d, s, spec);
        const Eigen::MatrixXd X = sample(gm_s, n, rng);
        Eigen::VectorXd logp;
        Eigen::MatrixXd score;
        log_density_and_score_rows(X, gm_s, logp, score);
        for (int i = 0; i < n; ++i) acc.add(w * score.row(i).squaredNorm());
    }
    return acc.estimate();
}

}  // namespace detail

// Rate on a uniform grid over [s_lo, s_hi] plus trapezoidal cumulative.
// kind == Neural requires eps_fn (a trained network or an injected oracle).
// Each grid point runs on its own seeded substream; assembly order is fixed,
// so results do not depend on the worker count.
inline EntropyCurve entropy_curve(CurveKind kind, const GaussianMixture& p_d,
                                  const DiffusionSpec& spec, const EpsFn& eps_fn,
                                  int grid_n, int n_per_point, Rng& rng) {
    if (kind == CurveKind::Neural && !eps_fn)
        throw ConfigError("entropy_curve: Neural kind requires eps_theta");
    EntropyCurve c;
    c.kind = kind;
    c.s_grid.resize(grid_n);
    c.rate.resize(grid_n);
    c.rate_stderr.resize(grid_n);
    const double h = (spec.s_hi - spec.s_lo) / (grid_n - 1);
    for (int i = 0; i < grid_n; ++i) c.s_grid[i] = spec.s_lo + h * i;

    const Rng base = rng.fork(0x9e1);
    parallel_shards(grid_n, [&](int i) {
        Rng sub = base.fork(static_cast<std::uint64_t>(i));
        const MCEstimate r =
            detail::curve_rate_at(kind, c.s_grid[i], p_d, spec, eps_fn, n_per_point, sub);
        c.rate[i] = r.value;
        c.rate_stderr[i] = r.std_err;
    });

    c.cumulative.setZero(grid_n);
    c.cumulative_stderr.setZero(grid_n);
    double var = 0.0;
    for (int i = 1; i < grid_n; ++i) {
        c.cumulative[i] = c.cumulative[i - 1] + 0.5 * h * (c.rate[i - 1] + c.rate[i]);
        // trapezoid weight of an interior point is h, of the two ends h/2
        const double w_prev = (i == 1) ? 0.5 * h : 0.0;
        var += std::pow(w_prev * c.rate_stderr[i - 1], 2) +
               std::pow((i + 1 == grid_n ? 0.5 * h : h) * c.rate_stderr[i], 2);
        c.cumulative_stderr[i] = std::sqrt(var);
    }
    for (int i = 2; i + 1 < grid_n; ++i)
        c.quad_error_estimate +=
            std::abs(c.rate[i + 1] - 2.0 * c.rate[i] + c.rate[i - 1]) * h / 12.0;
    c.head_estimate = c.rate[0] * spec.s_lo;
    c.tail_estimate = c.rate[grid_n - 1] * (spec.horizon - spec.s_hi);
    return c;
}

// Jarzynski-form total entropy, KL(p_d || p_eq) - KL(P0 || p_eq) with
// P0 = pushforward(p_d, s_hi); both KLs by MC with exact log densities.
inline MCEstimate stot_via_kl_identity(const GaussianMixture& p_d,
                                       const DiffusionSpec& spec, int n, Rng& rng) {
    const GaussianMixture peq = qid_mixture(p_d.dim(), spec);
    const GaussianMixture p0 = pushforward(p_d, spec.s_hi, spec);
    Rng r1 = rng.fork(1), r2 = rng.fork(2);
    const MCEstimate a = kl_mc(p_d, peq, n, r1);
    const MCEstimate b = kl_mc(p0, peq, n, r2);
    return a - b;
}

// Change of Gibbs entropy along the forward process as a path integral,
//   S_G[P0] - S_G[P_d] = int ds E[ (sigma^2/2) |grad log p|^2 + div b+ ],
// an independent route to the same quantity as two direct entropy estimates.
inline MCEstimate gibbs_entropy_path_integral(const GaussianMixture& p_d,
                                              const DiffusionSpec& spec, int grid_n,
                                              int n, Rng& rng) {
    const EntropyCurve sm =
        entropy_curve(CurveKind::ScoreMatch, p_d, spec, nullptr, grid_n, n, rng);
    const double D = p_d.dim();
    double div_term;  // closed form of int_slo^shi div b+ ds
    if (spec.kind == ProcessKind::SL)
        div_term = D * (std::log(1.0 - spec.s_hi) - std::log(1.0 - spec.s_lo));
    else
        div_term = -0.5 * D * (spec.beta_integral(spec.s_hi) - spec.beta_integral(spec.s_lo));
    const MCEstimate t = sm.total();
    return {t.value + div_term, t.std_err, t.n};
}

struct SmEntropyResult {
    MCEstimate s_sm;          // int (sigma^2/2) E |score|^2 (or |s_theta|^2)
    MCEstimate identity_rhs;  // S_G[P0] - S_G[P_d] + (D/2) int beta
    double gap = 0.0;         // |s_sm - identity_rhs|
    double gap_err = 0.0;     // combined standard error
    double quad_error = 0.0;
};

// Score-matching entropy for a VP process together with the closed identity
// it must satisfy. Pass a null eps_fn to use exact mixture scores.
inline SmEntropyResult sm_entropy_and_identity(const GaussianMixture& p_d,
                                               const DiffusionSpec& spec,
                                               const EpsFn& eps_fn, int n, Rng& rng,
                                               int grid_n = 500) {
    if (spec.kind != ProcessKind::VP)
        throw ConfigError("sm_entropy_and_identity is derived for the VP process");
    Rng r1 = rng.fork(11), r2 = rng.fork(12), r3 = rng.fork(13);
    const EntropyCurve c =
        entropy_curve(CurveKind::ScoreMatch, p_d, spec, eps_fn, grid_n, n, r1);
    const GaussianMixture p0 = pushforward(p_d, spec.s_hi, spec);
    const MCEstimate sg0 = gibbs_entropy_mc(p0, n * 10, r2);
    const MCEstimate sgd = gibbs_entropy_mc(p_d, n * 10, r3);
    SmEntropyResult out;
    out.s_sm = c.total();
    const double beta_int = spec.beta_integral(spec.horizon);
    out.identity_rhs = {sg0.value - sgd.value + 0.5 * p_d.dim() * beta_int,
                        combined_err(sg0.std_err, sgd.std_err), sg0.n};
    out.gap = std::abs(out.s_sm.value - out.identity_rhs.value);
    out.gap_err = combined_err(out.s_sm.std_err, out.identity_rhs.std_err);
    out.quad_error = c.quad_error_estimate + c.head_estimate + c.tail_estimate;
    return out;
}

struct TurResult {
    bool satisfied = false;
    double slack = 0.0;  // stot * sigma^2 T - W2^2 / 2
    double lhs = 0.0;
    double rhs = 0.0;
};

// Thermodynamic uncertainty relation S_tot * sigma^2 T >= W2^2 / 2 for a
// constant-sigma process, with a 3x error budget on the MC side.
inline TurResult tur_check(double stot, double sigma_sq_T, double w2_sq,
                           double error_budget = 0.0) {
    TurResult r;
    r.lhs = stot * sigma_sq_T;
    r.rhs = 0.5 * w2_sq;
    r.slack = r.lhs - r.rhs;
    r.satisfied = r.slack >= -3.0 * error_budget;
    return r;
}

// beta (F[p] - F[q]) for static coefficients, with F[p] = E_p[U] - beta^-1 S_G[p],
// U = -int b+ and temperature beta^-1 = sigma^2/2. Equals KL(p || p_eq) when
// q = p_eq, and the total entropy KL(p||p_eq) - KL(q||p_eq) in general.
inline MCEstimate free_energy_gap(const GaussianMixture& p, const GaussianMixture& q,
                                  const DiffusionSpec& spec, int n, Rng& rng) {
    if (!spec.constant_coefficients())
        throw ConfigError("free_energy_gap requires time-independent coefficients "
                          "(constant-beta VP/VPx)");
    const double f = drift_coefficient(0.0, spec);
    const double sig = sigma(0.0, spec);
    const double beta_th = 2.0 / (sig * sig);
    auto energy = [&](const GaussianMixture& gm, Rng& r) {
        const Eigen::MatrixXd X = sample(gm, n, r);
        MeanAccumulator acc;
        for (int i = 0; i < X.rows(); ++i) acc.add(-0.5 * f * X.row(i).squaredNorm());
        return acc.estimate();
    };
    Rng r1 = rng.fork(21), r2 = rng.fork(22), r3 = rng.fork(23), r4 = rng.fork(24);
    const MCEstimate up = energy(p, r1);
    const MCEstimate uq = energy(q, r2);
    const MCEstimate sp = gibbs_entropy_mc(p, n, r3);
    const MCEstimate sq = gibbs_entropy_mc(q, n, r4);
    MCEstimate out;
    out.value = beta_th * (up.value - uq.value) - (sp.value - sq.value);
    out.std_err = std::sqrt(std::pow(beta_th * up.std_err, 2) +
                            std::pow(beta_th * uq.std_err, 2) +
                            sp.std_err * sp.std_err + sq.std_err * sq.std_err);
    out.n = n;
    return out;
}

inline MCEstimate free_energy_gap(const GaussianMixture& p, const DiffusionSpec& spec,
                                  int n, Rng& rng) {
    return free_energy_gap(p, qid_mixture(p.dim(), spec), spec, n, rng);
}

struct HTheoremCurve {
    Eigen::VectorXd s_grid;
    Eigen::VectorXd kl, kl_stderr;
};

// KL(p(.,s) || p_eq) on a grid. Common random numbers across grid points:
// each base draw (component, z) is transported through every kernel, so
// consecutive points share their MC noise and the monotone decrease is not
// drowned by independent-sample fluctuations.
inline HTheoremCurve h_theorem_curve(const GaussianMixture& p_d,
                                     const DiffusionSpec& spec, int grid_n, int n,
                                     Rng& rng) {
    const int D = p_d.dim();
    const int K = p_d.components();
    Eigen::VectorXd cum(K);
    double a = 0;
    for (int r = 0; r < K; ++r) { a += p_d.weights[r]; cum[r] = a; }
    std::vector<int> comp(n);
    Rng sub = rng.fork(0x47);
    for (int i = 0; i < n; ++i) {
        const double u = sub.uniform();
        int r = 0;
        while (r + 1 < K && u > cum[r]) ++r;
        comp[i] = r;
    }
    Eigen::MatrixXd Z(n, D);
    sub.fill_normal(Z);

    HTheoremCurve out;
    out.s_grid.resize(grid_n);
    out.kl.resize(grid_n);
    out.kl_stderr.resize(grid_n);
    const double h = (spec.s_hi - spec.s_lo) / (grid_n - 1);
    const GaussianMixture peq = qid_mixture(D, spec);
    for (int g = 0; g < grid_n; ++g) out.s_grid[g] = spec.s_lo + h * g;
    parallel_shards(grid_n, [&](int g) {
        const GaussianMixture gm_s = pushforward(p_d, out.s_grid[g], spec);
        Eigen::MatrixXd X(n, D);
        for (int i = 0; i < n; ++i) {
            const int r = comp[i];
            X.row(i) = gm_s.means.row(r) + std::sqrt(gm_s.variances[r]) * Z.row(i);
        }
        const Eigen::VectorXd lp = log_density_rows(X, gm_s);
        const Eigen::VectorXd lq = log_density_rows(X, peq);
        MeanAccumulator acc;
        for (int i = 0; i < n; ++i) acc.add(lp[i] - lq[i]);
        out.kl[g] = acc.mean();
        out.kl_stderr[g] = acc.std_err();
    });
    return out;
}

}  // namespace entroflux
