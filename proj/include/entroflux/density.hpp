#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "entroflux/entropy.hpp"
#include "entroflux/estimate.hpp"
#include "entroflux/gaussian_mixture.hpp"
#include "entroflux/process.hpp"
#include "entroflux/rng.hpp"
#include "entroflux/threads.hpp"

namespace entroflux {

// Monte-Carlo lower bound on the model log density at x:
//   log p(x, T) >= -S_G[P0]
//     - T E_{s ~ U(s_lo, s_hi)} E_{y_s ~ kernel(.|x)}
//         [ (sigma^2/2) |qid_score + eps_theta|^2 - (b+ + sigma^2 eps_theta) . kernel_score ].
// The terminal expectation E[log p(Y_T)] is replaced by the analytic Gaussian
// entropy of the quasi-invariant state; terminal_mc = true estimates it by MC
// instead, which removes that substitution's (small) systematic offset.
inline MCEstimate logp_lower_bound(const Eigen::VectorXd& x, const EpsFn& eps_fn,
                                   const DiffusionSpec& spec, int n_s, int n_eps,
                                   Rng& rng, bool terminal_mc = false) {
    const int D = static_cast<int>(x.size());
    const double T = spec.horizon;
    const double v_eq = qid_variance(spec);

    MeanAccumulator path;  // one entry per time draw (inner mean over noise)
    Eigen::MatrixXd eps(n_eps, D), Ys, E;
    for (int j = 0; j < n_s; ++j) {
        const double s = rng.uniform(spec.s_lo, spec.s_hi);
        const KernelParams k = kernel_params(s, spec);
        const double sig = sigma(s, spec);
        const double f = drift_coefficient(s, spec);
        rng.fill_normal(eps);
        Ys = (k.mu * x.transpose()).replicate(n_eps, 1) + k.sigma_big * eps;
        E = eps_fn(Ys, s);
        double acc = 0.0;
        for (int i = 0; i < n_eps; ++i) {
            const double quad =
                0.5 * sig * sig * (-Ys.row(i) / v_eq + E.row(i)).squaredNorm();
            const double cross = (f * Ys.row(i) + sig * sig * E.row(i))
                                     .dot(-eps.row(i) / k.sigma_big);
            acc += quad - cross;
        }
        path.add(acc / n_eps);
    }

    double terminal;  // E[log p_u(Y_T, 0)] with the QID initial law
    double terminal_err = 0.0;
    if (terminal_mc) {
        const KernelParams kT = kernel_params(spec.s_hi, spec);
        MeanAccumulator tacc;
        for (int i = 0; i < n_eps; ++i) {
            Eigen::VectorXd yT = kT.mu * x + kT.sigma_big * rng.normal_vector(D);
            tacc.add(-0.5 * D * std::log(2.0 * M_PI * v_eq) -
                     yT.squaredNorm() / (2.0 * v_eq));
        }
        terminal = tacc.mean();
        terminal_err = tacc.std_err();
    } else {
        terminal = -gaussian_entropy(D, v_eq);  // -S_G[P0] with P0 ~= p_eq
    }

    MCEstimate out;
    out.value = terminal - T * path.mean();
    out.std_err = combined_err(T * path.std_err(), terminal_err);
    out.n = static_cast<std::int64_t>(n_s) * n_eps;
    return out;
}

struct DensityDiagnostics {
    MCEstimate kl;             // upper-bound estimate of KL(p_d || p_theta)
    MCEstimate cross_entropy;  // E_{p_d}[ -logp_lower_bound ]
    std::vector<double> logp_bound;  // per-probe bound values
    std::vector<double> logp_err;
    std::vector<double> logp_true;
    Eigen::MatrixXd probes;
};

// KL-to-truth and cross-entropy from the density lower bound. The reported KL
// upper-bounds the true divergence; it is never exact, and is labeled as an
// upper-bound estimate everywhere.
inline DensityDiagnostics kl_and_cross_entropy(const GaussianMixture& p_d,
                                               const EpsFn& eps_fn,
                                               const DiffusionSpec& spec, int n_x,
                                               int n_s, int n_eps, Rng& rng,
                                               bool terminal_mc = false) {
    DensityDiagnostics d;
    Rng probe_rng = rng.fork(1);
    d.probes = sample(p_d, n_x, probe_rng);
    d.logp_bound.resize(n_x);
    d.logp_err.resize(n_x);
    d.logp_true.resize(n_x);
    const Rng base = rng.fork(2);
    parallel_shards(n_x, [&](int i) {
        Rng sub = base.fork(static_cast<std::uint64_t>(i));
        const Eigen::VectorXd x = d.probes.row(i).transpose();
        const MCEstimate b = logp_lower_bound(x, eps_fn, spec, n_s, n_eps, sub, terminal_mc);
        d.logp_bound[i] = b.value;
        d.logp_err[i] = b.std_err;
        d.logp_true[i] = log_density(x, p_d);
    });
    MeanAccumulator kl_acc, ce_acc;
    for (int i = 0; i < n_x; ++i) {
        kl_acc.add(d.logp_true[i] - d.logp_bound[i]);
        ce_acc.add(-d.logp_bound[i]);
    }
    d.kl = kl_acc.estimate();
    d.cross_entropy = ce_acc.estimate();
    return d;
}

}  // namespace entroflux
