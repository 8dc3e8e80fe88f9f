#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "entroflux/entropy.hpp"
#include "entroflux/process.hpp"
#include "entroflux/rng.hpp"

namespace entroflux {

enum class Scheme { EulerMaruyama, Heun };
enum class InitLaw { QID, KernelGaussian };

struct SamplerConfig {
    int steps = 500;
    Scheme scheme = Scheme::EulerMaruyama;
    InitLaw init = InitLaw::QID;
    double data_var = 1.0;  // c-bar^2 for the KernelGaussian initial law

    void validate() const {
        if (steps < 2) throw ConfigError("sampler: steps must be >= 2");
    }
};

// Forward-time grid from s_lo up to s_hi. Uniform for VP/VPx; for SL the
// spacing is geometric in (1 - s) so explicit stepping stays stable against
// the s = 1 singularity. Reverse integrators walk the same grid backwards.
inline Eigen::VectorXd make_time_grid(const DiffusionSpec& spec, int steps) {
    Eigen::VectorXd s(steps + 1);
    if (spec.kind == ProcessKind::SL) {
        const double a = 1.0 - spec.s_lo, b = 1.0 - spec.s_hi;
        const double r = std::pow(b / a, 1.0 / steps);
        double g = a;
        for (int i = 0; i <= steps; ++i, g *= r) s[i] = 1.0 - g;
        s[0] = spec.s_lo;
        s[steps] = spec.s_hi;
    } else {
        const double h = (spec.s_hi - spec.s_lo) / steps;
        for (int i = 0; i <= steps; ++i) s[i] = spec.s_lo + h * i;
    }
    return s;
}

inline Eigen::MatrixXd draw_initial(const DiffusionSpec& spec, const SamplerConfig& cfg,
                                    int n, int D, Rng& rng) {
    double var;
    if (cfg.init == InitLaw::QID) {
        var = qid_variance(spec);
    } else {
        const KernelParams k = kernel_params(spec.s_hi, spec);
        var = k.mu * k.mu * cfg.data_var + k.sigma_big * k.sigma_big;
    }
    Eigen::MatrixXd X(n, D);
    rng.fill_normal(X);
    return std::sqrt(var) * X;
}

// Entropy-matching reverse SDE
//   dX = ( b+(X, T-t) + sigma(T-t)^2 eps_theta(X, T-t) ) dt + sigma(T-t) dB_t,
// integrated by Euler-Maruyama from s_hi down to s_lo. eps_theta is always
// queried at the forward time s = T - t.
inline Eigen::MatrixXd reverse_sde_sample(const EpsFn& eps_fn, const DiffusionSpec& spec,
                                          const SamplerConfig& cfg, int n, int D,
                                          Rng& rng) {
    cfg.validate();
    const Eigen::VectorXd grid = make_time_grid(spec, cfg.steps);
    Eigen::MatrixXd X = draw_initial(spec, cfg, n, D, rng);
    Eigen::MatrixXd noise(n, D);
    for (int k = cfg.steps; k >= 1; --k) {
        const double s = grid[k];
        const double h = grid[k] - grid[k - 1];  // dt > 0
        const double sig = sigma(s, spec);
        const double f = drift_coefficient(s, spec);
        rng.fill_normal(noise);
        X += h * (f * X + (sig * sig) * eps_fn(X, s)) + (sig * std::sqrt(h)) * noise;
        if (!X.allFinite())
            throw NumericalError("reverse_sde_sample: non-finite state at step " +
                                 std::to_string(cfg.steps - k + 1));
    }
    return X;
}

// Probability-flow ODE, dx/dt = -( b+(x, s) - (sigma^2/2)(qid_score + eps_theta) ),
// deterministic given the initial draws. For the exact oracle on a stationary
// state the velocity cancels identically.
inline Eigen::MatrixXd pf_ode_sample(const EpsFn& eps_fn, const DiffusionSpec& spec,
                                     const SamplerConfig& cfg, int n, int D, Rng& rng) {
    cfg.validate();
    const Eigen::VectorXd grid = make_time_grid(spec, cfg.steps);
    Eigen::MatrixXd X = draw_initial(spec, cfg, n, D, rng);
    auto velocity = [&](const Eigen::MatrixXd& Y, double s) {
        const double sig2 = sigma(s, spec) * sigma(s, spec);
        const double f = drift_coefficient(s, spec);
        return Eigen::MatrixXd(-f * Y +
                               0.5 * sig2 * (qid_score_rows(Y, spec) + eps_fn(Y, s)));
    };
    for (int k = cfg.steps; k >= 1; --k) {
        const double h = grid[k] - grid[k - 1];
        const Eigen::MatrixXd v0 = velocity(X, grid[k]);
        if (cfg.scheme == Scheme::Heun) {
            const Eigen::MatrixXd Xp = X + h * v0;
            X += 0.5 * h * (v0 + velocity(Xp, grid[k - 1]));
        } else {
            X += h * v0;
        }
        if (!X.allFinite())
            throw NumericalError("pf_ode_sample: non-finite state at step " +
                                 std::to_string(cfg.steps - k + 1));
    }
    return X;
}

// Euler-Maruyama integration of the forward SDE from given states at s_lo to
// s_end (defaults to s_hi); used for kernel-consistency checks and for
// simulating the partially-reversed law P_{b+}.
inline Eigen::MatrixXd forward_euler_maruyama(const Eigen::MatrixXd& Y0,
                                              const DiffusionSpec& spec, int steps,
                                              Rng& rng, double s_end = -1.0) {
    if (s_end < 0) s_end = spec.s_hi;
    DiffusionSpec clipped = spec;
    clipped.s_hi = s_end;
    const Eigen::VectorXd grid = make_time_grid(clipped, steps);
    Eigen::MatrixXd X = Y0;
    Eigen::MatrixXd noise(Y0.rows(), Y0.cols());
    for (int k = 0; k < steps; ++k) {
        const double s = grid[k];
        const double h = grid[k + 1] - grid[k];
        const double sig = sigma(s, spec);
        rng.fill_normal(noise);
        X += h * drift_coefficient(s, spec) * X + (sig * std::sqrt(h)) * noise;
    }
    return X;
}

// Native dynamics of Eq. (forward drift, reverse clock): dX = b+(X, T-t) dt + sigma dB,
// started from P0; its terminal law lower-bounds the ideal total entropy.
inline Eigen::MatrixXd native_dynamics_sample(const Eigen::MatrixXd& X0,
                                              const DiffusionSpec& spec, int steps,
                                              Rng& rng) {
    const Eigen::VectorXd grid = make_time_grid(spec, steps);
    Eigen::MatrixXd X = X0;
    Eigen::MatrixXd noise(X0.rows(), X0.cols());
    for (int k = steps; k >= 1; --k) {
        const double s = grid[k];
        const double h = grid[k] - grid[k - 1];
        const double sig = sigma(s, spec);
        rng.fill_normal(noise);
        X += h * drift_coefficient(s, spec) * X + (sig * std::sqrt(h)) * noise;
    }
    return X;
}

}  // namespace entroflux
