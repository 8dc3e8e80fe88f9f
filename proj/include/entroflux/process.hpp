#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>
#include <json.hpp>

#include "entroflux/rng.hpp"

namespace entroflux {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ProcessKind { VP, VPx, SL };

inline std::string to_string(ProcessKind k) {
    switch (k) {
        case ProcessKind::VP: return "VP";
        case ProcessKind::VPx: return "VPx";
        case ProcessKind::SL: return "SL";
    }
    return "?";
}

inline ProcessKind process_kind_from_string(const std::string& s) {
    if (s == "VP" || s == "vp") return ProcessKind::VP;
    if (s == "VPx" || s == "vpx") return ProcessKind::VPx;
    if (s == "SL" || s == "sl") return ProcessKind::SL;
    throw ConfigError("unknown process kind: " + s);
}

// One forward diffusion process: dY = b+(Y,s) ds + sigma(s) dB.
//   VP/VPx: b+ = -beta(s) y / 2,  sigma = kappa * sqrt(beta(s))   (VP has kappa = 1)
//   SL:     b+ = -y / (1-s),      sigma = sigma0 * sqrt(2/(1-s))
// beta(s) is linear between beta_min and beta_max over [0, horizon]; set
// beta_min == beta_max for a constant schedule.
struct DiffusionSpec {
    ProcessKind kind = ProcessKind::VP;
    double beta_min = 0.1;
    double beta_max = 20.0;
    double kappa = 1.0;    // VPx noise scale
    double sigma0 = 0.1;   // SL noise scale
    double horizon = 1.0;  // T
    double s_lo = 1e-5;
    double s_hi = 1.0;

    static DiffusionSpec vp(double bmin = 0.1, double bmax = 20.0, double T = 1.0) {
        DiffusionSpec d;
        d.kind = ProcessKind::VP;
        d.beta_min = bmin;
        d.beta_max = bmax;
        d.kappa = 1.0;
        d.horizon = T;
        d.s_hi = T;
        return d;
    }

    static DiffusionSpec vpx(double kappa, double bmin = 0.1, double bmax = 20.0,
                             double T = 1.0) {
        DiffusionSpec d = vp(bmin, bmax, T);
        d.kind = ProcessKind::VPx;
        d.kappa = kappa;
        return d;
    }

    static DiffusionSpec sl(double sigma0, double T = 1.0) {
        DiffusionSpec d;
        d.kind = ProcessKind::SL;
        d.sigma0 = sigma0;
        d.horizon = T;
        d.s_hi = T - 1e-5;
        return d;
    }

    double beta(double s) const {
        return beta_min + (beta_max - beta_min) * s / horizon;
    }

    // closed form of int_0^s beta
    double beta_integral(double s) const {
        return beta_min * s + 0.5 * (beta_max - beta_min) * s * s / horizon;
    }

    bool constant_coefficients() const {
        return kind != ProcessKind::SL && beta_min == beta_max;
    }

    void validate() const {
        if (horizon <= 0) throw ConfigError("horizon must be positive");
        if (s_lo <= 0) throw ConfigError("s_lo must be positive");
        if (kind == ProcessKind::SL) {
            if (!(s_hi < horizon)) throw ConfigError("SL requires s_hi < horizon");
            if (sigma0 <= 0) throw ConfigError("sigma0 must be positive");
        } else {
            if (s_hi != horizon) throw ConfigError("VP/VPx require s_hi == horizon");
            if (beta_min <= 0 || beta_max <= 0)
                throw ConfigError("beta(s) must stay positive on [0, horizon]");
            if (kind == ProcessKind::VPx && kappa <= 0)
                throw ConfigError("kappa must be positive");
            if (kind == ProcessKind::VP && kappa != 1.0)
                throw ConfigError("VP has kappa fixed to 1");
        }
        if (s_lo >= s_hi) throw ConfigError("s_lo must be below s_hi");
    }
};

inline void to_json(nlohmann::json& j, const DiffusionSpec& d) {
    j = nlohmann::json{{"kind", to_string(d.kind)}, {"beta_min", d.beta_min},
                       {"beta_max", d.beta_max},   {"kappa", d.kappa},
                       {"sigma0", d.sigma0},       {"horizon", d.horizon},
                       {"s_lo", d.s_lo},           {"s_hi", d.s_hi}};
}

inline void from_json(const nlohmann::json& j, DiffusionSpec& d) {
    d.kind = process_kind_from_string(j.at("kind").get<std::string>());
    d.beta_min = j.value("beta_min", 0.1);
    d.beta_max = j.value("beta_max", 20.0);
    d.kappa = j.value("kappa", 1.0);
    d.sigma0 = j.value("sigma0", 0.1);
    d.horizon = j.value("horizon", 1.0);
    d.s_lo = j.value("s_lo", 1e-5);
    d.s_hi = j.value("s_hi", d.kind == ProcessKind::SL ? d.horizon - 1e-5 : d.horizon);
    d.validate();
}

// b+(x,s) = drift_coefficient(s) * x for all three processes.
inline double drift_coefficient(double s, const DiffusionSpec& spec) {
    if (spec.kind == ProcessKind::SL) {
        if (s >= 1.0)
            throw NumericalError("SL drift is singular at s >= 1 (s = " +
                                 std::to_string(s) + ")");
        return -1.0 / (1.0 - s);
    }
    return -0.5 * spec.beta(s);
}

inline double sigma(double s, const DiffusionSpec& spec) {
    if (spec.kind == ProcessKind::SL) {
        if (s >= 1.0)
            throw NumericalError("SL diffusion is singular at s >= 1");
        return spec.sigma0 * std::sqrt(2.0 / (1.0 - s));
    }
    return spec.kappa * std::sqrt(spec.beta(s));
}

inline std::pair<Eigen::VectorXd, double> drift_and_diffusion(
    const Eigen::VectorXd& x, double s, const DiffusionSpec& spec) {
    return {drift_coefficient(s, spec) * x, sigma(s, spec)};
}

// Perturbation kernel p(y_s | y_d) = N(mu(s) y_d, Sigma(s)^2 I).
struct KernelParams {
    double mu = 1.0;
    double sigma_big = 0.0;
};

inline KernelParams kernel_params(double s, const DiffusionSpec& spec) {
    if (spec.kind == ProcessKind::SL) {
        const double m = 1.0 - s;
        return {m, spec.sigma0 * std::sqrt(std::max(0.0, 1.0 - m * m))};
    }
    const double B = spec.beta_integral(s);
    const double mu = std::exp(-0.5 * B);
    const double var = spec.kappa * spec.kappa * (1.0 - std::exp(-B));
    return {mu, std::sqrt(std::max(0.0, var))};
}

struct NoisedSample {
    Eigen::VectorXd y_s;
    Eigen::VectorXd y_d;
    double s = 0.0;
    Eigen::VectorXd eps;           // the standard normal draw
    Eigen::VectorXd kernel_score;  // grad_y log p(y_s | y_d) = -eps / Sigma(s)
};

inline NoisedSample perturb(const Eigen::VectorXd& y_d, double s,
                            const Eigen::VectorXd& noise, const DiffusionSpec& spec) {
    const KernelParams k = kernel_params(s, spec);
    if (k.sigma_big <= 0.0)
        throw NumericalError("perturb: Sigma(s) = 0 at s = " + std::to_string(s) +
                             "; keep s >= s_lo");
    NoisedSample out;
    out.y_d = y_d;
    out.s = s;
    out.eps = noise;
    out.y_s = k.mu * y_d + k.sigma_big * noise;
    out.kernel_score = -noise / k.sigma_big;
    return out;
}

// Quasi-invariant distribution of the frozen dynamics, exp(int 2 b+ / sigma^2):
// an isotropic Gaussian for all three processes, independent of s.
inline double qid_variance(const DiffusionSpec& spec) {
    switch (spec.kind) {
        case ProcessKind::VP: return 1.0;
        case ProcessKind::VPx: return spec.kappa * spec.kappa;
        case ProcessKind::SL: return spec.sigma0 * spec.sigma0;
    }
    return 1.0;
}

inline std::pair<double, Eigen::VectorXd> qid(const Eigen::VectorXd& x, double /*s*/,
                                              const DiffusionSpec& spec) {
    const double v = qid_variance(spec);
    const double d = static_cast<double>(x.size());
    const double logp = -0.5 * d * std::log(2.0 * M_PI * v) - x.squaredNorm() / (2.0 * v);
    return {logp, Eigen::VectorXd(-x / v)};
}

// Batched qid score, rows are samples.
inline Eigen::MatrixXd qid_score_rows(const Eigen::MatrixXd& X, const DiffusionSpec& spec) {
    return -X / qid_variance(spec);
}

}  // namespace entroflux
