#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>

#include <Eigen/Core>
#include <json.hpp>

#include "entroflux/estimate.hpp"
#include "entroflux/process.hpp"
#include "entroflux/rng.hpp"

namespace entroflux {

// Mixture of isotropic Gaussians: sum_r w_r N(mean_r, var_r I). Exact
// densities, scores and samples; this is the analytic oracle the entropy
// identities are checked against.
struct GaussianMixture {
    Eigen::VectorXd weights;  // K, sums to 1
    Eigen::MatrixXd means;    // K x D
    Eigen::VectorXd variances;  // K, per-component isotropic variance

    int components() const { return static_cast<int>(weights.size()); }
    int dim() const { return static_cast<int>(means.cols()); }

    void validate() const {
        if (weights.size() == 0 || means.rows() != weights.size() ||
            variances.size() != weights.size())
            throw ConfigError("mixture: inconsistent component counts");
        if (std::abs(weights.sum() - 1.0) > 1e-12)
            throw ConfigError("mixture: weights must sum to 1");
        if ((weights.array() < 0).any()) throw ConfigError("mixture: negative weight");
        if ((variances.array() <= 0).any())
            throw ConfigError("mixture: variances must be positive");
        if (!means.allFinite()) throw ConfigError("mixture: non-finite mean");
    }

    static GaussianMixture single(const Eigen::VectorXd& mean, double var) {
        GaussianMixture g;
        g.weights = Eigen::VectorXd::Ones(1);
        g.means = mean.transpose();
        g.variances = Eigen::VectorXd::Constant(1, var);
        return g;
    }

    static GaussianMixture single1d(double mean, double var) {
        return single(Eigen::VectorXd::Constant(1, mean), var);
    }

    static GaussianMixture isotropic(int dim, double var) {
        return single(Eigen::VectorXd::Zero(dim), var);
    }
};

inline GaussianMixture qid_mixture(int dim, const DiffusionSpec& spec) {
    return GaussianMixture::isotropic(dim, qid_variance(spec));
}

inline void to_json(nlohmann::json& j, const GaussianMixture& g) {
    nlohmann::json means = nlohmann::json::array();
    for (int r = 0; r < g.components(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int d = 0; d < g.dim(); ++d) row.push_back(g.means(r, d));
        means.push_back(row);
    }
    j = nlohmann::json{
        {"weights", std::vector<double>(g.weights.data(), g.weights.data() + g.weights.size())},
        {"means", means},
        {"variances",
         std::vector<double>(g.variances.data(), g.variances.data() + g.variances.size())}};
}

inline void from_json(const nlohmann::json& j, GaussianMixture& g) {
    const auto w = j.at("weights").get<std::vector<double>>();
    const auto v = j.at("variances").get<std::vector<double>>();
    const auto m = j.at("means").get<std::vector<std::vector<double>>>();
    const int K = static_cast<int>(w.size());
    if (K == 0 || m.size() != w.size()) throw ConfigError("mixture json: bad shapes");
    const int D = static_cast<int>(m.front().size());
    g.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), K);
    g.variances = Eigen::Map<const Eigen::VectorXd>(v.data(), K);
    g.means.resize(K, D);
    for (int r = 0; r < K; ++r) {
        if (static_cast<int>(m[r].size()) != D) throw ConfigError("mixture json: ragged means");
        for (int d = 0; d < D; ++d) g.means(r, d) = m[r][d];
    }
    g.validate();
}

// log density and score in one pass, log-sum-exp stable.
inline std::pair<double, Eigen::VectorXd> log_density_and_score(
    const Eigen::VectorXd& x, const GaussianMixture& gm) {
    const int K = gm.components();
    const double D = static_cast<double>(gm.dim());
    Eigen::VectorXd logw(K);
    for (int r = 0; r < K; ++r) {
        const double v = gm.variances[r];
        const double q = (x - gm.means.row(r).transpose()).squaredNorm();
        const double lw = gm.weights[r] > 0 ? std::log(gm.weights[r])
                                            : -std::numeric_limits<double>::infinity();
        logw[r] = lw - 0.5 * D * std::log(2.0 * M_PI * v) - q / (2.0 * v);
    }
    const double mx = logw.maxCoeff();
    const Eigen::VectorXd g = (logw.array() - mx).exp();
    const double z = g.sum();
    const double logp = mx + std::log(z);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(gm.dim());
    for (int r = 0; r < K; ++r) {
        if (g[r] == 0.0) continue;
        score += (g[r] / z) * (gm.means.row(r).transpose() - x) / gm.variances[r];
    }
    return {logp, score};
}

inline double log_density(const Eigen::VectorXd& x, const GaussianMixture& gm) {
    return log_density_and_score(x, gm).first;
}

// Batched variant, rows are samples.
inline void log_density_and_score_rows(const Eigen::MatrixXd& X, const GaussianMixture& gm,
                                       Eigen::VectorXd& logp, Eigen::MatrixXd& score) {
    const int n = static_cast<int>(X.rows());
    const int K = gm.components();
    const double D = static_cast<double>(gm.dim());
    Eigen::MatrixXd logw(n, K);
    for (int r = 0; r < K; ++r) {
        const double v = gm.variances[r];
        const double lw = gm.weights[r] > 0 ? std::log(gm.weights[r])
                                            : -std::numeric_limits<double>::infinity();
        logw.col(r) = (X.rowwise() - gm.means.row(r)).rowwise().squaredNorm() *
                          (-0.5 / v) +
                      Eigen::VectorXd::Constant(n, lw - 0.5 * D * std::log(2.0 * M_PI * v));
    }
    const Eigen::VectorXd mx = logw.rowwise().maxCoeff();
    Eigen::MatrixXd gamma = (logw.colwise() - mx).array().exp();
    const Eigen::VectorXd z = gamma.rowwise().sum();
    logp = mx.array() + z.array().log();
    gamma.array().colwise() /= z.array();
    score.setZero(n, gm.dim());
    for (int r = 0; r < K; ++r) {
        score += gamma.col(r) * (gm.means.row(r) / gm.variances[r]);
        score -= (gamma.col(r) / gm.variances[r]).asDiagonal() * X;
    }
}

inline Eigen::VectorXd log_density_rows(const Eigen::MatrixXd& X, const GaussianMixture& gm) {
    Eigen::VectorXd logp;
    Eigen::MatrixXd score;
    log_density_and_score_rows(X, gm, logp, score);
    return logp;
}

// i.i.d. draws, one row per sample. Component chosen by weight, then an
// isotropic Gaussian draw.
inline Eigen::MatrixXd sample(const GaussianMixture& gm, int n, Rng& rng) {
    if (n < 1) throw ConfigError("sample: n must be >= 1");
    const int K = gm.components();
    Eigen::VectorXd cum(K);
    double acc = 0;
    for (int r = 0; r < K; ++r) {
        acc += gm.weights[r];
        cum[r] = acc;
    }
    Eigen::MatrixXd X(n, gm.dim());
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        int r = 0;
        while (r + 1 < K && u > cum[r]) ++r;
        const double c = std::sqrt(gm.variances[r]);
        for (int d = 0; d < gm.dim(); ++d) X(i, d) = gm.means(r, d) + c * rng.normal();
    }
    return X;
}

// Exact marginal of the forward SDE at time s started from gm: weights fixed,
// means scaled by mu(s), variances mapped to mu^2 c^2 + Sigma^2.
inline GaussianMixture pushforward(const GaussianMixture& gm, double s,
                                   const DiffusionSpec& spec) {
    const KernelParams k = kernel_params(s, spec);
    GaussianMixture out = gm;
    out.means *= k.mu;
    out.variances = (k.mu * k.mu) * gm.variances.array() + k.sigma_big * k.sigma_big;
    return out;
}

// Equal-weight mixture with means drawn uniformly from [-side/2, side/2]^D.
inline GaussianMixture random_mixture(int D, int K, double side, double var, Rng& rng) {
    if (side <= 0) throw ConfigError("random_mixture: side must be positive");
    GaussianMixture g;
    g.weights = Eigen::VectorXd::Constant(K, 1.0 / K);
    g.variances = Eigen::VectorXd::Constant(K, var);
    g.means.resize(K, D);
    for (int r = 0; r < K; ++r)
        for (int d = 0; d < D; ++d) g.means(r, d) = rng.uniform(-side / 2, side / 2);
    return g;
}

// W2^2 between isotropic Gaussians: |m1-m2|^2 + D (sqrt v1 - sqrt v2)^2.
inline double w2sq_isotropic(const Eigen::VectorXd& m1, double v1,
                             const Eigen::VectorXd& m2, double v2) {
    const double ds = std::sqrt(v1) - std::sqrt(v2);
    return (m1 - m2).squaredNorm() + static_cast<double>(m1.size()) * ds * ds;
}

using LogDensityFn = std::function<double(const Eigen::VectorXd&)>;
using SamplerFn = std::function<Eigen::MatrixXd(int, Rng&)>;

// MC estimate of E_p[log p - log q]; every non-finite log ratio is counted
// and reported via an exception, nothing is clipped.
inline MCEstimate kl_mc(const LogDensityFn& p_log, const LogDensityFn& q_log,
                        const SamplerFn& sampler, int n, Rng& rng) {
    const Eigen::MatrixXd X = sampler(n, rng);
    MeanAccumulator acc;
    int bad = 0;
    for (int i = 0; i < static_cast<int>(X.rows()); ++i) {
        const double r = p_log(X.row(i).transpose()) - q_log(X.row(i).transpose());
        if (!std::isfinite(r)) { ++bad; continue; }
        acc.add(r);
    }
    if (bad > 0)
        throw NumericalError("kl_mc: " + std::to_string(bad) + " of " + std::to_string(n) +
                             " log ratios were non-finite");
    return acc.estimate();
}

inline MCEstimate kl_mc(const GaussianMixture& p, const GaussianMixture& q, int n, Rng& rng) {
    return kl_mc([&](const Eigen::VectorXd& x) { return log_density(x, p); },
                 [&](const Eigen::VectorXd& x) { return log_density(x, q); },
                 [&](int m, Rng& r) { return sample(p, m, r); }, n, rng);
}

// Gibbs (differential) entropy -E_gm[log gm] by MC.
inline MCEstimate gibbs_entropy_mc(const GaussianMixture& gm, int n, Rng& rng) {
    if (n < 2) throw ConfigError("gibbs_entropy_mc: n must be >= 2");
    const Eigen::MatrixXd X = sample(gm, n, rng);
    const Eigen::VectorXd logp = log_density_rows(X, gm);
    MeanAccumulator acc;
    for (int i = 0; i < n; ++i) acc.add(-logp[i]);
    return acc.estimate();
}

// Closed forms used as test oracles.
inline double gaussian_kl(double m1, double v1, double m2, double v2) {
    return 0.5 * std::log(v2 / v1) + (v1 + (m1 - m2) * (m1 - m2)) / (2.0 * v2) - 0.5;
}

inline double gaussian_entropy(int D, double var) {
    return 0.5 * D * std::log(2.0 * M_PI * M_E * var);
}

}  // namespace entroflux
