#pragma once

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "entroflux/entropy.hpp"
#include "entroflux/gaussian_mixture.hpp"
#include "entroflux/net.hpp"
#include "entroflux/process.hpp"
#include "entroflux/rng.hpp"
#include "entroflux/threads.hpp"

namespace entroflux {

enum class Objective { EntropyMatching, ScoreMatching };
enum class Weighting { Lambda1, LambdaHo };

struct TrainConfig {
    Objective objective = Objective::EntropyMatching;
    Weighting weighting = Weighting::LambdaHo;
    int epochs = 200;
    int batch_size = 256;
    int time_samples_per_datum = 10;
    double lr = 1e-3;
    std::uint64_t seed = 0;

    int fourier_features = 128;
    double fourier_scale = 1.0;
    std::vector<int> hidden = {512, 256};
    std::string precision = "f64";  // "f32" trades precision for training speed

    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    double divergence_guard = 1e6;

    // per-epoch neural-entropy estimate (coarse; final curves use dense grids)
    int snn_grid = 64;
    int snn_probes = 256;

    int grad_shards = 4;  // fixed shard count; reduction order never varies
    int checkpoint_interval = 0;
    std::string checkpoint_path;

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (time_samples_per_datum < 1)
            throw ConfigError("train: time_samples_per_datum must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (precision != "f64" && precision != "f32")
            throw ConfigError("train: precision must be f64 or f32");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{
        {"objective", c.objective == Objective::EntropyMatching ? "entropy_matching"
                                                                : "score_matching"},
        {"weighting", c.weighting == Weighting::LambdaHo ? "lambda_ho" : "lambda_1"},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"time_samples_per_datum", c.time_samples_per_datum},
        {"lr", c.lr},
        {"seed", c.seed},
        {"fourier_features", c.fourier_features},
        {"fourier_scale", c.fourier_scale},
        {"hidden", c.hidden},
        {"precision", c.precision},
        {"snn_grid", c.snn_grid},
        {"snn_probes", c.snn_probes},
        {"checkpoint_interval", c.checkpoint_interval},
        {"checkpoint_path", c.checkpoint_path}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    const std::string obj = j.value("objective", "entropy_matching");
    if (obj == "entropy_matching") c.objective = Objective::EntropyMatching;
    else if (obj == "score_matching") c.objective = Objective::ScoreMatching;
    else throw ConfigError("train: unknown objective " + obj);
    const std::string w = j.value("weighting", "lambda_ho");
    if (w == "lambda_ho") c.weighting = Weighting::LambdaHo;
    else if (w == "lambda_1") c.weighting = Weighting::Lambda1;
    else throw ConfigError("train: unknown weighting " + w);
    c.epochs = j.value("epochs", 200);
    c.batch_size = j.value("batch_size", 256);
    c.time_samples_per_datum = j.value("time_samples_per_datum", 10);
    c.lr = j.value("lr", 1e-3);
    c.seed = j.value("seed", std::uint64_t{0});
    c.fourier_features = j.value("fourier_features", 128);
    c.fourier_scale = j.value("fourier_scale", 1.0);
    c.hidden = j.value("hidden", std::vector<int>{512, 256});
    c.precision = j.value("precision", "f64");
    c.snn_grid = j.value("snn_grid", 64);
    c.snn_probes = j.value("snn_probes", 256);
    c.checkpoint_interval = j.value("checkpoint_interval", 0);
    c.checkpoint_path = j.value("checkpoint_path", std::string{});
    c.validate();
}

// Lambda(s) * sigma(s)^2 / 2: the per-sample weight of the denoising objective.
// LambdaHo (Lambda = 2 Sigma^2 / sigma^2) collapses it to Sigma(s)^2, which
// cancels the 1/Sigma divergence of the kernel score near s_lo.
inline double em_weight(double s, const DiffusionSpec& spec, Weighting w) {
    const double sig2 = sigma(s, spec) * sigma(s, spec);
    if (w == Weighting::LambdaHo) {
        const KernelParams k = kernel_params(s, spec);
        return k.sigma_big * k.sigma_big;
    }
    return 0.5 * sig2;
}

// Residual of the denoising entropy-matching objective:
//   r = grad log p_eq(y_s) + eps_out - grad log p(y_s | y_d).
inline Eigen::VectorXd em_residual(const NoisedSample& noised,
                                   const Eigen::VectorXd& eps_out,
                                   const DiffusionSpec& spec) {
    return qid(noised.y_s, noised.s, spec).second + eps_out - noised.kernel_score;
}

// Score-matching residual s_out - kernel_score; with s_theta = qid_score +
// eps_theta the two residuals coincide exactly.
inline Eigen::VectorXd sm_residual(const NoisedSample& noised,
                                   const Eigen::VectorXd& score_out) {
    return score_out - noised.kernel_score;
}

namespace detail {

// Per-row noising draws for one batch: stratified k draws per datum.
struct BatchDraws {
    Eigen::VectorXd s;        // m = n*k rows
    Eigen::MatrixXd y_s;      // m x D
    Eigen::MatrixXd offset;   // qid_score - kernel_score (EM) or -kernel_score (SM)
    Eigen::VectorXd weight;   // Lambda(s) sigma^2 / 2 per row
};

inline BatchDraws make_batch_draws(const Eigen::MatrixXd& y_d, const DiffusionSpec& spec,
                                   const TrainConfig& cfg, Rng& rng) {
    const int n = static_cast<int>(y_d.rows());
    const int D = static_cast<int>(y_d.cols());
    const int K = cfg.time_samples_per_datum;
    const int m = n * K;
    BatchDraws bd;
    bd.s.resize(m);
    bd.y_s.resize(m, D);
    bd.offset.resize(m, D);
    bd.weight.resize(m);
    const double v_eq = qid_variance(spec);
    Eigen::VectorXd eps(D);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < K; ++k) {
            const int row = i * K + k;
            const double s = rng.uniform(spec.s_lo, spec.s_hi);
            for (int d = 0; d < D; ++d) eps[d] = rng.normal();
            const KernelParams kp = kernel_params(s, spec);
            bd.s[row] = s;
            bd.y_s.row(row) = kp.mu * y_d.row(i) + kp.sigma_big * eps.transpose();
            // kernel_score = -eps / Sigma
            bd.offset.row(row) = eps.transpose() / kp.sigma_big;
            if (cfg.objective == Objective::EntropyMatching)
                bd.offset.row(row) -= bd.y_s.row(row) / v_eq;  // + qid_score
            bd.weight[row] = em_weight(s, spec, cfg.weighting);
        }
    }
    return bd;
}

}  // namespace detail

// Loss and parameter gradients of the denoising objective on one batch:
//   loss = T * mean_rows( weight * | net(y_s, s) + offset |^2 ).
// Rows are split into cfg.grad_shards fixed shards whose gradients are
// reduced in shard order, so the result is reproducible for any thread count.
template <class S>
inline std::pair<double, MlpGrads<S>> batch_loss_with(
    const Mlp<S>& mlp, const detail::BatchDraws& bd, const DiffusionSpec& spec,
    const TrainConfig& cfg) {
    const int m = static_cast<int>(bd.s.size());
    const double T = spec.horizon;
    const int nshards = std::max(1, std::min(cfg.grad_shards, m));
    const int chunk = (m + nshards - 1) / nshards;

    std::vector<double> shard_loss(nshards, 0.0);
    std::vector<MlpGrads<S>> shard_grads(nshards);
    std::vector<long> shard_rows(nshards, 0);

    parallel_shards(nshards, [&](int sh) {
        const int lo = sh * chunk;
        const int hi = std::min(m, lo + chunk);
        if (lo >= hi) { shard_grads[sh] = MlpGrads<S>::zeros_like(mlp.params); return; }
        const int rows = hi - lo;
        MatX<S> X = bd.y_s.middleRows(lo, rows).template cast<S>();
        VecX<S> sv = bd.s.segment(lo, rows).template cast<S>();
        MatX<S> off = bd.offset.middleRows(lo, rows).template cast<S>();
        VecX<S> wv = bd.weight.segment(lo, rows).template cast<S>();
        auto loss_fn = [&](const MatX<S>& out) {
            LossEval<S> ev;
            MatX<S> r = out + off;
            ev.per_sample = (r.array().square().rowwise().sum() * wv.array()) *
                            static_cast<S>(T);
            long double acc = 0;
            for (int i = 0; i < rows; ++i) {
                if (!std::isfinite(static_cast<double>(ev.per_sample[i])))
                    throw NumericalError(
                        "batch_loss: non-finite integrand at datum " +
                        std::to_string((lo + i) / cfg.time_samples_per_datum) +
                        ", s = " + std::to_string(bd.s[lo + i]));
                acc += ev.per_sample[i];
            }
            ev.loss = static_cast<S>(acc / rows);
            ev.dloss_dout =
                (r.array().colwise() * wv.array()) * static_cast<S>(2.0 * T / rows);
            return ev;
        };
        auto [loss, grads] = mlp.grad(X, sv, loss_fn);
        shard_loss[sh] = static_cast<double>(loss);
        shard_grads[sh] = std::move(grads);
        shard_rows[sh] = rows;
    });

    MlpGrads<S> total = MlpGrads<S>::zeros_like(mlp.params);
    long double loss_acc = 0;
    for (int sh = 0; sh < nshards; ++sh) {
        if (shard_rows[sh] == 0) continue;
        const double frac = static_cast<double>(shard_rows[sh]) / m;
        total.accumulate(shard_grads[sh], static_cast<S>(frac));
        loss_acc += shard_loss[sh] * frac;
    }
    return {static_cast<double>(loss_acc), std::move(total)};
}

template <class S>
inline std::pair<double, MlpGrads<S>> batch_loss(const Mlp<S>& mlp,
                                                 const Eigen::MatrixXd& y_d,
                                                 const DiffusionSpec& spec,
                                                 const TrainConfig& cfg, Rng& rng) {
    if (y_d.rows() == 0) throw ConfigError("batch_loss: empty batch");
    return batch_loss_with(mlp, detail::make_batch_draws(y_d, spec, cfg, rng), spec, cfg);
}

// Network adapter for the entropy/density/sampling estimators. The model must
// outlive the returned closure. A score-matching network is converted to the
// entropy-matching parameterization via eps = s_theta - qid_score.
template <class S>
inline EpsFn eps_from_mlp(const Mlp<S>& mlp, Objective obj = Objective::EntropyMatching,
                          const DiffusionSpec* spec = nullptr) {
    const Mlp<S>* net = &mlp;
    if (obj == Objective::ScoreMatching) {
        if (!spec) throw ConfigError("eps_from_mlp: score-matching needs the spec");
        const DiffusionSpec sp = *spec;
        return [net, sp](const Eigen::MatrixXd& Y, double s) {
            MatX<S> out = net->forward(Y.cast<S>().eval(),
                                       VecX<S>::Constant(Y.rows(), static_cast<S>(s)));
            return Eigen::MatrixXd(out.template cast<double>() - qid_score_rows(Y, sp));
        };
    }
    return [net](const Eigen::MatrixXd& Y, double s) {
        MatX<S> out = net->forward(Y.cast<S>().eval(),
                                   VecX<S>::Constant(Y.rows(), static_cast<S>(s)));
        return Eigen::MatrixXd(out.template cast<double>());
    };
}

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double snn_T = 0.0;
    double seconds = 0.0;  // wallclock since fit() started
};

template <class S>
struct FitResult {
    Mlp<S> model;
    AdamState<S> opt;
    std::vector<EpochLog> log;  // log[0] is the untrained state
};

// Shuffled-minibatch Adam on the denoising objective. probe_dist supplies the
// fresh held-out samples for the per-epoch neural-entropy estimate; training
// data is never reused there.
template <class S>
inline FitResult<S> fit(const Eigen::MatrixXd& data, const DiffusionSpec& spec,
                        const TrainConfig& cfg, const GaussianMixture& probe_dist) {
    cfg.validate();
    spec.validate();
    if (!data.allFinite()) throw ConfigError("fit: non-finite training data");
    const int N = static_cast<int>(data.rows());
    const int D = static_cast<int>(data.cols());
    const auto t0 = std::chrono::steady_clock::now();

    Rng root(cfg.seed);
    Rng init_rng = root.fork(1);
    Rng shuffle_rng = root.fork(2);
    Rng draw_rng = root.fork(3);

    FitResult<S> res;
    res.model = Mlp<S>::init(D, cfg.fourier_features, cfg.fourier_scale, cfg.hidden,
                             spec.horizon, init_rng);
    res.opt = AdamState<S>::zeros_like(res.model.params);

    auto snn_at_T = [&](int /*epoch*/) {
        // fixed probe stream: common random numbers across epochs make the
        // S_NN trend comparable epoch to epoch
        Rng probe_rng = root.fork(4);
        const EpsFn eps = eps_from_mlp(res.model, cfg.objective, &spec);
        const EntropyCurve c = entropy_curve(CurveKind::Neural, probe_dist, spec, eps,
                                             cfg.snn_grid, cfg.snn_probes, probe_rng);
        return c.total().value;
    };
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    res.log.push_back({0, 0.0, snn_at_T(0), elapsed()});

    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    Eigen::MatrixXd batch;
    for (int ep = 1; ep <= cfg.epochs; ++ep) {
        for (int i = N - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.index(i + 1)]);
        double loss_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < N; start += cfg.batch_size) {
            const int bn = std::min(cfg.batch_size, N - start);
            batch.resize(bn, D);
            for (int i = 0; i < bn; ++i) batch.row(i) = data.row(order[start + i]);
            auto [loss, grads] = batch_loss(res.model, batch, spec, cfg, draw_rng);
            if (loss > cfg.divergence_guard) {
                if (!cfg.checkpoint_path.empty())
                    save_checkpoint(cfg.checkpoint_path + ".diverged", res.model, res.opt,
                                    draw_rng, ep);
                throw NumericalError("fit: loss diverged to " + std::to_string(loss) +
                                     " at epoch " + std::to_string(ep));
            }
            adam_step(res.model.params, grads, res.opt, cfg.lr, cfg.adam_beta1,
                      cfg.adam_beta2, cfg.adam_eps);
            loss_sum += loss;
            ++batches;
        }
        res.log.push_back({ep, loss_sum / batches, snn_at_T(ep), elapsed()});
        if (cfg.checkpoint_interval > 0 && !cfg.checkpoint_path.empty() &&
            ep % cfg.checkpoint_interval == 0)
            save_checkpoint(cfg.checkpoint_path, res.model, res.opt, draw_rng, ep);
    }
    return res;
}

inline void training_log_csv(const std::vector<EpochLog>& log, std::ostream& os) {
    os << "epoch,loss,snn_T,wallclock_s\n";
    char buf[160];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.3f\n", e.epoch, e.loss, e.snn_T,
                      e.seconds);
        os << buf;
    }
}

}  // namespace entroflux
