#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "entroflux/process.hpp"
#include "entroflux/rng.hpp"

namespace entroflux {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// GELU in the tanh formulation, 0.5 x (1 + tanh(c1 (x + c2 x^3))); smooth with
// an exact analytic derivative, and tanh vectorizes where erf does not.
inline constexpr double kGeluC1 = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC2 = 0.044715;

template <class S>
inline S gelu(S x) {
    const S t = std::tanh(S(kGeluC1) * (x + S(kGeluC2) * x * x * x));
    return S(0.5) * x * (S(1) + t);
}

template <class S>
inline S gelu_prime(S x) {
    const S t = std::tanh(S(kGeluC1) * (x + S(kGeluC2) * x * x * x));
    const S du = S(kGeluC1) * (S(1) + S(3 * kGeluC2) * x * x);
    return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
}

namespace detail {

// batched activation: fills T = tanh(c1 (Z + c2 Z^3)) and the activation H
template <class S>
inline void gelu_batch(const MatX<S>& Z, MatX<S>& T, MatX<S>& H) {
    T = (S(kGeluC1) * (Z.array() + S(kGeluC2) * Z.array().cube())).tanh();
    H = S(0.5) * Z.array() * (S(1) + T.array());
}

template <class S>
inline MatX<S> gelu_prime_batch(const MatX<S>& Z, const MatX<S>& T) {
    return S(0.5) * (S(1) + T.array()) +
           S(0.5) * Z.array() * (S(1) - T.array().square()) *
               (S(kGeluC1) * (S(1) + S(3 * kGeluC2) * Z.array().square()));
}

}  // namespace detail

// Random Fourier features on x, frozen at init: embed(x) = [cos(2pi Bx), sin(2pi Bx)].
template <class S>
struct FourierEmbedding {
    MatX<S> freq;  // F x D, entries N(0, scale^2)
    S scale = S(1);

    int features() const { return static_cast<int>(freq.rows()); }
    int dim() const { return static_cast<int>(freq.cols()); }

    static FourierEmbedding random(int F, int D, double scale, Rng& rng) {
        FourierEmbedding e;
        e.scale = static_cast<S>(scale);
        e.freq.resize(F, D);
        for (int i = 0; i < F; ++i)
            for (int j = 0; j < D; ++j) e.freq(i, j) = static_cast<S>(scale * rng.normal());
        return e;
    }

    // rows are samples; output n x 2F
    MatX<S> embed(const MatX<S>& X) const {
        MatX<S> phase = S(2 * M_PI) * (X * freq.transpose());
        MatX<S> out(X.rows(), 2 * features());
        out.leftCols(features()) = phase.array().cos();
        out.rightCols(features()) = phase.array().sin();
        return out;
    }
};

template <class S>
struct MlpParams {
    std::vector<MatX<S>> W;  // layer l: (out_l x in_l)
    std::vector<VecX<S>> b;

    int layers() const { return static_cast<int>(W.size()); }

    long num_params() const {
        long n = 0;
        for (const auto& w : W) n += w.size();
        for (const auto& v : b) n += v.size();
        return n;
    }

    // He-normal hidden layers, output layer exactly zero so eps_theta == 0 at init.
    static MlpParams init(int in_dim, const std::vector<int>& hidden, int out_dim, Rng& rng) {
        MlpParams p;
        std::vector<int> dims;
        dims.push_back(in_dim);
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        dims.push_back(out_dim);
        for (size_t l = 0; l + 1 < dims.size(); ++l) {
            MatX<S> w(dims[l + 1], dims[l]);
            const bool last = (l + 2 == dims.size());
            const double std_dev = last ? 0.0 : std::sqrt(2.0 / dims[l]);
            for (int i = 0; i < w.rows(); ++i)
                for (int j = 0; j < w.cols(); ++j)
                    w(i, j) = static_cast<S>(std_dev * (last ? 0.0 : rng.normal()));
            p.W.push_back(std::move(w));
            p.b.push_back(VecX<S>::Zero(dims[l + 1]));
        }
        return p;
    }
};

template <class S>
struct MlpGrads {
    std::vector<MatX<S>> W;
    std::vector<VecX<S>> b;

    static MlpGrads zeros_like(const MlpParams<S>& p) {
        MlpGrads g;
        for (const auto& w : p.W) g.W.push_back(MatX<S>::Zero(w.rows(), w.cols()));
        for (const auto& v : p.b) g.b.push_back(VecX<S>::Zero(v.size()));
        return g;
    }

    void accumulate(const MlpGrads& o, S w = S(1)) {
        for (size_t l = 0; l < W.size(); ++l) {
            W[l] += w * o.W[l];
            b[l] += w * o.b[l];
        }
    }
};

// Per-sample loss evaluation for backprop: the mean-over-batch scalar, its
// gradient w.r.t. the network outputs, and the per-sample contributions
// (used for failure reporting).
template <class S>
struct LossEval {
    S loss = S(0);
    MatX<S> dloss_dout;
    VecX<S> per_sample;
};

// eps_theta(x, s): Fourier features of x concatenated with s / time_scale,
// through GELU hidden layers to a D-dimensional output.
template <class S>
struct Mlp {
    FourierEmbedding<S> emb;
    MlpParams<S> params;
    double time_scale = 1.0;

    int out_dim() const { return static_cast<int>(params.W.back().rows()); }

    static Mlp init(int D, int fourier_features, double fourier_scale,
                    const std::vector<int>& hidden, double horizon, Rng& rng) {
        Mlp m;
        m.emb = FourierEmbedding<S>::random(fourier_features, D, fourier_scale, rng);
        m.params = MlpParams<S>::init(2 * fourier_features + 1, hidden, D, rng);
        m.time_scale = horizon;
        return m;
    }

    MatX<S> assemble_input(const MatX<S>& X, const VecX<S>& s) const {
        if (!X.allFinite())
            throw NumericalError("mlp forward: non-finite input");
        MatX<S> A(X.rows(), 2 * emb.features() + 1);
        A.leftCols(2 * emb.features()) = emb.embed(X);
        A.col(A.cols() - 1) = s / static_cast<S>(time_scale);
        return A;
    }

    MatX<S> forward(const MatX<S>& X, const VecX<S>& s) const {
        MatX<S> H = assemble_input(X, s);
        const int L = params.layers();
        MatX<S> T;
        for (int l = 0; l < L; ++l) {
            MatX<S> Z = (H * params.W[l].transpose()).rowwise() + params.b[l].transpose();
            if (l + 1 < L)
                detail::gelu_batch(Z, T, H);
            else
                H = std::move(Z);
        }
        return H;
    }

    MatX<S> forward(const MatX<S>& X, double s) const {
        return forward(X, VecX<S>::Constant(X.rows(), static_cast<S>(s)));
    }

    // Reverse-mode gradients of loss_fn(forward(X, s)) w.r.t. all parameters.
    template <class LossFn>
    std::pair<S, MlpGrads<S>> grad(const MatX<S>& X, const VecX<S>& s,
                                   LossFn&& loss_fn) const {
        const int L = params.layers();
        std::vector<MatX<S>> acts(L + 1);  // acts[0] = input, acts[l] = post-activation
        std::vector<MatX<S>> pre(L), tnh(L);
        acts[0] = assemble_input(X, s);
        for (int l = 0; l < L; ++l) {
            pre[l] = (acts[l] * params.W[l].transpose()).rowwise() + params.b[l].transpose();
            if (l + 1 < L)
                detail::gelu_batch(pre[l], tnh[l], acts[l + 1]);
            else
                acts[l + 1] = pre[l];
        }

        LossEval<S> ev = loss_fn(acts[L]);
        if (!std::isfinite(static_cast<double>(ev.loss))) {
            long bad = -1;
            for (long i = 0; i < ev.per_sample.size(); ++i)
                if (!std::isfinite(static_cast<double>(ev.per_sample[i]))) { bad = i; break; }
            throw NumericalError("mlp grad: non-finite loss (sample index " +
                                 std::to_string(bad) + ")");
        }

        MlpGrads<S> g;  // every entry is assigned below
        g.W.resize(L);
        g.b.resize(L);
        MatX<S> delta = std::move(ev.dloss_dout);
        for (int l = L - 1; l >= 0; --l) {
            g.W[l].noalias() = delta.transpose() * acts[l];
            g.b[l] = delta.colwise().sum().transpose();
            if (l > 0) {
                MatX<S> prev = delta * params.W[l];
                delta = prev.array() *
                        detail::gelu_prime_batch(pre[l - 1], tnh[l - 1]).array();
            }
        }
        return {ev.loss, std::move(g)};
    }
};

template <class S>
struct AdamState {
    std::vector<MatX<S>> mW, vW;
    std::vector<VecX<S>> mb, vb;
    long step = 0;

    static AdamState zeros_like(const MlpParams<S>& p) {
        AdamState st;
        for (const auto& w : p.W) {
            st.mW.push_back(MatX<S>::Zero(w.rows(), w.cols()));
            st.vW.push_back(MatX<S>::Zero(w.rows(), w.cols()));
        }
        for (const auto& v : p.b) {
            st.mb.push_back(VecX<S>::Zero(v.size()));
            st.vb.push_back(VecX<S>::Zero(v.size()));
        }
        return st;
    }
};

// Standard Adam with bias correction; deterministic.
template <class S>
inline void adam_step(MlpParams<S>& p, const MlpGrads<S>& g, AdamState<S>& st,
                      double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
    ++st.step;
    const S b1 = static_cast<S>(beta1), b2 = static_cast<S>(beta2);
    const S c1 = static_cast<S>(1.0 / (1.0 - std::pow(beta1, st.step)));
    const S c2 = static_cast<S>(1.0 / (1.0 - std::pow(beta2, st.step)));
    const S a = static_cast<S>(lr), e = static_cast<S>(eps);
    for (size_t l = 0; l < p.W.size(); ++l) {
        st.mW[l] = b1 * st.mW[l] + (S(1) - b1) * g.W[l];
        st.vW[l] = b2 * st.vW[l].array() + (S(1) - b2) * g.W[l].array().square();
        p.W[l].array() -=
            a * (st.mW[l].array() * c1) / ((st.vW[l].array() * c2).sqrt() + e);
        st.mb[l] = b1 * st.mb[l] + (S(1) - b1) * g.b[l];
        st.vb[l] = b2 * st.vb[l].array() + (S(1) - b2) * g.b[l].array().square();
        p.b[l].array() -=
            a * (st.mb[l].array() * c1) / ((st.vb[l].array() * c2).sqrt() + e);
    }
}

template <class A, class B>
inline MatX<B> cast_matrix(const MatX<A>& m) {
    return m.template cast<B>();
}

inline Mlp<double> to_double(const Mlp<float>& m) {
    Mlp<double> out;
    out.emb.freq = m.emb.freq.cast<double>();
    out.emb.scale = static_cast<double>(m.emb.scale);
    out.time_scale = m.time_scale;
    for (const auto& w : m.params.W) out.params.W.push_back(w.cast<double>());
    for (const auto& v : m.params.b) out.params.b.push_back(v.cast<double>());
    return out;
}

inline Mlp<double> to_double(const Mlp<double>& m) { return m; }

namespace detail {

template <class S>
nlohmann::json matrix_to_json(const MatX<S>& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(static_cast<double>(m(i, j)));
        rows.push_back(std::move(row));
    }
    return rows;
}

template <class S>
MatX<S> matrix_from_json(const nlohmann::json& j) {
    const int r = static_cast<int>(j.size());
    const int c = r ? static_cast<int>(j[0].size()) : 0;
    MatX<S> m(r, c);
    for (int i = 0; i < r; ++i)
        for (int k = 0; k < c; ++k) m(i, k) = static_cast<S>(j[i][k].get<double>());
    return m;
}

template <class S>
nlohmann::json vector_to_json(const VecX<S>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(static_cast<double>(v[i]));
    return a;
}

template <class S>
VecX<S> vector_from_json(const nlohmann::json& j) {
    VecX<S> v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v[i] = static_cast<S>(j[i].get<double>());
    return v;
}

}  // namespace detail

// Self-describing checkpoint: shapes, Fourier matrix, parameters, optimizer
// moments, RNG state and epoch counter in one JSON container.
template <class S>
inline nlohmann::json checkpoint_to_json(const Mlp<S>& m, const AdamState<S>& st,
                                         Rng& rng, long epoch) {
    nlohmann::json j;
    j["format"] = "entroflux-checkpoint-v1";
    j["epoch"] = epoch;
    j["time_scale"] = m.time_scale;
    j["fourier"] = {{"scale", static_cast<double>(m.emb.scale)},
                    {"freq", detail::matrix_to_json(m.emb.freq)}};
    nlohmann::json layers = nlohmann::json::array();
    for (int l = 0; l < m.params.layers(); ++l)
        layers.push_back({{"W", detail::matrix_to_json(m.params.W[l])},
                          {"b", detail::vector_to_json(m.params.b[l])}});
    j["layers"] = std::move(layers);
    nlohmann::json adam;
    adam["step"] = st.step;
    nlohmann::json moms = nlohmann::json::array();
    for (size_t l = 0; l < st.mW.size(); ++l)
        moms.push_back({{"mW", detail::matrix_to_json(st.mW[l])},
                        {"vW", detail::matrix_to_json(st.vW[l])},
                        {"mb", detail::vector_to_json(st.mb[l])},
                        {"vb", detail::vector_to_json(st.vb[l])}});
    adam["moments"] = std::move(moms);
    j["adam"] = std::move(adam);
    j["rng_state"] = rng.state();
    j["rng_seed"] = rng.seed();
    return j;
}

template <class S>
inline void checkpoint_from_json(const nlohmann::json& j, Mlp<S>& m, AdamState<S>& st,
                                 Rng& rng, long& epoch) {
    if (j.value("format", "") != std::string("entroflux-checkpoint-v1"))
        throw ConfigError("not an entroflux checkpoint");
    epoch = j.at("epoch").get<long>();
    m.time_scale = j.at("time_scale").get<double>();
    m.emb.scale = static_cast<S>(j.at("fourier").at("scale").get<double>());
    m.emb.freq = detail::matrix_from_json<S>(j.at("fourier").at("freq"));
    m.params.W.clear();
    m.params.b.clear();
    for (const auto& layer : j.at("layers")) {
        m.params.W.push_back(detail::matrix_from_json<S>(layer.at("W")));
        m.params.b.push_back(detail::vector_from_json<S>(layer.at("b")));
    }
    st = AdamState<S>::zeros_like(m.params);
    st.step = j.at("adam").at("step").get<long>();
    const auto& moms = j.at("adam").at("moments");
    for (size_t l = 0; l < moms.size(); ++l) {
        st.mW[l] = detail::matrix_from_json<S>(moms[l].at("mW"));
        st.vW[l] = detail::matrix_from_json<S>(moms[l].at("vW"));
        st.mb[l] = detail::vector_from_json<S>(moms[l].at("mb"));
        st.vb[l] = detail::vector_from_json<S>(moms[l].at("vb"));
    }
    rng = Rng(j.at("rng_seed").get<std::uint64_t>());
    rng.set_state(j.at("rng_state").get<std::string>());
}

template <class S>
inline void save_checkpoint(const std::string& path, const Mlp<S>& m,
                            const AdamState<S>& st, Rng& rng, long epoch) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write checkpoint: " + path);
    f << checkpoint_to_json(m, st, rng, epoch);
}

template <class S>
inline void load_checkpoint(const std::string& path, Mlp<S>& m, AdamState<S>& st,
                            Rng& rng, long& epoch) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read checkpoint: " + path);
    nlohmann::json j;
    f >> j;
    checkpoint_from_json(j, m, st, rng, epoch);
}

}  // namespace entroflux
