// entroflux: experiment orchestration. JSON configs in, CSV/JSON artifacts
// out, deterministic under fixed seeds. Exit codes: 0 ok, 2 config error,
// 3 numerical abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "entroflux/density.hpp"
#include "entroflux/entropy.hpp"
#include "entroflux/gaussian_mixture.hpp"
#include "entroflux/io.hpp"
#include "entroflux/lattice.hpp"
#include "entroflux/net.hpp"
#include "entroflux/process.hpp"
#include "entroflux/sampler.hpp"
#include "entroflux/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace entroflux;

namespace {

GaussianMixture resolve_mixture(const json& j) {
    if (j.contains("random")) {
        const json& r = j.at("random");
        Rng rng(r.value("seed", std::uint64_t{1234}));
        return random_mixture(r.at("D").get<int>(), r.at("K").get<int>(),
                              r.value("side", 4.0), r.value("var", 1.0), rng);
    }
    return j.get<GaussianMixture>();
}

// "model": {"oracle": true} uses the exact eps* of the mixture; {"zero": true}
// the untrained network; {"checkpoint": path} a trained one.
struct ResolvedModel {
    EpsFn eps;
    std::shared_ptr<Mlp<double>> net;  // kept alive for the closure
    std::string describe;
};

ResolvedModel resolve_model(const json& j, const GaussianMixture& p_d,
                            const DiffusionSpec& spec) {
    ResolvedModel m;
    if (j.value("oracle", false)) {
        m.eps = eps_oracle(p_d, spec);
        m.describe = "oracle";
        return m;
    }
    if (j.value("zero", false)) {
        m.eps = eps_zero();
        m.describe = "zero";
        return m;
    }
    if (j.contains("checkpoint")) {
        m.net = std::make_shared<Mlp<double>>();
        AdamState<double> st;
        Rng rng(0);
        long epoch = 0;
        load_checkpoint(j.at("checkpoint").get<std::string>(), *m.net, st, rng, epoch);
        auto net = m.net;
        m.eps = [net](const Eigen::MatrixXd& Y, double s) {
            return net->forward(Y, Eigen::VectorXd::Constant(Y.rows(), s));
        };
        m.describe = "checkpoint@" + std::to_string(epoch);
        return m;
    }
    throw ConfigError("model must specify one of: oracle, zero, checkpoint");
}

void write_curve(const fs::path& path, const EntropyCurve& c) {
    std::ostringstream os;
    c.to_csv(os);
    write_text_file(path, os.str());
}

// ---------------------------------------------------------------------------
// lattice: OU random-walk runs over a refinement ladder, entropy bookkeeping
// and the endpoint fluctuation-theorem KL.
// ---------------------------------------------------------------------------
int cmd_lattice(const json& cfg, const fs::path& out) {
    Stopwatch watch;
    const double c = cfg.value("drift_coefficient", 1.0);
    const double sigma_sq = cfg.value("sigma_sq", 1.0);
    const double m0 = cfg.value("start_mean", 2.0);
    const double v0 = cfg.value("start_var", 0.25);
    const double T = cfg.value("total_time", 5.0);
    const double domain_sigmas = cfg.value("domain_sigmas", 8.0);
    const long walkers = cfg.value("walkers", 1000L);
    const bool want_endpoint = cfg.value("endpoint", true);
    const int stride = cfg.value("endpoint_stride", 0);
    const bool snapshots = cfg.value("snapshots", false);
    std::vector<double> levels =
        cfg.value("ell_levels", std::vector<double>{0.1, 0.05, 0.025});

    const double continuum = ou_continuum_stot(c, sigma_sq, m0, v0, T);
    std::ostringstream conv;
    conv << "ell,dt,steps,sites,stot,continuum,abs_error,observed_order\n";
    double prev_err = -1.0;

    for (size_t lv = 0; lv < levels.size(); ++lv) {
        const double ell = levels[lv];
        LatticeState st = make_ou_lattice(c, sigma_sq, m0, v0, ell, domain_sigmas, walkers);
        const int steps = static_cast<int>(std::llround(T / st.dt));
        LatticeTrajectory traj = run_forward(st, steps);

        const bool endpoint_ok = want_endpoint && st.sites() <= kLatticeMaxKernelSites &&
                                 steps <= kLatticeMaxKernelSteps;
        std::ostringstream os;
        os << "step,s,stot_cumulative,kl_endpoint_running\n";
        double stot_cum = 0.0;
        // running endpoint kernels, refreshed every `stride` steps
        for (int k = 0; k < steps; ++k) {
            const ReverseProbs rp =
                reverse_probs(traj.states[k], traj.states[k + 1], st.q_right);
            double acc = 0.0;
            for (int i = 0; i < st.sites(); ++i) {
                if (traj.states[k + 1][i] <= 0) continue;
                auto term = [&](double qt, double qf) {
                    return qt > 0 ? qt * std::log(qt / qf) : 0.0;
                };
                double kl = term(rp.q_right[i], st.q_right[i]) +
                            term(rp.q_left[i], 1.0 - st.q_right[i]);
                if (i == 0) kl += term(rp.q_stay[0], 1.0 - st.q_right[0]);
                if (i == st.sites() - 1)
                    kl += term(rp.q_stay[i], st.q_right[i]);
                acc += traj.states[k + 1][i] * kl;
            }
            stot_cum += acc;
            double kl_running = std::nan("");
            if (endpoint_ok && stride > 0 && ((k + 1) % stride == 0 || k + 1 == steps)) {
                LatticeTrajectory head;
                head.spec = st;
                head.states.assign(traj.states.begin(), traj.states.begin() + k + 2);
                kl_running = endpoint_kl_and_shannon(head, head.states.back()).kl_endpoint;
            }
            os << k + 1 << "," << fmt(st.dt * (k + 1)) << "," << fmt(stot_cum) << ","
               << fmt(kl_running) << "\n";
        }
        char name[64];
        std::snprintf(name, sizeof(name), "lattice_ell_%g.csv", ell);
        write_text_file(out / name, os.str());

        if (snapshots) {
            std::ostringstream ss;
            for (const auto& p : traj.states) {
                for (int i = 0; i < p.size(); ++i) ss << (i ? "," : "") << fmt(p[i]);
                ss << "\n";
            }
            std::snprintf(name, sizeof(name), "occupancy_ell_%g.csv", ell);
            write_text_file(out / name, ss.str());
        }

        const double stot = stot_cum;
        const double err = std::abs(stot - continuum);
        const double order = prev_err > 0 ? std::log2(prev_err / err) : std::nan("");
        prev_err = err;
        conv << fmt(ell) << "," << fmt(st.dt) << "," << steps << "," << st.sites() << ","
             << fmt(stot) << "," << fmt(continuum) << "," << fmt(err) << "," << fmt(order)
             << "\n";

        if (endpoint_ok) {
            const EndpointInfo info = endpoint_kl_and_shannon(traj, traj.states.back());
            json ep;
            ep["ell"] = ell;
            ep["kl_endpoint"] = info.kl_endpoint;
            ep["bits_per_walker"] = info.bits_per_walker;
            ep["stot"] = info.stot;
            ep["walkers"] = walkers;
            ep["total_bits"] = info.bits_per_walker * static_cast<double>(walkers);
            std::snprintf(name, sizeof(name), "endpoint_ell_%g.json", ell);
            std::ofstream f(out / name);
            f << ep.dump(2) << "\n";
        }
    }
    write_text_file(out / "convergence.csv", conv.str());
    write_manifest(out, cfg, json{{"seed", nullptr}}, watch.seconds());
    return 0;
}

// ---------------------------------------------------------------------------
// entropy-curve: ideal and score-matching curves plus identity cross-checks.
// ---------------------------------------------------------------------------
int cmd_entropy_curve(const json& cfg, const fs::path& out) {
    Stopwatch watch;
    const GaussianMixture p_d = resolve_mixture(cfg.at("mixture"));
    const DiffusionSpec spec = cfg.at("process").get<DiffusionSpec>();
    const int grid = cfg.value("grid", 500);
    const int points = cfg.value("points", 1000);
    const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});

    Rng rng(seed);
    Rng r1 = rng.fork(1), r2 = rng.fork(2), r3 = rng.fork(3);
    const EntropyCurve ideal =
        entropy_curve(CurveKind::IdealTot, p_d, spec, nullptr, grid, points, r1);
    write_curve(out / "ideal_tot.csv", ideal);

    json checks;
    const MCEstimate kl_form = stot_via_kl_identity(p_d, spec, grid * points, r2);
    checks["jarzynski"] = {{"path_integral", ideal.total().value},
                           {"path_integral_stderr", ideal.total().std_err},
                           {"kl_identity", kl_form.value},
                           {"kl_identity_stderr", kl_form.std_err},
                           {"quad_error", ideal.quad_error_estimate},
                           {"clipped_head", ideal.head_estimate},
                           {"clipped_tail", ideal.tail_estimate}};
    if (spec.kind == ProcessKind::VP) {
        const SmEntropyResult sm = sm_entropy_and_identity(p_d, spec, nullptr, points, r3, grid);
        const EntropyCurve smc =
            entropy_curve(CurveKind::ScoreMatch, p_d, spec, nullptr, grid, points, r3);
        write_curve(out / "score_match.csv", smc);
        checks["score_matching"] = {{"s_sm", sm.s_sm.value},
                                    {"s_sm_stderr", sm.s_sm.std_err},
                                    {"identity_rhs", sm.identity_rhs.value},
                                    {"identity_rhs_stderr", sm.identity_rhs.std_err},
                                    {"gap", sm.gap}};
    }
    std::ofstream f(out / "checks.json");
    f << checks.dump(2) << "\n";
    write_manifest(out, cfg, json{{"seed", seed}}, watch.seconds());
    return 0;
}

// ---------------------------------------------------------------------------
// transport: the Gaussian-mixture training pipeline (ideal curves, training
// logs, neural entropy curves, KL-to-truth summary).
// ---------------------------------------------------------------------------
struct SeedOutcome {
    std::uint64_t seed = 0;
    double snn_T = 0.0;
    double kl = 0.0, kl_err = 0.0;
    double ce = 0.0, ce_err = 0.0;
    double final_loss = 0.0;
};

template <class S>
SeedOutcome run_one_seed(const GaussianMixture& p_d, const DiffusionSpec& spec,
                         TrainConfig tc, std::uint64_t seed, const Eigen::MatrixXd& data,
                         const json& eval, const fs::path& out, const std::string& tag) {
    tc.seed = seed;
    if (!tc.checkpoint_path.empty())
        tc.checkpoint_path = (out / (tag + "_checkpoint.json")).string();
    FitResult<S> fit_res = fit<S>(data, spec, tc, p_d);

    std::ostringstream log;
    training_log_csv(fit_res.log, log);
    write_text_file(out / (tag + "_training_log.csv"), log.str());

    const Mlp<double> net = to_double(fit_res.model);
    Rng eval_rng(seed ^ 0xe7a1u);
    const EpsFn eps = eps_from_mlp(net, tc.objective, &spec);
    Rng r1 = eval_rng.fork(1), r2 = eval_rng.fork(2);
    const EntropyCurve neural =
        entropy_curve(CurveKind::Neural, p_d, spec, eps, eval.value("curve_grid", 500),
                      eval.value("curve_points", 1000), r1);
    write_curve(out / (tag + "_neural.csv"), neural);

    const DensityDiagnostics dd =
        kl_and_cross_entropy(p_d, eps, spec, eval.value("kl_n_x", 512),
                             eval.value("kl_n_s", 100), eval.value("kl_n_eps", 100), r2);
    Rng ck(seed);
    save_checkpoint((out / (tag + "_checkpoint.json")).string(), net,
                    AdamState<double>::zeros_like(net.params), ck, tc.epochs);

    SeedOutcome o;
    o.seed = seed;
    o.snn_T = neural.total().value;
    o.kl = dd.kl.value;
    o.kl_err = dd.kl.std_err;
    o.ce = dd.cross_entropy.value;
    o.ce_err = dd.cross_entropy.std_err;
    o.final_loss = fit_res.log.back().loss;
    return o;
}

int cmd_transport(const json& cfg, const fs::path& out) {
    Stopwatch watch;
    const GaussianMixture p_d = resolve_mixture(cfg.at("mixture"));
    const DiffusionSpec spec = cfg.at("process").get<DiffusionSpec>();
    TrainConfig tc = cfg.value("train", json::object()).get<TrainConfig>();
    const int N = cfg.value("samples", 8192);
    const std::vector<std::uint64_t> seeds =
        cfg.value("seeds", std::vector<std::uint64_t>{1, 2, 3, 4});
    const std::uint64_t data_seed = cfg.value("data_seed", std::uint64_t{99});
    const json eval = cfg.value("eval", json::object());

    {
        std::ofstream f(out / "mixture.json");
        json gm = p_d;
        f << gm.dump(2) << "\n";
    }
    Rng data_rng(data_seed);
    const Eigen::MatrixXd data = sample(p_d, N, data_rng);

    Rng curve_rng(data_seed ^ 0xc0ffee);
    const EntropyCurve ideal =
        entropy_curve(CurveKind::IdealTot, p_d, spec, nullptr, eval.value("curve_grid", 500),
                      eval.value("curve_points", 1000), curve_rng);
    write_curve(out / "ideal_tot.csv", ideal);

    json summary;
    summary["stot_ideal"] = ideal.total().value;
    summary["stot_ideal_stderr"] = ideal.total().std_err;
    json per_seed = json::array();
    double kl_mean = 0, snn_mean = 0;
    for (const auto seed : seeds) {
        const std::string tag = "seed" + std::to_string(seed);
        const SeedOutcome o =
            tc.precision == "f32"
                ? run_one_seed<float>(p_d, spec, tc, seed, data, eval, out, tag)
                : run_one_seed<double>(p_d, spec, tc, seed, data, eval, out, tag);
        per_seed.push_back({{"seed", o.seed},
                            {"snn_T", o.snn_T},
                            {"kl_upper_bound_estimate", o.kl},
                            {"kl_stderr", o.kl_err},
                            {"cross_entropy", o.ce},
                            {"cross_entropy_stderr", o.ce_err},
                            {"final_loss", o.final_loss}});
        kl_mean += o.kl;
        snn_mean += o.snn_T;
    }
    summary["per_seed"] = per_seed;
    summary["kl_upper_bound_mean"] = kl_mean / seeds.size();
    summary["snn_T_mean"] = snn_mean / seeds.size();
    summary["snn_over_stot"] = (snn_mean / seeds.size()) / ideal.total().value;
    std::ofstream f(out / "kl_summary.json");
    f << summary.dump(2) << "\n";
    write_manifest(out, cfg, json{{"seeds", seeds}, {"data_seed", data_seed}},
                   watch.seconds());
    return 0;
}

// ---------------------------------------------------------------------------
// sweep-n: neural entropy at T versus training-set size.
// ---------------------------------------------------------------------------
int cmd_sweep_n(const json& cfg, const fs::path& out, const std::string& n_override) {
    Stopwatch watch;
    const GaussianMixture p_d = resolve_mixture(cfg.at("mixture"));
    const DiffusionSpec spec = cfg.at("process").get<DiffusionSpec>();
    TrainConfig tc = cfg.value("train", json::object()).get<TrainConfig>();
    std::vector<long> n_list = cfg.value("n_list", std::vector<long>{10, 100, 1000, 8192});
    if (!n_override.empty()) {
        n_list.clear();
        std::stringstream ss(n_override);
        for (std::string tok; std::getline(ss, tok, ',');) n_list.push_back(std::stol(tok));
    }
    const std::vector<std::uint64_t> seeds = cfg.value("seeds", std::vector<std::uint64_t>{1});
    const std::uint64_t data_seed = cfg.value("data_seed", std::uint64_t{99});
    const json eval = cfg.value("eval", json::object());

    std::ostringstream table;
    table << "N,snn_T_mean,snn_T_std,kl_mean,kl_std\n";
    for (const long N : n_list) {
        Rng data_rng(data_seed);
        const Eigen::MatrixXd data = sample(p_d, static_cast<int>(N), data_rng);
        MeanAccumulator snn, kl;
        for (const auto seed : seeds) {
            const std::string tag = "N" + std::to_string(N) + "_seed" + std::to_string(seed);
            const SeedOutcome o =
                tc.precision == "f32"
                    ? run_one_seed<float>(p_d, spec, tc, seed, data, eval, out, tag)
                    : run_one_seed<double>(p_d, spec, tc, seed, data, eval, out, tag);
            snn.add(o.snn_T);
            kl.add(o.kl);
        }
        const double snn_std = seeds.size() > 1 ? std::sqrt(snn.variance()) : 0.0;
        const double kl_std = seeds.size() > 1 ? std::sqrt(kl.variance()) : 0.0;
        table << N << "," << fmt(snn.mean()) << "," << fmt(snn_std) << ","
              << fmt(kl.mean()) << "," << fmt(kl_std) << "\n";
    }
    write_text_file(out / "sweep_n.csv", table.str());
    write_manifest(out, cfg, json{{"seeds", seeds}, {"data_seed", data_seed}},
                   watch.seconds());
    return 0;
}

// ---------------------------------------------------------------------------
// sample: reverse-SDE or PF-ODE generation.
// ---------------------------------------------------------------------------
int cmd_sample(const json& cfg, const fs::path& out) {
    Stopwatch watch;
    const GaussianMixture p_d = resolve_mixture(cfg.at("mixture"));
    const DiffusionSpec spec = cfg.at("process").get<DiffusionSpec>();
    const ResolvedModel model = resolve_model(cfg.at("model"), p_d, spec);
    const int n = cfg.value("n", 1000);
    const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
    SamplerConfig sc;
    const json s = cfg.value("sampler", json::object());
    sc.steps = s.value("steps", 500);
    sc.scheme = s.value("scheme", std::string("euler")) == "heun" ? Scheme::Heun
                                                                  : Scheme::EulerMaruyama;
    sc.init = s.value("init", std::string("qid")) == "kernel" ? InitLaw::KernelGaussian
                                                              : InitLaw::QID;
    sc.data_var = s.value("data_var", 1.0);
    const std::string method = cfg.value("method", "reverse_sde");

    Rng rng(seed);
    Eigen::MatrixXd X;
    if (method == "reverse_sde")
        X = reverse_sde_sample(model.eps, spec, sc, n, p_d.dim(), rng);
    else if (method == "pf_ode")
        X = pf_ode_sample(model.eps, spec, sc, n, p_d.dim(), rng);
    else
        throw ConfigError("sample: method must be reverse_sde or pf_ode");

    std::ostringstream os;
    os << "# entroflux sample method=" << method << " model=" << model.describe
       << " process=" << to_string(spec.kind) << " steps=" << sc.steps << " seed=" << seed
       << "\n";
    for (int i = 0; i < X.rows(); ++i) {
        for (int d = 0; d < X.cols(); ++d) os << (d ? "," : "") << fmt(X(i, d));
        os << "\n";
    }
    write_text_file(out / "samples.csv", os.str());

    // the initial-law mismatch KL(P0 || init) is reported, never assumed zero
    Rng mm_rng(seed ^ 0x1717);
    const auto p0 = pushforward(p_d, spec.s_hi, spec);
    double init_var = qid_variance(spec);
    if (sc.init == InitLaw::KernelGaussian) {
        const KernelParams k = kernel_params(spec.s_hi, spec);
        init_var = k.mu * k.mu * sc.data_var + k.sigma_big * k.sigma_big;
    }
    const MCEstimate mism =
        kl_mc(p0, GaussianMixture::isotropic(p_d.dim(), init_var), 20000, mm_rng);
    write_manifest(out, cfg,
                   json{{"seed", seed},
                        {"init_mismatch_kl", mism.value},
                        {"init_mismatch_kl_stderr", mism.std_err}},
                   watch.seconds());
    return 0;
}

// ---------------------------------------------------------------------------
// density: log-density lower bound, KL upper-bound estimate, cross entropy.
// ---------------------------------------------------------------------------
int cmd_density(const json& cfg, const fs::path& out) {
    Stopwatch watch;
    const GaussianMixture p_d = resolve_mixture(cfg.at("mixture"));
    const DiffusionSpec spec = cfg.at("process").get<DiffusionSpec>();
    const ResolvedModel model = resolve_model(cfg.at("model"), p_d, spec);
    const int n_x = cfg.value("n_x", 512);
    const int n_s = cfg.value("n_s", 100);
    const int n_eps = cfg.value("n_eps", 100);
    const bool terminal_mc = cfg.value("terminal_mc", false);
    const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});

    Rng rng(seed);
    const DensityDiagnostics d =
        kl_and_cross_entropy(p_d, model.eps, spec, n_x, n_s, n_eps, rng, terminal_mc);

    std::ostringstream os;
    os << "x_index,logp_bound,std_err\n";
    for (int i = 0; i < n_x; ++i)
        os << i << "," << fmt(d.logp_bound[i]) << "," << fmt(d.logp_err[i]) << "\n";
    write_text_file(out / "density.csv", os.str());

    json summary;
    summary["kl_upper_bound_estimate"] = d.kl.value;
    summary["kl_stderr"] = d.kl.std_err;
    summary["cross_entropy"] = d.cross_entropy.value;
    summary["cross_entropy_stderr"] = d.cross_entropy.std_err;
    summary["terminal_mc"] = terminal_mc;
    summary["model"] = model.describe;
    std::ofstream f(out / "summary.json");
    f << summary.dump(2) << "\n";
    write_manifest(out, cfg, json{{"seed", seed}}, watch.seconds());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"entroflux: entropy-matching diffusion at desk scale"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".", n_override;
    int threads = 0;
    app.add_option("--threads", threads, "cap on worker threads (0 = all cores)");

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", out_dir, "output directory (default: cwd)");
    };
    CLI::App* lat = app.add_subcommand("lattice", "random-walk entropy laboratory");
    add_common(lat);
    CLI::App* tra = app.add_subcommand("transport", "train and measure neural entropy");
    add_common(tra);
    CLI::App* swp = app.add_subcommand("sweep-n", "neural entropy vs training-set size");
    add_common(swp);
    swp->add_option("--n", n_override, "comma-separated N list override");
    CLI::App* ent = app.add_subcommand("entropy-curve", "ideal entropy curves and identities");
    add_common(ent);
    CLI::App* sam = app.add_subcommand("sample", "generate samples");
    add_common(sam);
    CLI::App* den = app.add_subcommand("density", "log-density lower bound and KL");
    add_common(den);

    CLI11_PARSE(app, argc, argv);
    if (threads > 0) max_threads() = threads;

    try {
        const json cfg = load_json(config_path);
        const fs::path out(out_dir);
        std::error_code ec;
        fs::create_directories(out, ec);
        if (app.got_subcommand(lat)) return cmd_lattice(cfg, out);
        if (app.got_subcommand(tra)) return cmd_transport(cfg, out);
        if (app.got_subcommand(swp)) return cmd_sweep_n(cfg, out, n_override);
        if (app.got_subcommand(ent)) return cmd_entropy_curve(cfg, out);
        if (app.got_subcommand(sam)) return cmd_sample(cfg, out);
        if (app.got_subcommand(den)) return cmd_density(cfg, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
