#include <catch2/catch_amalgamated.hpp>

#include "entroflux/estimate.hpp"
#include "entroflux/process.hpp"
#include "entroflux/rng.hpp"
#include "entroflux/sampler.hpp"

#include <json.hpp>

using namespace entroflux;
using Catch::Approx;

namespace {
Eigen::VectorXd vec1(double x) { return Eigen::VectorXd::Constant(1, x); }
}  // namespace

TEST_CASE("drift and diffusion closed forms", "[process]") {
    auto vpx = DiffusionSpec::vpx(0.1, 2.0, 2.0);
    auto [b, sig] = drift_and_diffusion(vec1(1.0), 0.3, vpx);
    CHECK(b[0] == Approx(-1.0));
    CHECK(sig == Approx(0.1 * std::sqrt(2.0)));

    auto sl = DiffusionSpec::sl(0.1);
    CHECK(drift_and_diffusion(vec1(0.0), 0.42, sl).first[0] == 0.0);
    auto [bsl, sigsl] = drift_and_diffusion(vec1(1.0), 0.5, sl);
    CHECK(bsl[0] == Approx(-2.0));
    CHECK(sigsl == Approx(0.2));

    CHECK_THROWS_AS(drift_and_diffusion(vec1(1.0), 1.0, sl), NumericalError);
    CHECK_THROWS_AS(sigma(1.2, sl), NumericalError);
}

TEST_CASE("kernel params", "[process]") {
    for (auto spec : {DiffusionSpec::vp(), DiffusionSpec::vpx(0.1), DiffusionSpec::sl(0.1)}) {
        const KernelParams k0 = kernel_params(0.0, spec);
        CHECK(k0.mu == 1.0);
        CHECK(k0.sigma_big == 0.0);
    }
    const KernelParams ksl = kernel_params(0.5, DiffusionSpec::sl(0.1));
    CHECK(ksl.mu == Approx(0.5));
    CHECK(ksl.sigma_big == Approx(0.1 * std::sqrt(0.75)));

    const KernelParams kvp = kernel_params(1.0, DiffusionSpec::vp(2.0, 2.0));
    CHECK(kvp.mu == Approx(std::exp(-1.0)));
    CHECK(kvp.sigma_big * kvp.sigma_big == Approx(1.0 - std::exp(-2.0)));

    // Sigma strictly increasing on [0, horizon]
    auto spec = DiffusionSpec::vp();
    double prev = -1.0;
    for (double s = 0.0; s <= 1.0; s += 0.05) {
        const double cur = kernel_params(s, spec).sigma_big;
        CHECK(cur > prev);
        prev = cur;
    }
}

TEST_CASE("perturb satisfies the noised-sample invariants", "[process]") {
    auto spec = DiffusionSpec::vp(2.0, 2.0);
    const NoisedSample zero = perturb(vec1(1.5), 0.7, vec1(0.0), spec);
    CHECK(zero.y_s[0] == Approx(kernel_params(0.7, spec).mu * 1.5));
    CHECK(zero.kernel_score[0] == 0.0);

    const NoisedSample ns = perturb(vec1(1.0), 1.0, vec1(1.0), spec);
    const double SIG = std::sqrt(1.0 - std::exp(-2.0));
    CHECK(ns.y_s[0] == Approx(std::exp(-1.0) + SIG));
    CHECK(ns.kernel_score[0] == Approx(-1.0 / SIG));

    CHECK_THROWS_AS(perturb(vec1(1.0), 0.0, vec1(1.0), spec), NumericalError);
}

TEST_CASE("perturb matches kernel moments statistically", "[process]") {
    auto spec = DiffusionSpec::vp();
    const double s = 0.4;
    const KernelParams k = kernel_params(s, spec);
    Rng rng(31);
    const int n = 100000;
    MeanAccumulator mean, sq;
    for (int i = 0; i < n; ++i) {
        const NoisedSample ns = perturb(vec1(2.0), s, vec1(rng.normal()), spec);
        mean.add(ns.y_s[0]);
        sq.add(ns.y_s[0] * ns.y_s[0]);
    }
    CHECK(std::abs(mean.mean() - k.mu * 2.0) < 3.0 * mean.std_err());
    const double var = sq.mean() - mean.mean() * mean.mean();
    const double want = k.sigma_big * k.sigma_big;
    CHECK(std::abs(var - want) < 3.0 * want * std::sqrt(2.0 / n) + 3.0 * sq.std_err() / 10);
}

TEST_CASE("quasi-invariant distribution", "[process]") {
    auto vp = DiffusionSpec::vp(2.0, 2.0);
    CHECK(qid(vec1(3.0), 0.5, vp).second[0] == Approx(-3.0));

    auto vpx = DiffusionSpec::vpx(0.1);
    CHECK(qid(vec1(0.1), 0.2, vpx).second[0] == Approx(-10.0));

    // VPx(kappa) and SL(sigma0 = kappa) share the quasi-invariant state,
    // and it does not depend on s for any of the processes
    auto sl = DiffusionSpec::sl(0.1);
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        Eigen::VectorXd x = rng.normal_vector(3);
        const auto a = qid(x, rng.uniform(), vpx);
        const auto b = qid(x, rng.uniform(), sl);
        CHECK(a.first == Approx(b.first).margin(1e-14));
        CHECK((a.second - b.second).norm() < 1e-14);
    }
}

TEST_CASE("qid score is the gradient of qid log density", "[process]") {
    Rng rng(17);
    for (auto spec : {DiffusionSpec::vp(), DiffusionSpec::vpx(0.3), DiffusionSpec::sl(0.2)}) {
        for (int rep = 0; rep < 30; ++rep) {
            Eigen::VectorXd x = 2.0 * rng.normal_vector(2);
            const auto [logp, score] = qid(x, 0.3, spec);
            for (int d = 0; d < 2; ++d) {
                const double h = 1e-6 * std::max(1.0, std::abs(x[d]));
                Eigen::VectorXd xp = x, xm = x;
                xp[d] += h;
                xm[d] -= h;
                const double fd = (qid(xp, 0.3, spec).first - qid(xm, 0.3, spec).first) / (2 * h);
                CHECK(std::abs(fd - score[d]) <=
                      1e-6 * std::max(1.0, std::abs(score[d])));
            }
        }
    }
}

TEST_CASE("euler-maruyama forward reproduces the closed-form kernel", "[process]") {
    struct Case {
        DiffusionSpec spec;
        double s_end;
        double tol;  // relative, on the moment scale
    };
    const std::vector<Case> cases = {
        {DiffusionSpec::vp(2.0, 2.0), 1.0, 0.01},
        {DiffusionSpec::vpx(0.1, 2.0, 2.0), 1.0, 0.01},
        {DiffusionSpec::sl(0.1), 0.9, 0.02},
    };
    for (const auto& c : cases) {
        const double y0 = 2.0;
        const int n = 10000, steps = 10000;
        Rng rng(77);
        Eigen::MatrixXd Y0 = Eigen::MatrixXd::Constant(n, 1, y0);
        const Eigen::MatrixXd Y = forward_euler_maruyama(Y0, c.spec, steps, rng, c.s_end);
        const KernelParams k = kernel_params(c.s_end, c.spec);
        MeanAccumulator m;
        for (int i = 0; i < n; ++i) m.add(Y(i, 0));
        double var_acc = 0;
        for (int i = 0; i < n; ++i) var_acc += std::pow(Y(i, 0) - m.mean(), 2);
        const double var = var_acc / (n - 1);

        const double scale = std::max(std::abs(k.mu * y0), k.sigma_big);
        CHECK(std::abs(m.mean() - k.mu * y0) < c.tol * scale + 3.0 * m.std_err());
        const double want = k.sigma_big * k.sigma_big;
        CHECK(std::abs(var - want) < c.tol * want + 3.0 * want * std::sqrt(2.0 / n));
    }
}

TEST_CASE("spec json round trip and validation", "[process]") {
    auto spec = DiffusionSpec::vpx(0.1, 0.2, 15.0);
    nlohmann::json j = spec;
    const auto back = j.get<DiffusionSpec>();
    CHECK(back.kind == spec.kind);
    CHECK(back.kappa == spec.kappa);
    CHECK(back.beta_min == spec.beta_min);
    CHECK(back.beta_max == spec.beta_max);
    CHECK(back.s_hi == spec.s_hi);

    nlohmann::json bad = j;
    bad["kind"] = "nope";
    CHECK_THROWS_AS(bad.get<DiffusionSpec>(), ConfigError);

    auto sl = DiffusionSpec::sl(0.1);
    sl.s_hi = 1.0;  // SL requires s_hi < horizon
    CHECK_THROWS_AS(sl.validate(), ConfigError);

    auto vp = DiffusionSpec::vp();
    vp.beta_min = 0.0;
    CHECK_THROWS_AS(vp.validate(), ConfigError);
}
