#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fimlab/errors.hpp"
#include "fimlab/montecarlo.hpp"
#include "support/oracles.hpp"

using namespace fimlab;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd x(static_cast<int>(v.size()));
    int i = 0;
    for (double e : v) x[i++] = e;
    return x;
}

MCConfig base_config(NetworkSpec spec, ParamSet params, Eigen::VectorXd x) {
    MCConfig cfg{std::move(spec), std::move(params), std::move(x)};
    cfg.seed = 99;
    return cfg;
}

MCConfig half_prob_config() {
    NetworkSpec spec({1, 1}, Activation::Identity, FamilyModel::bernoulli(1));
    ParamSet params = ParamSet::zeros(spec);
    return base_config(std::move(spec), std::move(params), vec({1.0}));
}

MCConfig bernoulli_p03_config(std::vector<int> sizes, std::uint64_t seed) {
    NetworkSpec spec(sizes, Activation::Tanh,
                     FamilyModel::bernoulli(sizes.back()));
    ParamSet params = oracles::random_params(spec, seed);
    params.weights.back().setZero();
    params.weights.back().col(params.weights.back().cols() - 1)
        .setConstant(std::log(0.3 / 0.7));
    return base_config(std::move(spec), std::move(params),
                       oracles::random_input(sizes.front(), seed ^ 0x5));
}

bool summaries_identical(const TrialSummary& a, const TrialSummary& b) {
    if ((a.mean_estimate - b.mean_estimate).cwiseAbs().maxCoeff() != 0.0) return false;
    if (a.frobenius_errors != b.frobenius_errors) return false;
    if (a.lambda_mins != b.lambda_mins) return false;
    if (a.psd_flags != b.psd_flags) return false;
    if (a.distance_12 != b.distance_12) return false;
    if (a.min_eig_bounds != b.min_eig_bounds) return false;
    if (a.coverage != b.coverage) return false;
    if (a.has_empirical_cov != b.has_empirical_cov) return false;
    if (a.has_empirical_cov &&
        oracles::max_abs_diff(a.empirical_cov, b.empirical_cov) != 0.0)
        return false;
    return true;
}

}  // namespace

TEST_CASE("run_trials: zero-variance special case") {
    MCConfig cfg = half_prob_config();
    cfg.estimator = EstimatorId::One;
    cfg.N = 7;
    cfg.R = 50;
    cfg.want_empirical_cov = true;
    const TrialSummary s = run_trials(cfg);
    for (double e : s.frobenius_errors) CHECK(e == 0.0);
    CHECK(s.empirical_cov.max_abs() == 0.0);
    const FimMatrix exact =
        exact_fim(cfg.spec, cfg.params, cfg.x, full_subset(cfg.params));
    CHECK((s.mean_estimate - exact.values).cwiseAbs().maxCoeff() == 0.0);
    CHECK(s.psd_frequency == 1.0);
}

TEST_CASE("run_trials: depth-1 estimator 2 is exact every trial") {
    NetworkSpec spec({2, 1}, Activation::Identity, FamilyModel::normal(1));
    MCConfig cfg = base_config(spec, oracles::random_params(spec, 3),
                               oracles::random_input(2, 4));
    cfg.estimator = EstimatorId::Two;
    cfg.N = 5;
    cfg.R = 40;
    const TrialSummary s = run_trials(cfg);
    for (double e : s.frobenius_errors) CHECK(e == 0.0);
}

TEST_CASE("run_trials: empirical covariance matches the closed form") {
    MCConfig cfg = bernoulli_p03_config({2, 3, 1}, 5);
    cfg.estimator = EstimatorId::One;
    cfg.N = 10;
    cfg.R = 10000;
    cfg.want_empirical_cov = true;
    cfg.want_spectrum = false;
    cfg.threads = 4;
    const TrialSummary s = run_trials(cfg);

    const Eigen::VectorXd h = forward(cfg.spec, cfg.params, cfg.x).h.back();
    const MomentSet mo = moments(cfg.spec.family, h);
    const Eigen::MatrixXd jac =
        jacobian_hL(cfg.spec, cfg.params, cfg.x, full_subset(cfg.params));
    const CovTensor closed = cov_estimator1(jac, mo, cfg.N);
    const int ps = closed.values.dim();
    for (int i = 0; i < ps; ++i)
        for (int j = 0; j < ps; ++j)
            for (int k = 0; k < ps; ++k)
                for (int l = 0; l < ps; ++l) {
                    // Normal-approximation standard error of a sample
                    // covariance: sqrt((Var_ij Var_kl + Cov_ijkl^2) / (R-1)).
                    const double se =
                        std::sqrt((closed.values(i, j, i, j) *
                                       closed.values(k, l, k, l) +
                                   closed.values(i, j, k, l) *
                                       closed.values(i, j, k, l)) /
                                  (cfg.R - 1));
                    CHECK(std::abs(s.empirical_cov(i, j, k, l) -
                                   closed.values(i, j, k, l)) <=
                          5.0 * se + 1e-12);
                }
}

TEST_CASE("run_trials: mean converges to the exact FIM at MC scale") {
    MCConfig cfg = bernoulli_p03_config({2, 3, 1}, 6);
    cfg.estimator = EstimatorId::Two;
    cfg.N = 20;
    cfg.R = 4000;
    cfg.want_spectrum = false;
    const TrialSummary s = run_trials(cfg);
    const Eigen::VectorXd h = forward(cfg.spec, cfg.params, cfg.x).h.back();
    const MomentSet mo = moments(cfg.spec.family, h);
    const auto hess =
        hessian_hL(cfg.spec, cfg.params, cfg.x, full_subset(cfg.params));
    const VarMatrix var = var_estimator2_direct(hess, mo, cfg.N);
    const FimMatrix exact =
        exact_fim(cfg.spec, cfg.params, cfg.x, full_subset(cfg.params));
    const double budget = 5.0 * std::sqrt(var.values.sum() / cfg.R);
    CHECK((s.mean_estimate - exact.values).norm() <= budget);
}

TEST_CASE("run_trials: deterministic across thread counts") {
    MCConfig cfg = bernoulli_p03_config({2, 2, 1}, 7);
    cfg.estimator = EstimatorId::Combined;
    cfg.alpha = 0.4;
    cfg.N = 6;
    cfg.R = 333;
    cfg.want_empirical_cov = true;
    cfg.want_distance = true;
    cfg.eps_list = {0.25};

    cfg.threads = 1;
    const TrialSummary s1 = run_trials(cfg);
    cfg.threads = 2;
    const TrialSummary s2 = run_trials(cfg);
    cfg.threads = 8;
    const TrialSummary s8 = run_trials(cfg);
    CHECK(summaries_identical(s1, s2));
    CHECK(summaries_identical(s1, s8));
}

TEST_CASE("run_trials: config validation precedes sampling") {
    MCConfig cfg = half_prob_config();
    cfg.subset = {0, 7};
    CHECK_THROWS_AS(run_trials(cfg), ValidationError);
    cfg.subset.clear();
    cfg.eps_list = {1.5};
    CHECK_THROWS_AS(run_trials(cfg), ValidationError);
    cfg.eps_list.clear();
    cfg.R = 1;
    cfg.want_empirical_cov = true;
    CHECK_THROWS_AS(run_trials(cfg), ValidationError);
}

TEST_CASE("chebyshev coverage holds at the configured epsilons") {
    MCConfig cfg = bernoulli_p03_config({2, 3, 1}, 8);
    cfg.estimator = EstimatorId::One;
    cfg.N = 25;
    cfg.R = 10000;
    cfg.eps_list = {0.1, 0.5};
    cfg.want_spectrum = false;
    cfg.threads = 4;
    const TrialSummary s = run_trials(cfg);
    REQUIRE(s.coverage.size() == 2);
    for (const auto& [eps, cov] : s.coverage) {
        // One-sided 99% binomial band around the guaranteed level.
        const double slack = 2.326 * std::sqrt(eps * (1 - eps) / cfg.R);
        CHECK(cov >= 1.0 - eps - slack);
    }
}

TEST_CASE("convergence sweep") {
    SUBCASE("zero variance reports the undefined sentinel") {
        MCConfig cfg = half_prob_config();
        cfg.estimator = EstimatorId::One;
        cfg.R = 50;
        const SlopeFit fit = convergence_sweep(cfg, {10, 100});
        CHECK_FALSE(fit.defined);
        for (double e : fit.mean_errors) CHECK(e == 0.0);
    }
    SUBCASE("estimator 2 on depth-1 nets is exact: sentinel") {
        NetworkSpec spec({2, 1}, Activation::Identity, FamilyModel::normal(1));
        MCConfig cfg = base_config(spec, oracles::random_params(spec, 9),
                                   oracles::random_input(2, 10));
        cfg.estimator = EstimatorId::Two;
        cfg.R = 50;
        CHECK_FALSE(convergence_sweep(cfg, {10, 100}).defined);
    }
    SUBCASE("normal head, estimator 1: slope near -1/2") {
        NetworkSpec spec({2, 1}, Activation::Identity, FamilyModel::normal(1));
        MCConfig cfg = base_config(spec, oracles::random_params(spec, 11),
                                   oracles::random_input(2, 12));
        cfg.estimator = EstimatorId::One;
        cfg.R = 600;
        cfg.threads = 4;
        const SlopeFit fit = convergence_sweep(cfg, {10, 100, 1000, 10000});
        REQUIRE(fit.defined);
        CHECK(fit.slope > -0.6);
        CHECK(fit.slope < -0.4);
    }
}

TEST_CASE("distance curve") {
    SUBCASE("both estimators exact: all distances zero") {
        // p = 0.5 head and depth-1 net: I1 and I2 are each exact.
        MCConfig cfg = half_prob_config();
        cfg.R = 30;
        const DistanceCurve curve = distance_curve(cfg, {5, 50});
        for (double d : curve.mean_distance) CHECK(d == 0.0);
        CHECK_FALSE(curve.trend.defined);
    }
    SUBCASE("random depth-2 net: mean distance decreases with N") {
        MCConfig cfg = bernoulli_p03_config({2, 3, 1}, 13);
        cfg.R = 400;
        cfg.threads = 4;
        const DistanceCurve curve = distance_curve(cfg, {10, 100, 1000, 10000});
        CHECK(curve.mean_distance.front() > curve.mean_distance.back());
        REQUIRE(curve.trend.defined);
        CHECK(curve.trend.slope < -0.3);
    }
    SUBCASE("single trial is bit-reproducible") {
        MCConfig cfg = bernoulli_p03_config({2, 3, 1}, 14);
        cfg.R = 1;
        const DistanceCurve a = distance_curve(cfg, {20});
        const DistanceCurve b = distance_curve(cfg, {20});
        CHECK(a.mean_distance == b.mean_distance);
    }
}

TEST_CASE("ratio histograms") {
    SUBCASE("ratios stay below 1 within statistical tolerance") {
        MCConfig cfg = bernoulli_p03_config({2, 3, 2}, 15);
        cfg.N = 50;
        cfg.R = 4000;
        cfg.threads = 4;
        const RatioHistograms rh = ratio_histograms(cfg);
        for (const auto& [key, ratios] : rh.empirical_entry_ratios) {
            CHECK(!ratios.empty());
            for (double r : ratios) CHECK(r <= 1.0 + 0.05);
        }
        for (const auto& [key, r] : rh.closed_form_ratios) CHECK(r <= 1.0 + 1e-9);
    }
    SUBCASE("zero-variance entries follow the 0-ratio convention") {
        MCConfig cfg = half_prob_config();
        cfg.N = 4;
        cfg.R = 50;
        const RatioHistograms rh = ratio_histograms(cfg);
        // Estimator 1 at p = 0.5: all variances zero, bounds zero -> excluded.
        CHECK(rh.empirical_entry_ratios.at("estimator1").empty());
        // Estimator 2 on a depth-1 net: excluded as 0/0 as well.
        CHECK(rh.empirical_entry_ratios.at("estimator2").empty());
    }
    SUBCASE("trained model yields stochastically smaller ratios") {
        NetworkSpec spec({2, 4, 2}, Activation::Tanh, FamilyModel::bernoulli(2));
        const Eigen::VectorXd x = vec({0.6, -0.4});
        ParamSet random_params = oracles::random_params(spec, 16);
        ParamSet trained = random_params;
        REQUIRE(fit_to_target(spec, trained, x, vec({1.0, 0.0}), 1e-3));

        MCConfig cfg_rand = base_config(spec, random_params, x);
        cfg_rand.N = 30;
        cfg_rand.R = 3000;
        cfg_rand.threads = 4;
        MCConfig cfg_train = cfg_rand;
        cfg_train.params = trained;

        const RatioHistograms rr = ratio_histograms(cfg_rand);
        const RatioHistograms rt = ratio_histograms(cfg_train);
        CHECK(rt.medians.at("estimator1") <= rr.medians.at("estimator1"));
        CHECK(rt.medians.at("estimator2") <= rr.medians.at("estimator2"));
    }
}

TEST_CASE("trials CSV carries one row per trial") {
    MCConfig cfg = bernoulli_p03_config({2, 2, 1}, 17);
    cfg.R = 12;
    cfg.want_distance = true;
    const TrialSummary s = run_trials(cfg);
    const std::string path = "/tmp/fimlab_trials_test.csv";
    write_trials_csv(s, path);
    std::FILE* f = std::fopen(path.c_str(), "rb");
    REQUIRE(f != nullptr);
    int lines = 0;
    for (int c; (c = std::fgetc(f)) != EOF;)
        if (c == '\n') ++lines;
    std::fclose(f);
    CHECK(lines == 13);  // header + 12 trials
    std::remove(path.c_str());
}
