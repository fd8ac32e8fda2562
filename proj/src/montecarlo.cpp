#include "fimlab/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <thread>

#include "fimlab/errors.hpp"
#include "fimlab/spectrum.hpp"

namespace fimlab {

namespace {

constexpr int kBlock = 64;  // fixed trial blocking, independent of thread count
constexpr std::size_t kTrialStorageBudget = 30'000'000;  // doubles

// Fixed-order pairwise summation over per-block partials.
Eigen::MatrixXd pairwise_sum(std::vector<Eigen::MatrixXd>& parts, std::size_t lo,
                             std::size_t hi) {
    if (hi - lo == 1) return parts[lo];
    const std::size_t mid = lo + (hi - lo) / 2;
    return pairwise_sum(parts, lo, mid) + pairwise_sum(parts, mid, hi);
}

struct Precomputed {
    std::vector<int> subset;
    MomentSet moments;
    Eigen::MatrixXd jac;
    std::vector<Eigen::MatrixXd> hess;  // empty if not needed
    Eigen::MatrixXd exact;
    Eigen::VectorXd rho;  // spectral radii, when hess present
    bool need_hess = false;
};

Precomputed precompute(const MCConfig& cfg) {
    Precomputed pre;
    pre.subset = cfg.subset.empty() ? full_subset(cfg.params) : cfg.subset;
    validate_subset(cfg.params, pre.subset);
    const ForwardTrace tr = forward(cfg.spec, cfg.params, cfg.x);
    pre.moments = moments(cfg.spec.family, tr.h.back());
    pre.jac = jacobian_hL(cfg.spec, cfg.params, cfg.x, pre.subset);
    pre.exact = pre.jac.transpose() * pre.moments.fim_head * pre.jac;
    pre.need_hess = cfg.estimator != EstimatorId::One || cfg.want_distance;
    if (pre.need_hess) {
        pre.hess = hessian_hL(cfg.spec, cfg.params, cfg.x, pre.subset);
        pre.rho = hessian_spectral_radii(pre.hess);
    }
    return pre;
}

void validate_config(const MCConfig& cfg, const Precomputed& pre) {
    if (cfg.N < 1) throw ValidationError("invalid_samples", "N must be >= 1");
    if (cfg.R < 1) throw ValidationError("invalid_trials", "R must be >= 1");
    if (cfg.want_empirical_cov && cfg.R < 2)
        throw ValidationError("invalid_trials", "covariance outputs need R >= 2");
    for (double e : cfg.eps_list)
        if (!(e > 0.0 && e < 1.0))
            throw ValidationError("eps_out_of_range", "eps must be in (0, 1)");
    if (cfg.want_empirical_cov) {
        const std::size_t ps = pre.subset.size();
        if (static_cast<int>(ps) > cfg.cov_cap)
            throw ValidationError("cap_exceeded",
                                  "subset too large for empirical covariance");
        if (static_cast<std::size_t>(cfg.R) * ps * ps > kTrialStorageBudget)
            throw ValidationError("cap_exceeded",
                                  "R * subset^2 exceeds the trial storage budget; "
                                  "reduce R or the subset");
    }
}

int thread_count(const MCConfig& cfg) {
    int t = cfg.threads;
    if (t < 1) t = 1;
    return std::min<int>(t, 64);
}

}  // namespace

TrialSummary run_trials(const MCConfig& config) {
    const Precomputed pre = precompute(config);
    validate_config(config, pre);
    const int ps = static_cast<int>(pre.subset.size());
    const int r_total = config.R;
    const int n_blocks = (r_total + kBlock - 1) / kBlock;

    TrialSummary out;
    out.seed = config.seed;
    out.N = config.N;
    out.R = r_total;
    out.frobenius_errors.assign(r_total, 0.0);
    if (config.want_spectrum) {
        out.lambda_mins.assign(r_total, 0.0);
        out.psd_flags.assign(r_total, 0);
    }
    if (config.want_distance) out.distance_12.assign(r_total, 0.0);
    if (pre.need_hess) out.min_eig_bounds.assign(r_total, 0.0);

    std::vector<Eigen::MatrixXd> block_sums(
        n_blocks, Eigen::MatrixXd::Zero(ps, ps));
    std::vector<Eigen::MatrixXd> block_sq_sums(
        n_blocks, Eigen::MatrixXd::Zero(ps, ps));
    std::vector<Eigen::MatrixXd> stored;
    if (config.want_empirical_cov)
        stored.assign(r_total, Eigen::MatrixXd());

    const RngStream root(config.seed);
    std::atomic<int> next_block{0};

    // h_L is fixed across trials; fetch it once.
    const Eigen::VectorXd h_last =
        forward(config.spec, config.params, config.x).h.back();

    const auto run_block = [&](int blk) {
        const int r_lo = blk * kBlock;
        const int r_hi = std::min(r_total, r_lo + kBlock);
        Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(ps, ps);
        Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(ps, ps);
        for (int r = r_lo; r < r_hi; ++r) {
            const SampleBatch batch =
                draw_batch(config.spec.family, h_last, config.N,
                           root.child(static_cast<std::uint64_t>(r)), config.seed);
            Eigen::MatrixXd e1, e2;
            if (config.estimator != EstimatorId::Two || config.want_distance)
                e1 = pre.jac.transpose() *
                     batch.centered_second_moment(pre.moments.eta) * pre.jac;
            if (pre.need_hess) {
                const Eigen::VectorXd bias = pre.moments.eta - batch.mean_t();
                e2 = pre.exact;
                for (int a = 0; a < config.spec.output_dim(); ++a)
                    e2 += bias[a] * pre.hess[a];
                double beig = 0.0;
                for (int a = 0; a < bias.size(); ++a)
                    beig += pre.rho[a] * std::abs(bias[a]);
                out.min_eig_bounds[r] = -beig;
            }
            Eigen::MatrixXd est;
            switch (config.estimator) {
                case EstimatorId::One: est = e1; break;
                case EstimatorId::Two: est = e2; break;
                case EstimatorId::Combined:
                    est = config.alpha * e1 + (1.0 - config.alpha) * e2;
                    break;
            }
            out.frobenius_errors[r] = (est - pre.exact).norm();
            if (config.want_distance) out.distance_12[r] = (e1 - e2).norm();
            if (config.want_spectrum) {
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
                    est, Eigen::EigenvaluesOnly);
                const double lmin = es.eigenvalues()[0];
                const double lmax = es.eigenvalues()[es.eigenvalues().size() - 1];
                out.lambda_mins[r] = lmin;
                out.psd_flags[r] =
                    lmin >= -1e-10 * std::max(1.0, std::abs(lmax)) ? 1 : 0;
            }
            sum += est;
            sq += est.cwiseProduct(est);
            if (config.want_empirical_cov) stored[r] = std::move(est);
        }
        block_sums[blk] = std::move(sum);
        block_sq_sums[blk] = std::move(sq);
    };

    const int n_threads = std::min(thread_count(config), n_blocks);
    if (n_threads <= 1) {
        for (int blk = 0; blk < n_blocks; ++blk) run_block(blk);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_threads);
        for (int t = 0; t < n_threads; ++t)
            pool.emplace_back([&]() {
                for (;;) {
                    const int blk = next_block.fetch_add(1);
                    if (blk >= n_blocks) return;
                    run_block(blk);
                }
            });
        for (auto& th : pool) th.join();
    }

    const Eigen::MatrixXd total = pairwise_sum(block_sums, 0, block_sums.size());
    const Eigen::MatrixXd total_sq =
        pairwise_sum(block_sq_sums, 0, block_sq_sums.size());
    out.mean_estimate = total / static_cast<double>(r_total);
    if (r_total > 1) {
        out.empirical_var =
            (total_sq - static_cast<double>(r_total) *
                            out.mean_estimate.cwiseProduct(out.mean_estimate)) /
            static_cast<double>(r_total - 1);
        out.empirical_var = out.empirical_var.cwiseMax(0.0);
    } else {
        out.empirical_var = Eigen::MatrixXd::Zero(ps, ps);
    }

    if (config.want_empirical_cov) {
        out.has_empirical_cov = true;
        out.empirical_cov = Tensor4(ps);
        for (int r = 0; r < r_total; ++r) {
            const Eigen::MatrixXd w = stored[r] - out.mean_estimate;
            for (int i = 0; i < ps; ++i)
                for (int j = 0; j < ps; ++j) {
                    const double wij = w(i, j);
                    if (wij == 0.0) continue;
                    for (int k = 0; k < ps; ++k)
                        for (int l = 0; l < ps; ++l)
                            out.empirical_cov(i, j, k, l) += wij * w(k, l);
                }
        }
        out.empirical_cov *= 1.0 / static_cast<double>(r_total - 1);
    }

    if (config.want_spectrum && r_total > 0) {
        int cnt = 0;
        for (auto f : out.psd_flags) cnt += f;
        out.psd_frequency = static_cast<double>(cnt) / static_cast<double>(r_total);
    }

    // Closed-form bound ratios (exact lhs / rhs, not resampled).
    {
        const auto add = [&](const BoundReport& b) {
            out.bound_ratios[bound_kind_name(b.kind)].push_back(
                b.rhs > 0.0 ? b.lhs / b.rhs : 0.0);
        };
        add(bound_frobenius(EstimatorId::One, pre.jac, pre.hess, pre.moments,
                            config.N));
        add(bound_linf(EstimatorId::One, pre.jac, pre.hess, pre.moments, config.N));
        if (pre.need_hess) {
            add(bound_frobenius(EstimatorId::Two, pre.jac, pre.hess, pre.moments,
                                config.N));
            add(bound_linf(EstimatorId::Two, pre.jac, pre.hess, pre.moments,
                           config.N));
        }
        const auto [bk, bi] = bound_moments(pre.moments);
        add(bk);
        add(bi);
        for (int i = 0; i < ps; ++i)
            for (int j = i; j < ps; ++j) {
                add(bound_elementwise(EstimatorId::One, i, j, i, j, pre.jac,
                                      pre.hess, pre.moments, config.N));
                if (pre.need_hess)
                    add(bound_elementwise(EstimatorId::Two, i, j, i, j, pre.jac,
                                          pre.hess, pre.moments, config.N));
            }
    }

    // Chebyshev coverage against the closed-form radius.
    if (!config.eps_list.empty()) {
        VarMatrix var;
        switch (config.estimator) {
            case EstimatorId::One:
                var = var_estimator1_direct(pre.jac, pre.moments, config.N);
                break;
            case EstimatorId::Two:
                var = var_estimator2_direct(pre.hess, pre.moments, config.N);
                break;
            case EstimatorId::Combined:
                var = var_matrix(cov_combined(config.alpha, pre.jac, pre.hess,
                                              pre.moments, config.N, config.cov_cap));
                break;
        }
        for (double eps : config.eps_list) {
            const double radius = chebyshev_radius(var, eps);
            int covered = 0;
            for (double e : out.frobenius_errors)
                if (e <= radius) ++covered;
            out.coverage.emplace_back(
                eps, static_cast<double>(covered) / static_cast<double>(r_total));
        }
    }
    return out;
}

namespace {

SlopeFit fit_loglog(const std::vector<int>& n_list, const std::vector<double>& y) {
    SlopeFit fit;
    fit.mean_errors = y;
    for (double v : y)
        if (!(v > 0.0)) return fit;  // undefined sentinel
    const int m = static_cast<int>(n_list.size());
    if (m < 2) return fit;
    double sx = 0, sy = 0;
    std::vector<double> lx(m), ly(m);
    for (int i = 0; i < m; ++i) {
        lx[i] = std::log(static_cast<double>(n_list[i]));
        ly[i] = std::log(y[i]);
        sx += lx[i];
        sy += ly[i];
    }
    const double mx = sx / m, my = sy / m;
    double sxx = 0, sxy = 0;
    for (int i = 0; i < m; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    fit.defined = true;
    fit.slope = sxy / sxx;
    if (m > 2) {
        double ss = 0;
        for (int i = 0; i < m; ++i) {
            const double resid = ly[i] - my - fit.slope * (lx[i] - mx);
            ss += resid * resid;
        }
        fit.stderr_slope = std::sqrt(ss / (m - 2) / sxx);
    }
    return fit;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

SlopeFit convergence_sweep(const MCConfig& config, const std::vector<int>& n_list) {
    std::vector<double> means;
    for (int n : n_list) {
        MCConfig cfg = config;
        cfg.N = n;
        cfg.want_spectrum = false;
        cfg.want_empirical_cov = false;
        cfg.eps_list.clear();
        means.push_back(mean_of(run_trials(cfg).frobenius_errors));
    }
    return fit_loglog(n_list, means);
}

DistanceCurve distance_curve(const MCConfig& config, const std::vector<int>& n_list) {
    DistanceCurve curve;
    for (int n : n_list) {
        MCConfig cfg = config;
        cfg.N = n;
        cfg.want_distance = true;
        cfg.want_spectrum = false;
        cfg.want_empirical_cov = false;
        cfg.eps_list.clear();
        curve.mean_distance.push_back(mean_of(run_trials(cfg).distance_12));
    }
    curve.trend = fit_loglog(n_list, curve.mean_distance);
    return curve;
}

RatioHistograms ratio_histograms(const MCConfig& config) {
    MCConfig cfg = config;
    cfg.want_distance = true;  // force both estimators
    cfg.want_spectrum = false;
    const Precomputed pre = precompute(cfg);

    RatioHistograms out;
    for (EstimatorId which : {EstimatorId::One, EstimatorId::Two}) {
        MCConfig run_cfg = cfg;
        run_cfg.estimator = which;
        const TrialSummary summary = run_trials(run_cfg);
        const int ps = static_cast<int>(pre.subset.size());
        std::vector<double> ratios;
        for (int i = 0; i < ps; ++i)
            for (int j = i; j < ps; ++j) {
                const BoundReport b = bound_elementwise(which, i, j, i, j, pre.jac,
                                                        pre.hess, pre.moments, cfg.N);
                const double var = summary.empirical_var(i, j);
                if (b.rhs == 0.0 && var == 0.0) continue;  // 0/0 excluded
                ratios.push_back(var == 0.0 ? 0.0 : var / b.rhs);
            }
        const std::string key = estimator_name(which);
        out.empirical_entry_ratios[key] = ratios;

        std::vector<double> sorted = ratios;
        std::sort(sorted.begin(), sorted.end());
        out.medians[key] =
            sorted.empty() ? 0.0 : sorted[sorted.size() / 2];

        constexpr int kBins = 20;
        std::vector<RatioHistograms::Bin> bins;
        double hist_max = 1.0;
        for (double r : ratios) hist_max = std::max(hist_max, r);
        for (int b = 0; b < kBins; ++b)
            bins.push_back({hist_max * b / kBins, hist_max * (b + 1) / kBins, 0});
        for (double r : ratios) {
            int b = std::min(kBins - 1, static_cast<int>(r / hist_max * kBins));
            ++bins[b].count;
        }
        out.histograms[key] = bins;

        const BoundReport bf =
            bound_frobenius(which, pre.jac, pre.hess, pre.moments, cfg.N);
        const BoundReport bl = bound_linf(which, pre.jac, pre.hess, pre.moments, cfg.N);
        out.closed_form_ratios[bound_kind_name(bf.kind)] =
            bf.rhs > 0.0 ? bf.lhs / bf.rhs : 0.0;
        out.closed_form_ratios[bound_kind_name(bl.kind)] =
            bl.rhs > 0.0 ? bl.lhs / bl.rhs : 0.0;
    }
    return out;
}

bool fit_to_target(const NetworkSpec& spec, ParamSet& params,
                   const Eigen::VectorXd& x, const Eigen::VectorXd& t_target,
                   double tol, int max_iter, double lr) {
    const std::vector<int> subset = full_subset(params);
    for (int it = 0; it < max_iter; ++it) {
        const ForwardTrace tr = forward(spec, params, x);
        const Eigen::VectorXd eta = moments(spec.family, tr.h.back()).eta;
        if ((t_target - eta).norm() < tol) return true;
        const Eigen::VectorXd g = loglik_grad(spec, params, x, t_target);
        for (std::size_t s = 0; s < subset.size(); ++s) {
            const auto [l, r, c] = params.coord_of(subset[s]);
            params.weights[l](r, c) += lr * g[s];
        }
    }
    const ForwardTrace tr = forward(spec, params, x);
    const Eigen::VectorXd eta = moments(spec.family, tr.h.back()).eta;
    return (t_target - eta).norm() < tol;
}

void write_trials_csv(const TrialSummary& summary, const std::string& path) {
    const std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw ValidationError("io_error", "cannot open " + tmp);
    std::fprintf(f, "trial,frobenius_error,lambda_min,psd_flag,distance_12\r\n");
    for (std::size_t r = 0; r < summary.frobenius_errors.size(); ++r) {
        std::fprintf(f, "%zu,%.17g,", r, summary.frobenius_errors[r]);
        if (r < summary.lambda_mins.size())
            std::fprintf(f, "%.17g,%d,", summary.lambda_mins[r],
                         static_cast<int>(summary.psd_flags[r]));
        else
            std::fprintf(f, ",,");
        if (r < summary.distance_12.size())
            std::fprintf(f, "%.17g\r\n", summary.distance_12[r]);
        else
            std::fprintf(f, "\r\n");
    }
    std::fclose(f);
    std::filesystem::rename(tmp, path);
}

}  // namespace fimlab
