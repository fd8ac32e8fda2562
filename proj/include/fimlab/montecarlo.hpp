#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fimlab/variance.hpp"

namespace fimlab {

/// A randomized validation run: R independent trials, each drawing N samples
/// from the head at h_L(x) and forming the selected estimator. Trial r,
/// sample i draws from stream (seed, r, i), so results are independent of
/// the parallel schedule.
struct MCConfig {
    NetworkSpec spec;
    ParamSet params;
    Eigen::VectorXd x;
    EstimatorId estimator = EstimatorId::One;
    double alpha = 0.5;  // Combined only
    int N = 100;
    int R = 1000;
    std::uint64_t seed = 0;
    std::vector<int> subset;  // empty = all parameters
    std::vector<double> eps_list;
    int threads = 1;
    bool want_empirical_cov = false;
    bool want_distance = false;   // track ||I1 - I2||_F per trial
    bool want_spectrum = true;    // per-trial eigensolve
    int cov_cap = kDefaultCovCap;
};

struct TrialSummary {
    Eigen::MatrixXd mean_estimate;
    bool has_empirical_cov = false;
    Tensor4 empirical_cov;          // sample covariance over trials (1/(R-1))
    Eigen::MatrixXd empirical_var;  // per-entry sample variance over trials
    std::vector<double> frobenius_errors;
    std::vector<double> lambda_mins;
    std::vector<std::uint8_t> psd_flags;
    double psd_frequency = 0.0;
    std::vector<double> distance_12;
    std::vector<double> min_eig_bounds;  // per trial, when the Hessian is in play
    /// Closed-form lhs/rhs per bound kind; exact quantities, not resampled.
    std::map<std::string, std::vector<double>> bound_ratios;
    /// (eps, empirical coverage of the Chebyshev radius).
    std::vector<std::pair<double, double>> coverage;
    std::uint64_t seed = 0;
    int N = 0;
    int R = 0;
};

TrialSummary run_trials(const MCConfig& config);

struct SlopeFit {
    bool defined = false;  // false when some mean error is exactly zero
    double slope = 0.0;
    double stderr_slope = 0.0;
    std::vector<double> mean_errors;  // one per N in the sweep
};

/// Mean ||I_hat - I||_F per N and the log-log least-squares slope.
SlopeFit convergence_sweep(const MCConfig& config, const std::vector<int>& n_list);

struct DistanceCurve {
    std::vector<double> mean_distance;  // per N, shared-seed batches
    SlopeFit trend;                     // log-log fit of distance vs N
};

DistanceCurve distance_curve(const MCConfig& config, const std::vector<int>& n_list);

struct RatioHistograms {
    /// Per-entry ratios of the trial-estimated variance over the element-wise
    /// bound, for both estimators. 0/positive maps to 0; 0/0 is excluded.
    std::map<std::string, std::vector<double>> empirical_entry_ratios;
    /// Closed-form lhs/rhs ratios per bound kind.
    std::map<std::string, double> closed_form_ratios;
    std::map<std::string, double> medians;  // of the empirical entry ratios
    struct Bin {
        double lo, hi;
        int count;
    };
    std::map<std::string, std::vector<Bin>> histograms;
};

RatioHistograms ratio_histograms(const MCConfig& config);

/// Full-batch gradient ascent on the log-likelihood of one (x, t_target)
/// until ||t_target - eta(h_L)|| < tol. Surrogate for a trained model.
bool fit_to_target(const NetworkSpec& spec, ParamSet& params,
                   const Eigen::VectorXd& x, const Eigen::VectorXd& t_target,
                   double tol = 1e-3, int max_iter = 200000, double lr = 0.5);

/// Per-trial CSV: trial, frobenius_error, lambda_min, psd_flag, distance_12.
void write_trials_csv(const TrialSummary& summary, const std::string& path);

}  // namespace fimlab
