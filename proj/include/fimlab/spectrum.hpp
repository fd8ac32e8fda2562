#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "fimlab/fim.hpp"

namespace fimlab {

struct SpectrumReport {
    Eigen::VectorXd eigenvalues;  // ascending
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    bool is_psd = false;
    Eigen::VectorXd rho_per_output;  // spectral radii of d^2 h_L^a; empty if no Hessian given
};

/// Spectral radii rho(d^2 h_L^a), one per output, by dense symmetric eigensolve.
Eigen::VectorXd hessian_spectral_radii(const std::vector<Eigen::MatrixXd>& hess);

/// Lower bound on the probability that the negative-Hessian estimator with N
/// samples is p.s.d.: 1 - n_L ||rho||_2^2 lambda_max(I(h_L)) / (N lambda_min^2(I(theta))).
/// May be negative (vacuous). Returns nullopt when lambda_min(I(theta)) is
/// numerically zero and the bound is uninformative.
std::optional<double> psd_probability_bound(const NetworkSpec& spec,
                                            const ParamSet& params,
                                            const Eigen::VectorXd& x, int n,
                                            const std::vector<int>& subset);

/// Certified lower bound on lambda_min of the negative-Hessian estimator:
/// -sum_a rho(d^2 h_L^a) |eta_a - mean t_a|.
double min_eig_bound(const NetworkSpec& spec, const ParamSet& params,
                     const Eigen::VectorXd& x, const SampleBatch& batch);
double min_eig_bound(const NetworkSpec& spec, const ParamSet& params,
                     const Eigen::VectorXd& x, const SampleBatch& batch,
                     const std::vector<int>& subset);

/// Eigen-analysis of a symmetric matrix; rejects asymmetry beyond 1e-9.
/// is_psd uses tol = 1e-10 max(1, |lambda_max|).
SpectrumReport spectrum_report(const Eigen::MatrixXd& matrix,
                               const std::vector<Eigen::MatrixXd>* hess = nullptr);

}  // namespace fimlab
