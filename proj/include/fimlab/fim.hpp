#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "fimlab/network.hpp"

namespace fimlab {

enum class Provenance { Exact, Estimator1, Estimator2, Combined };

struct FimMatrix {
    Eigen::MatrixXd values;   // symmetric over the subset
    std::vector<int> subset;  // flat parameter indices, in order
    Provenance provenance;
    double alpha = 0.0;  // meaningful for Combined only
};

/// Pre-drawn sufficient statistics; one row per sample. The same batch can
/// feed both estimators, the combined estimator, and the gap computation.
struct SampleBatch {
    Eigen::MatrixXd t_samples;  // N x dim_t
    std::uint64_t seed = 0;

    int size() const { return static_cast<int>(t_samples.rows()); }
    Eigen::VectorXd mean_t() const;
    /// (1/N) sum_i (t_i - eta)(t_i - eta)'.
    Eigen::MatrixXd centered_second_moment(const Eigen::VectorXd& eta) const;
};

/// Draw N i.i.d. samples from the head at h; sample i uses stream.child(i).
SampleBatch draw_batch(const FamilyModel& family, const Eigen::VectorXd& h,
                       int n, RngStream stream, std::uint64_t seed_label = 0);

/// Exact FIM by pullback: J' I(h_L) J restricted to the subset.
FimMatrix exact_fim(const NetworkSpec& spec, const ParamSet& params,
                    const Eigen::VectorXd& x, const std::vector<int>& subset);

/// Score outer-product estimator; positive semidefinite by construction.
FimMatrix estimate_fim1(const NetworkSpec& spec, const ParamSet& params,
                        const Eigen::VectorXd& x, const SampleBatch& batch,
                        const std::vector<int>& subset);

/// Negative-Hessian estimator: exact pullback plus the sampled bias term
/// (eta_a - mean t_a) d^2 h_L^a.
FimMatrix estimate_fim2(const NetworkSpec& spec, const ParamSet& params,
                        const Eigen::VectorXd& x, const SampleBatch& batch,
                        const std::vector<int>& subset);

/// alpha * I1 + (1 - alpha) * I2 on the same batch, 0 <= alpha <= 1.
FimMatrix estimate_fim_combined(double alpha, const NetworkSpec& spec,
                                const ParamSet& params, const Eigen::VectorXd& x,
                                const SampleBatch& batch,
                                const std::vector<int>& subset);

/// FIM estimate w.r.t. the hidden representation h_l:
/// B_l' [(1/N) sum (t_i - eta)(t_i - eta)'] B_l.
Eigen::MatrixXd backprop_metric(const NetworkSpec& spec, const ParamSet& params,
                                const Eigen::VectorXd& x, const SampleBatch& batch,
                                int l);

/// Gap between the estimators and the squared gradient / negative Hessian at
/// an observed target: (score(t~) score(t~)' - I1, -loglik_hessian(t~) - I2).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> empirical_gap(
    const NetworkSpec& spec, const ParamSet& params, const Eigen::VectorXd& x,
    const Eigen::VectorXd& t_target, const SampleBatch& batch,
    const std::vector<int>& subset);

/// Invertible coordinate change theta <-> xi over a parameter subset.
/// Either affine xi = A theta + b, or an element-wise smooth map
/// xi_i = f(theta_i) with derivatives supplied.
class Reparam {
public:
    using ScalarFn = std::function<double(double)>;

    static Reparam identity(int n);
    static Reparam affine(Eigen::MatrixXd a, Eigen::VectorXd b);
    /// f, f', f'' of the forward map xi = f(theta); f' must not vanish.
    static Reparam elementwise(ScalarFn f, ScalarFn df, ScalarFn d2f);

    /// dtheta/dxi evaluated at theta (n x n).
    Eigen::MatrixXd dtheta_dxi(const Eigen::VectorXd& theta) const;
    /// d^2 theta_beta / dxi dxi' evaluated at theta; one n x n matrix per beta.
    std::vector<Eigen::MatrixXd> d2theta_dxi2(const Eigen::VectorXd& theta) const;
    /// Forward map, for direct-recomputation checks.
    Eigen::VectorXd to_xi(const Eigen::VectorXd& theta) const;

    bool is_affine() const { return affine_; }

private:
    Reparam() = default;
    bool affine_ = false;
    Eigen::MatrixXd a_;
    Eigen::MatrixXd a_inv_;
    Eigen::VectorXd b_;
    ScalarFn f_, df_, d2f_;
    int n_ = -1;  // -1: any size (elementwise)
};

struct ReparamBatchStats {
    Eigen::VectorXd mean_residual;  // eta - mean t over the batch
};

struct NetDerivatives {
    Eigen::MatrixXd jac;  // n_L x |subset|
};

/// Transform an estimator matrix to xi-coordinates. Estimator 1 (and the
/// exact FIM) transform covariantly; estimator 2 picks up the correction
/// (eta_a - mean t_a) d^beta h_L^a d^2 theta_beta / dxi dxi'.
FimMatrix reparam_estimators(const FimMatrix& fim_est, const Reparam& reparam,
                             const ReparamBatchStats& batch_stats,
                             const NetDerivatives& net_derivatives,
                             const Eigen::VectorXd& theta_subset);

/// Subset values of the flat parameter vector.
Eigen::VectorXd gather_params(const ParamSet& params, const std::vector<int>& subset);

}  // namespace fimlab
