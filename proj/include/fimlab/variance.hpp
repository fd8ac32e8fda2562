#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "fimlab/fim.hpp"
#include "fimlab/tensor.hpp"

namespace fimlab {

enum class EstimatorId { One, Two, Combined };

std::string estimator_name(EstimatorId id);

/// 4D covariance tensor of an estimator over a parameter subset, scaled by
/// the sample count: entries are exactly the single-sample tensor divided
/// by N, so Cov at N is bit-comparable to Cov at 1 after one division.
struct CovTensor {
    Tensor4 values;
    std::vector<int> subset;
    int N = 1;
    EstimatorId estimator = EstimatorId::One;
    double alpha = 0.0;                  // Combined only
    bool offdiag_symmetrized = false;    // Combined cross term convention flag
};

/// Element-wise variances: values(i,j) = Cov(i,j,i,j).
struct VarMatrix {
    Eigen::MatrixXd values;
    int N = 1;
    EstimatorId estimator = EstimatorId::One;
};

enum class BoundKind {
    Frobenius1,
    Frobenius2,
    Elementwise1,
    Elementwise2,
    Linf1,
    Linf2,
    MomentK,
    MomentI
};

std::string bound_kind_name(BoundKind k);

struct BoundReport {
    double lhs = 0.0;
    double rhs = 0.0;
    BoundKind kind = BoundKind::Frobenius1;
    double slack() const { return rhs - lhs; }
};

/// Default cap on the subset size for materializing P_s^4 tensors.
inline constexpr int kDefaultCovCap = 48;

/// Cov(I1)^{ijkl} = (1/N) J_i^a J_j^b J_k^c J_l^d (K_abcd - I_ab I_cd).
CovTensor cov_estimator1(const Eigen::MatrixXd& jac, const MomentSet& moments,
                         int n, int cov_cap = kDefaultCovCap);

/// Cov(I2)^{ijkl} = (1/N) H^a_ij H^b_kl I_ab(h_L).
CovTensor cov_estimator2(const std::vector<Eigen::MatrixXd>& hess,
                         const MomentSet& moments, int n,
                         int cov_cap = kDefaultCovCap);

VarMatrix var_matrix(const CovTensor& cov);

/// Element-wise variances computed by the ijij contraction directly,
/// without materializing the 4D tensor. Available above the cov cap.
VarMatrix var_estimator1_direct(const Eigen::MatrixXd& jac,
                                const MomentSet& moments, int n);
VarMatrix var_estimator2_direct(const std::vector<Eigen::MatrixXd>& hess,
                                const MomentSet& moments, int n);

/// Covariance of alpha I1 + (1-alpha) I2 on a shared batch. The third-cumulant
/// cross term is symmetrized over the (ij) <-> (kl) exchange so the result
/// satisfies the covariance-tensor symmetries off the diagonal.
CovTensor cov_combined(double alpha, const Eigen::MatrixXd& jac,
                       const std::vector<Eigen::MatrixXd>& hess,
                       const MomentSet& moments, int n,
                       int cov_cap = kDefaultCovCap);

/// Covariance in xi-coordinates: a 4-fold contraction with dtheta/dxi, plus
/// for estimator 2 the (1/N) C^{ab} I_ab correction driven by the map's
/// second derivatives.
CovTensor cov_reparam(const CovTensor& cov, const Reparam& reparam,
                      const Eigen::VectorXd& theta_subset,
                      const Eigen::MatrixXd& jac,
                      const std::vector<Eigen::MatrixXd>& hess,
                      const MomentSet& moments, int n);

/// K(t) - I(h_L) (x) I(h_L), the covariance of the single-sample head
/// estimator (t - eta)(t - eta)'.
Tensor4 head_cov_tensor(const MomentSet& moments);

BoundReport bound_frobenius(EstimatorId which, const Eigen::MatrixXd& jac,
                            const std::vector<Eigen::MatrixXd>& hess,
                            const MomentSet& moments, int n);
BoundReport bound_elementwise(EstimatorId which, int i, int j, int k, int l,
                              const Eigen::MatrixXd& jac,
                              const std::vector<Eigen::MatrixXd>& hess,
                              const MomentSet& moments, int n);
BoundReport bound_linf(EstimatorId which, const Eigen::MatrixXd& jac,
                       const std::vector<Eigen::MatrixXd>& hess,
                       const MomentSet& moments, int n);

/// Diagonal-moment bounds: sqrt(2) (sum_a (sqrt(K_aaaa) + I_aa))^2 dominating
/// ||K - I(x)I||_F, and trace I(h_L) dominating ||I(h_L)||_F.
std::pair<BoundReport, BoundReport> bound_moments(const MomentSet& moments);

/// Radius r such that ||I_hat - I||_F <= r with probability >= 1 - eps:
/// (1/sqrt(eps N)) sqrt(sum_ij single-sample variances).
double chebyshev_radius(const VarMatrix& var, double eps);

/// Flat CSV export: header then one "i,j,k,l,value" row per entry.
void write_cov_csv(const CovTensor& cov, const std::string& path);
/// Binary dump: magic "FIMCOV01", u64 subset size, u64 N, then the subset
/// indices as u64 and the values as little-endian f64 in row-major order.
void write_cov_binary(const CovTensor& cov, const std::string& path);
CovTensor read_cov_binary(const std::string& path);

}  // namespace fimlab
