#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "fimlab/expfam.hpp"

namespace fimlab {

enum class Activation { Identity, Tanh, Sigmoid, Softplus };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);

/// Feed-forward model: h0 = x, h_{l+1} = act(W_l hbar_l) for l < L-1,
/// h_L = W_{L-1} hbar_{L-1}, with hbar_l = (h_l', 1)'. The head family's
/// natural parameter is h_L.
struct NetworkSpec {
    std::vector<int> layer_sizes;  // n_0 .. n_L
    Activation activation;
    FamilyModel family;

    NetworkSpec(std::vector<int> sizes, Activation act, FamilyModel fam);

    int depth() const { return static_cast<int>(layer_sizes.size()) - 1; }  // L
    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
};

/// Weights-with-bias W_l of shape n_{l+1} x (n_l + 1); the last column is
/// the bias. Flat parameter order is layer-major, row-major within each W_l.
struct ParamSet {
    std::vector<Eigen::MatrixXd> weights;

    struct Coord {
        int layer, row, col;
    };

    static ParamSet zeros(const NetworkSpec& spec);
    static ParamSet glorot_uniform(const NetworkSpec& spec, RngStream stream);

    void validate_shapes(const NetworkSpec& spec) const;
    int dim() const;  // P
    Coord coord_of(int flat) const;
    int flat_of(int layer, int row, int col) const;
    int layer_offset(int layer) const;

    /// W_l with the bias column removed.
    Eigen::MatrixXd weight_nobias(int layer) const;
};

struct ForwardTrace {
    std::vector<Eigen::VectorXd> h;       // h_0 .. h_L
    std::vector<Eigen::VectorXd> hbar;    // hbar_0 .. hbar_{L-1}
    std::vector<Eigen::VectorXd> preact;  // z_l = W_l hbar_l, l = 0 .. L-1
};

struct BackpropTrace {
    std::vector<Eigen::MatrixXd> B;  // B_0 .. B_L, B_l is n_L x n_l
    std::vector<Eigen::VectorXd> D;  // D_0 .. D_{L-1}, diagonals
};

ForwardTrace forward(const NetworkSpec& spec, const ParamSet& params,
                     const Eigen::VectorXd& x);

/// B_L = I, B_l = B_{l+1} D_l W_l^-, D_{L-1} = I, D_l = diag(act'(z_l)).
BackpropTrace backprop_factors(const NetworkSpec& spec, const ParamSet& params,
                               const ForwardTrace& trace);

/// Jacobian of theta -> h_L, shape n_L x P (or n_L x |subset|).
/// Row a for layer l holds D_l B_{l+1}' e_a hbar_l' flattened.
Eigen::MatrixXd jacobian_hL(const NetworkSpec& spec, const ParamSet& params,
                            const Eigen::VectorXd& x);
Eigen::MatrixXd jacobian_hL(const NetworkSpec& spec, const ParamSet& params,
                            const Eigen::VectorXd& x,
                            const std::vector<int>& subset);

/// Second derivatives of theta -> h_L by exact second-order forward
/// propagation; one symmetric |subset| x |subset| matrix per output.
std::vector<Eigen::MatrixXd> hessian_hL(const NetworkSpec& spec,
                                        const ParamSet& params,
                                        const Eigen::VectorXd& x);
std::vector<Eigen::MatrixXd> hessian_hL(const NetworkSpec& spec,
                                        const ParamSet& params,
                                        const Eigen::VectorXd& x,
                                        const std::vector<int>& subset);

/// Score: (dh_L/dtheta)' (t - eta(h_L)).
Eigen::VectorXd loglik_grad(const NetworkSpec& spec, const ParamSet& params,
                            const Eigen::VectorXd& x, const Eigen::VectorXd& t);

/// Hessian of the log-likelihood:
/// (t_a - eta_a) d^2 h_L^a - (dh_L/dtheta)' I(h_L) (dh_L/dtheta).
Eigen::MatrixXd loglik_hessian(const NetworkSpec& spec, const ParamSet& params,
                               const Eigen::VectorXd& x, const Eigen::VectorXd& t);

/// Frobenius and spectral norm bounds for dh_L/dW_l. The left-hand sides are
/// exact (||B_{l+1} D_l||_F resp. s_max(B_{l+1} D_l), times ||hbar_l||_2);
/// the right-hand sides multiply the per-layer weight norms. At l = L-1 the
/// weight product is empty and the right-hand side keeps the exact base
/// ||B_L D_{L-1}|| of the recursion, so both gaps close to equality.
struct JacobianNormReport {
    double lhs_frobenius;
    double rhs_frobenius;
    double lhs_spectral;
    double rhs_spectral;
};

JacobianNormReport jacobian_norm_report(const NetworkSpec& spec,
                                        const ParamSet& params,
                                        const Eigen::VectorXd& x, int l);

/// Default cap on P for full Jacobian/Hessian materialization.
inline constexpr int kDefaultParamCap = 512;

std::vector<int> full_subset(const ParamSet& params);
void validate_subset(const ParamSet& params, const std::vector<int>& subset);

}  // namespace fimlab
