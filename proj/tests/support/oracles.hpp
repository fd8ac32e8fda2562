#pragma once

// Test-only oracles, independent of the library's production paths:
// a plain long-double forward pass for finite-difference checks, and
// enumeration-based expectations over finite-support heads.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "fimlab/expfam.hpp"
#include "fimlab/fim.hpp"
#include "fimlab/network.hpp"
#include "fimlab/numdiff.hpp"

namespace oracles {

using fimlab::Activation;
using fimlab::FamilyModel;
using fimlab::NetworkSpec;
using fimlab::Outcome;
using fimlab::ParamSet;

using LdVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

inline long double act_ld(Activation a, long double z) {
    switch (a) {
        case Activation::Identity: return z;
        case Activation::Tanh: return std::tanh(z);
        case Activation::Sigmoid: return 0.5L * (1.0L + std::tanh(0.5L * z));
        case Activation::Softplus:
            return std::max(z, 0.0L) + std::log1p(std::exp(-std::abs(z)));
    }
    return z;
}

/// Straight-line re-implementation of the forward map theta -> h_L in long
/// double, reading parameters from a flat vector in the library's order
/// (layer-major, row-major, bias column last).
inline LdVector forward_ld(const NetworkSpec& spec, const LdVector& theta,
                           const Eigen::VectorXd& x) {
    const int L = spec.depth();
    LdVector h(x.size());
    for (int i = 0; i < x.size(); ++i) h[i] = x[i];
    int off = 0;
    for (int l = 0; l < L; ++l) {
        const int rows = spec.layer_sizes[l + 1];
        const int cols = spec.layer_sizes[l] + 1;
        LdVector z(rows);
        for (int r = 0; r < rows; ++r) {
            long double acc = theta[off + r * cols + cols - 1];  // bias
            for (int c = 0; c + 1 < cols; ++c)
                acc += theta[off + r * cols + c] * h[c];
            z[r] = acc;
        }
        off += rows * cols;
        if (l == L - 1) {
            h = z;
        } else {
            for (int r = 0; r < rows; ++r) z[r] = act_ld(spec.activation, z[r]);
            h = z;
        }
    }
    return h;
}

inline LdVector flatten_params_ld(const ParamSet& params) {
    LdVector theta(params.dim());
    int off = 0;
    for (const auto& w : params.weights)
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) theta[off++] = w(r, c);
    return theta;
}

/// Order-4 central stencil, first derivative of a vector-valued map.
inline LdVector fd1(const std::function<LdVector(const LdVector&)>& f,
                    const LdVector& v, int i, long double s) {
    const auto at = [&](long double d) {
        LdVector vv = v;
        vv[i] += d;
        return f(vv);
    };
    return (-at(2 * s) + 8.0L * at(s) - 8.0L * at(-s) + at(-2 * s)) / (12.0L * s);
}

/// FD Jacobian of theta -> h_L, shape n_L x P, evaluated in long double.
inline Eigen::MatrixXd fd_jacobian_hL(const NetworkSpec& spec,
                                      const ParamSet& params,
                                      const Eigen::VectorXd& x,
                                      long double step = 1e-5L) {
    const LdVector theta = flatten_params_ld(params);
    const auto f = [&](const LdVector& th) { return forward_ld(spec, th, x); };
    Eigen::MatrixXd jac(spec.output_dim(), theta.size());
    for (int i = 0; i < theta.size(); ++i) {
        const LdVector col = fd1(f, theta, i, step);
        for (int a = 0; a < col.size(); ++a) jac(a, i) = static_cast<double>(col[a]);
    }
    return jac;
}

/// FD Hessian slices of theta -> h_L: nested first-derivative stencils.
inline std::vector<Eigen::MatrixXd> fd_hessian_hL(const NetworkSpec& spec,
                                                  const ParamSet& params,
                                                  const Eigen::VectorXd& x,
                                                  long double step = 1e-3L) {
    const LdVector theta = flatten_params_ld(params);
    const auto f = [&](const LdVector& th) { return forward_ld(spec, th, x); };
    const int p = static_cast<int>(theta.size());
    std::vector<Eigen::MatrixXd> hess(
        spec.output_dim(), Eigen::MatrixXd::Zero(p, p));
    for (int i = 0; i < p; ++i) {
        const auto di = [&](const LdVector& th) { return fd1(f, th, i, step); };
        for (int j = i; j < p; ++j) {
            const LdVector v = fd1(di, theta, j, step);
            for (int a = 0; a < v.size(); ++a) {
                hess[a](i, j) = static_cast<double>(v[a]);
                hess[a](j, i) = hess[a](i, j);
            }
        }
    }
    return hess;
}

/// FD gradient/Hessian of the log-likelihood t'h_L - F(h_L) w.r.t. theta.
inline Eigen::VectorXd fd_loglik_grad(const NetworkSpec& spec,
                                      const ParamSet& params,
                                      const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& t,
                                      long double step = 1e-5L) {
    const LdVector theta = flatten_params_ld(params);
    const auto ll = [&](const LdVector& th) {
        const LdVector h = forward_ld(spec, th, x);
        long double v = -fimlab::numdiff::log_partition_ld(spec.family, h);
        for (int a = 0; a < h.size(); ++a) v += static_cast<long double>(t[a]) * h[a];
        LdVector out(1);
        out[0] = v;
        return out;
    };
    Eigen::VectorXd g(theta.size());
    for (int i = 0; i < theta.size(); ++i)
        g[i] = static_cast<double>(fd1(ll, theta, i, step)[0]);
    return g;
}

inline Eigen::MatrixXd fd_loglik_hessian(const NetworkSpec& spec,
                                         const ParamSet& params,
                                         const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& t,
                                         long double step = 1e-3L) {
    const LdVector theta = flatten_params_ld(params);
    const auto ll = [&](const LdVector& th) {
        const LdVector h = forward_ld(spec, th, x);
        long double v = -fimlab::numdiff::log_partition_ld(spec.family, h);
        for (int a = 0; a < h.size(); ++a) v += static_cast<long double>(t[a]) * h[a];
        LdVector out(1);
        out[0] = v;
        return out;
    };
    const int p = static_cast<int>(theta.size());
    Eigen::MatrixXd hess(p, p);
    for (int i = 0; i < p; ++i) {
        const auto di = [&](const LdVector& th) { return fd1(ll, th, i, step); };
        for (int j = i; j < p; ++j) {
            hess(i, j) = static_cast<double>(fd1(di, theta, j, step)[0]);
            hess(j, i) = hess(i, j);
        }
    }
    return hess;
}

/// Expectation of a matrix-valued function over an enumerated head.
inline Eigen::MatrixXd enum_mean(
    const std::vector<Outcome>& outcomes,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& f) {
    Eigen::MatrixXd mean;
    for (const auto& o : outcomes) {
        const Eigen::MatrixXd v = f(o.t);
        if (mean.size() == 0)
            mean = o.prob * v;
        else
            mean += o.prob * v;
    }
    return mean;
}

/// Exact covariance tensor of a matrix-valued function over an enumerated
/// head: Cov^{ijkl} = E[(M - E M)_{ij} (M - E M)_{kl}].
inline fimlab::Tensor4 enum_cov(
    const std::vector<Outcome>& outcomes,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& f) {
    const Eigen::MatrixXd mean = enum_mean(outcomes, f);
    const int p = static_cast<int>(mean.rows());
    fimlab::Tensor4 cov(p);
    for (const auto& o : outcomes) {
        const Eigen::MatrixXd w = f(o.t) - mean;
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j) {
                const double wij = w(i, j);
                if (wij == 0.0) continue;
                for (int k = 0; k < p; ++k)
                    for (int l = 0; l < p; ++l)
                        cov(i, j, k, l) += o.prob * wij * w(k, l);
            }
    }
    return cov;
}

/// Relative error against a reference scaled by the reference's largest entry.
inline double rel_err(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
    const double scale = std::max(1e-300, want.cwiseAbs().maxCoeff());
    return (got - want).cwiseAbs().maxCoeff() / scale;
}

inline double max_abs_diff(const fimlab::Tensor4& a, const fimlab::Tensor4& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

/// Deterministic random network for sweeps.
inline ParamSet random_params(const NetworkSpec& spec, std::uint64_t seed) {
    return ParamSet::glorot_uniform(spec, fimlab::RngStream(seed));
}

inline Eigen::VectorXd random_input(int dim, std::uint64_t seed) {
    fimlab::RngStream s{seed};
    Eigen::VectorXd x(dim);
    for (int i = 0; i < dim; ++i) x[i] = 2.0 * s.next_double() - 1.0;
    return x;
}

}  // namespace oracles
