#include "fimlab/fim.hpp"

#include <cmath>

#include "fimlab/errors.hpp"

namespace fimlab {

namespace {

// Shared by the exact FIM and estimator 1 so that the zero-variance case
// (constant residual square) reproduces the exact FIM bit for bit.
Eigen::MatrixXd pullback(const Eigen::MatrixXd& jac_subset,
                         const Eigen::MatrixXd& head_matrix) {
    return jac_subset.transpose() * head_matrix * jac_subset;
}

}  // namespace

Eigen::VectorXd SampleBatch::mean_t() const {
    return t_samples.colwise().sum() / static_cast<double>(size());
}

Eigen::MatrixXd SampleBatch::centered_second_moment(const Eigen::VectorXd& eta) const {
    const int n = size();
    const int d = static_cast<int>(t_samples.cols());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd r = t_samples.row(i).transpose() - eta;
        m += r * r.transpose();
    }
    return m / static_cast<double>(n);
}

SampleBatch draw_batch(const FamilyModel& family, const Eigen::VectorXd& h,
                       int n, RngStream stream, std::uint64_t seed_label) {
    if (n < 1) throw ValidationError("invalid_samples", "N must be >= 1");
    SampleBatch b;
    b.seed = seed_label;
    b.t_samples.resize(n, family.dim_t());
    for (int i = 0; i < n; ++i) {
        RngStream s = stream.child(i);
        b.t_samples.row(i) = sample(family, h, s).t.transpose();
    }
    return b;
}

FimMatrix exact_fim(const NetworkSpec& spec, const ParamSet& params,
                    const Eigen::VectorXd& x, const std::vector<int>& subset) {
    const ForwardTrace tr = forward(spec, params, x);
    const MomentSet mo = moments(spec.family, tr.h.back());
    const Eigen::MatrixXd J = jacobian_hL(spec, params, x, subset);
    return {pullback(J, mo.fim_head), subset, Provenance::Exact};
}

FimMatrix estimate_fim1(const NetworkSpec& spec, const ParamSet& params,
                        const Eigen::VectorXd& x, const SampleBatch& batch,
                        const std::vector<int>& subset) {
    const ForwardTrace tr = forward(spec, params, x);
    const MomentSet mo = moments(spec.family, tr.h.back());
    const Eigen::MatrixXd J = jacobian_hL(spec, params, x, subset);
    return {pullback(J, batch.centered_second_moment(mo.eta)), subset,
            Provenance::Estimator1};
}

FimMatrix estimate_fim2(const NetworkSpec& spec, const ParamSet& params,
                        const Eigen::VectorXd& x, const SampleBatch& batch,
                        const std::vector<int>& subset) {
    const ForwardTrace tr = forward(spec, params, x);
    const MomentSet mo = moments(spec.family, tr.h.back());
    const Eigen::MatrixXd J = jacobian_hL(spec, params, x, subset);
    const std::vector<Eigen::MatrixXd> H = hessian_hL(spec, params, x, subset);
    const Eigen::VectorXd bias = mo.eta - batch.mean_t();
    Eigen::MatrixXd out = pullback(J, mo.fim_head);
    for (int a = 0; a < spec.output_dim(); ++a) out += bias[a] * H[a];
    return {std::move(out), subset, Provenance::Estimator2};
}

FimMatrix estimate_fim_combined(double alpha, const NetworkSpec& spec,
                                const ParamSet& params, const Eigen::VectorXd& x,
                                const SampleBatch& batch,
                                const std::vector<int>& subset) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ValidationError("alpha_out_of_range", "alpha must be in [0, 1]");
    const FimMatrix e1 = estimate_fim1(spec, params, x, batch, subset);
    if (alpha == 1.0) return {e1.values, subset, Provenance::Combined, alpha};
    const FimMatrix e2 = estimate_fim2(spec, params, x, batch, subset);
    if (alpha == 0.0) return {e2.values, subset, Provenance::Combined, alpha};
    return {alpha * e1.values + (1.0 - alpha) * e2.values, subset,
            Provenance::Combined, alpha};
}

Eigen::MatrixXd backprop_metric(const NetworkSpec& spec, const ParamSet& params,
                                const Eigen::VectorXd& x, const SampleBatch& batch,
                                int l) {
    if (l < 0 || l > spec.depth())
        throw ValidationError("invalid_layers", "layer index out of range");
    const ForwardTrace tr = forward(spec, params, x);
    const BackpropTrace bt = backprop_factors(spec, params, tr);
    const Eigen::VectorXd eta = moments(spec.family, tr.h.back()).eta;
    const Eigen::MatrixXd m = batch.centered_second_moment(eta);
    return bt.B[l].transpose() * m * bt.B[l];
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> empirical_gap(
    const NetworkSpec& spec, const ParamSet& params, const Eigen::VectorXd& x,
    const Eigen::VectorXd& t_target, const SampleBatch& batch,
    const std::vector<int>& subset) {
    const ForwardTrace tr = forward(spec, params, x);
    const MomentSet mo = moments(spec.family, tr.h.back());
    const Eigen::MatrixXd J = jacobian_hL(spec, params, x, subset);
    const std::vector<Eigen::MatrixXd> H = hessian_hL(spec, params, x, subset);

    const Eigen::VectorXd score = J.transpose() * (t_target - mo.eta);
    const FimMatrix e1 = estimate_fim1(spec, params, x, batch, subset);
    const Eigen::MatrixXd delta1 = score * score.transpose() - e1.values;

    // -loglik_hessian(t~) - I2 restricted to the subset; the pullback terms
    // cancel, leaving (mean t - t~)_a d^2 h_L^a.
    const Eigen::VectorXd r = batch.mean_t() - t_target;
    Eigen::MatrixXd delta2 = Eigen::MatrixXd::Zero(subset.size(), subset.size());
    for (int a = 0; a < spec.output_dim(); ++a) delta2 += r[a] * H[a];
    return {delta1, delta2};
}

Reparam Reparam::identity(int n) {
    return affine(Eigen::MatrixXd::Identity(n, n), Eigen::VectorXd::Zero(n));
}

Reparam Reparam::affine(Eigen::MatrixXd a, Eigen::VectorXd b) {
    if (a.rows() != a.cols() || a.rows() != b.size())
        throw ValidationError("dimension_mismatch", "affine map shapes");
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible())
        throw ValidationError("non_invertible_map", "affine reparametrization matrix is singular");
    Reparam r;
    r.affine_ = true;
    r.n_ = static_cast<int>(a.rows());
    r.a_inv_ = lu.inverse();
    r.a_ = std::move(a);
    r.b_ = std::move(b);
    return r;
}

Reparam Reparam::elementwise(ScalarFn f, ScalarFn df, ScalarFn d2f) {
    Reparam r;
    r.affine_ = false;
    r.f_ = std::move(f);
    r.df_ = std::move(df);
    r.d2f_ = std::move(d2f);
    return r;
}

Eigen::MatrixXd Reparam::dtheta_dxi(const Eigen::VectorXd& theta) const {
    if (affine_) {
        if (theta.size() != n_)
            throw ValidationError("dimension_mismatch", "reparam dimension");
        return a_inv_;
    }
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(theta.size(), theta.size());
    for (int i = 0; i < theta.size(); ++i) {
        const double d = df_(theta[i]);
        if (d == 0.0 || !std::isfinite(d))
            throw ValidationError("non_invertible_map",
                                  "elementwise map has vanishing derivative");
        g(i, i) = 1.0 / d;
    }
    return g;
}

std::vector<Eigen::MatrixXd> Reparam::d2theta_dxi2(const Eigen::VectorXd& theta) const {
    const int n = static_cast<int>(theta.size());
    std::vector<Eigen::MatrixXd> s(n, Eigen::MatrixXd::Zero(n, n));
    if (affine_) return s;
    for (int i = 0; i < n; ++i) {
        // Inverse-function rule: (f^-1)''(xi) = -f''(theta) / f'(theta)^3.
        const double d = df_(theta[i]);
        s[i](i, i) = -d2f_(theta[i]) / (d * d * d);
    }
    return s;
}

Eigen::VectorXd Reparam::to_xi(const Eigen::VectorXd& theta) const {
    if (affine_) return a_ * theta + b_;
    Eigen::VectorXd xi(theta.size());
    for (int i = 0; i < theta.size(); ++i) xi[i] = f_(theta[i]);
    return xi;
}

Eigen::VectorXd gather_params(const ParamSet& params, const std::vector<int>& subset) {
    Eigen::VectorXd v(subset.size());
    for (std::size_t s = 0; s < subset.size(); ++s) {
        const auto [l, r, c] = params.coord_of(subset[s]);
        v[s] = params.weights[l](r, c);
    }
    return v;
}

FimMatrix reparam_estimators(const FimMatrix& fim_est, const Reparam& reparam,
                             const ReparamBatchStats& batch_stats,
                             const NetDerivatives& net_derivatives,
                             const Eigen::VectorXd& theta_subset) {
    const Eigen::MatrixXd g = reparam.dtheta_dxi(theta_subset);
    FimMatrix out = fim_est;
    out.values = g.transpose() * fim_est.values * g;
    if (fim_est.provenance == Provenance::Estimator2) {
        const std::vector<Eigen::MatrixXd> s2 = reparam.d2theta_dxi2(theta_subset);
        const Eigen::VectorXd gvec =
            net_derivatives.jac.transpose() * batch_stats.mean_residual;
        for (std::size_t b = 0; b < s2.size(); ++b) out.values += gvec[b] * s2[b];
    }
    return out;
}

}  // namespace fimlab
