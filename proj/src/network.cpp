#include "fimlab/network.hpp"

#include <cmath>

#include "fimlab/errors.hpp"

namespace fimlab {

namespace {

struct ActOps {
    double (*f)(double);
    double (*df)(double);
    double (*d2f)(double);
};

double stable_logistic(double z) { return 0.5 * (1.0 + std::tanh(0.5 * z)); }

ActOps act_ops(Activation a) {
    switch (a) {
        case Activation::Identity:
            return {[](double z) { return z; }, [](double) { return 1.0; },
                    [](double) { return 0.0; }};
        case Activation::Tanh:
            return {[](double z) { return std::tanh(z); },
                    [](double z) {
                        const double t = std::tanh(z);
                        return 1.0 - t * t;
                    },
                    [](double z) {
                        const double t = std::tanh(z);
                        return -2.0 * t * (1.0 - t * t);
                    }};
        case Activation::Sigmoid:
            return {&stable_logistic,
                    [](double z) {
                        const double s = stable_logistic(z);
                        return s * (1.0 - s);
                    },
                    [](double z) {
                        const double s = stable_logistic(z);
                        return s * (1.0 - s) * (1.0 - 2.0 * s);
                    }};
        case Activation::Softplus:
            return {[](double z) {
                        return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
                    },
                    &stable_logistic,
                    [](double z) {
                        const double s = stable_logistic(z);
                        return s * (1.0 - s);
                    }};
    }
    throw ValidationError("internal", "unreachable");
}

Eigen::VectorXd extend_one(const Eigen::VectorXd& v) {
    Eigen::VectorXd out(v.size() + 1);
    out.head(v.size()) = v;
    out[v.size()] = 1.0;
    return out;
}

}  // namespace

Activation activation_from_name(const std::string& name) {
    if (name == "identity") return Activation::Identity;
    if (name == "tanh") return Activation::Tanh;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "softplus") return Activation::Softplus;
    if (name == "relu")
        throw ValidationError("non_c2_activation",
                              "relu is not twice continuously differentiable and is "
                              "rejected at construction");
    throw ValidationError("unknown_activation", "unknown activation: " + name);
}

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Tanh: return "tanh";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Softplus: return "softplus";
    }
    return "?";
}

NetworkSpec::NetworkSpec(std::vector<int> sizes, Activation act, FamilyModel fam)
    : layer_sizes(std::move(sizes)), activation(act), family(fam) {
    if (layer_sizes.size() < 2)
        throw ValidationError("invalid_layers", "need at least one layer (L >= 1)");
    for (int n : layer_sizes)
        if (n < 1) throw ValidationError("invalid_layers", "layer sizes must be positive");
    if (layer_sizes.back() != family.dim_h)
        throw ValidationError("dimension_mismatch",
                              "family dim_h must equal the last layer size");
}

ParamSet ParamSet::zeros(const NetworkSpec& spec) {
    ParamSet p;
    for (int l = 0; l + 1 < static_cast<int>(spec.layer_sizes.size()); ++l)
        p.weights.push_back(Eigen::MatrixXd::Zero(spec.layer_sizes[l + 1],
                                                  spec.layer_sizes[l] + 1));
    return p;
}

ParamSet ParamSet::glorot_uniform(const NetworkSpec& spec, RngStream stream) {
    ParamSet p = zeros(spec);
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        const double a =
            std::sqrt(6.0 / (spec.layer_sizes[l] + spec.layer_sizes[l + 1]));
        RngStream ls = stream.child(l);
        Eigen::MatrixXd& w = p.weights[l];
        for (int r = 0; r < w.rows(); ++r)
            for (int c = 0; c < w.cols(); ++c)
                w(r, c) = a * (2.0 * ls.next_double() - 1.0);
    }
    return p;
}

void ParamSet::validate_shapes(const NetworkSpec& spec) const {
    if (weights.size() + 1 != spec.layer_sizes.size())
        throw ValidationError("dimension_mismatch", "wrong number of weight matrices");
    for (std::size_t l = 0; l < weights.size(); ++l)
        if (weights[l].rows() != spec.layer_sizes[l + 1] ||
            weights[l].cols() != spec.layer_sizes[l] + 1)
            throw ValidationError("dimension_mismatch",
                                  "weight matrix " + std::to_string(l) +
                                      " has wrong shape");
}

int ParamSet::dim() const {
    int p = 0;
    for (const auto& w : weights) p += static_cast<int>(w.size());
    return p;
}

int ParamSet::layer_offset(int layer) const {
    int off = 0;
    for (int l = 0; l < layer; ++l) off += static_cast<int>(weights[l].size());
    return off;
}

ParamSet::Coord ParamSet::coord_of(int flat) const {
    if (flat < 0) throw ValidationError("subset_out_of_range", "negative parameter index");
    for (int l = 0; l < static_cast<int>(weights.size()); ++l) {
        const int sz = static_cast<int>(weights[l].size());
        if (flat < sz) {
            const int cols = static_cast<int>(weights[l].cols());
            return {l, flat / cols, flat % cols};
        }
        flat -= sz;
    }
    throw ValidationError("subset_out_of_range", "parameter index beyond P");
}

int ParamSet::flat_of(int layer, int row, int col) const {
    const int cols = static_cast<int>(weights[layer].cols());
    return layer_offset(layer) + row * cols + col;
}

Eigen::MatrixXd ParamSet::weight_nobias(int layer) const {
    const Eigen::MatrixXd& w = weights[layer];
    return w.leftCols(w.cols() - 1);
}

ForwardTrace forward(const NetworkSpec& spec, const ParamSet& params,
                     const Eigen::VectorXd& x) {
    params.validate_shapes(spec);
    if (x.size() != spec.input_dim())
        throw ValidationError("dimension_mismatch", "input has wrong dimension");
    const ActOps act = act_ops(spec.activation);
    const int L = spec.depth();
    ForwardTrace tr;
    tr.h.resize(L + 1);
    tr.hbar.resize(L);
    tr.preact.resize(L);
    tr.h[0] = x;
    for (int l = 0; l < L; ++l) {
        tr.hbar[l] = extend_one(tr.h[l]);
        tr.preact[l] = params.weights[l] * tr.hbar[l];
        if (l == L - 1) {
            tr.h[l + 1] = tr.preact[l];
        } else {
            tr.h[l + 1] = tr.preact[l].unaryExpr([&](double z) { return act.f(z); });
        }
    }
    return tr;
}

BackpropTrace backprop_factors(const NetworkSpec& spec, const ParamSet& params,
                               const ForwardTrace& trace) {
    const ActOps act = act_ops(spec.activation);
    const int L = spec.depth();
    const int nL = spec.output_dim();
    BackpropTrace bt;
    bt.B.resize(L + 1);
    bt.D.resize(L);
    bt.B[L] = Eigen::MatrixXd::Identity(nL, nL);
    for (int l = L - 1; l >= 0; --l) {
        if (l == L - 1) {
            bt.D[l] = Eigen::VectorXd::Ones(spec.layer_sizes[l + 1]);
        } else {
            bt.D[l] = trace.preact[l].unaryExpr([&](double z) { return act.df(z); });
        }
        bt.B[l] = bt.B[l + 1] * bt.D[l].asDiagonal() * params.weight_nobias(l);
    }
    return bt;
}

std::vector<int> full_subset(const ParamSet& params) {
    std::vector<int> s(params.dim());
    for (int i = 0; i < static_cast<int>(s.size()); ++i) s[i] = i;
    return s;
}

void validate_subset(const ParamSet& params, const std::vector<int>& subset) {
    const int P = params.dim();
    if (subset.empty())
        throw ValidationError("subset_out_of_range", "empty parameter subset");
    std::vector<char> seen(P, 0);
    for (int i : subset) {
        if (i < 0 || i >= P)
            throw ValidationError("subset_out_of_range",
                                  "parameter index " + std::to_string(i) +
                                      " outside [0, " + std::to_string(P) + ")");
        if (seen[i])
            throw ValidationError("subset_out_of_range",
                                  "duplicate parameter index " + std::to_string(i));
        seen[i] = 1;
    }
}

Eigen::MatrixXd jacobian_hL(const NetworkSpec& spec, const ParamSet& params,
                            const Eigen::VectorXd& x,
                            const std::vector<int>& subset) {
    validate_subset(params, subset);
    if (static_cast<int>(subset.size()) > kDefaultParamCap)
        throw ValidationError("cap_exceeded",
                              "subset larger than the materialization cap " +
                                  std::to_string(kDefaultParamCap));
    const ForwardTrace tr = forward(spec, params, x);
    const BackpropTrace bt = backprop_factors(spec, params, tr);
    const int nL = spec.output_dim();
    Eigen::MatrixXd J(nL, subset.size());
    for (std::size_t s = 0; s < subset.size(); ++s) {
        const auto [l, r, c] = params.coord_of(subset[s]);
        const double dh = bt.D[l][r] * tr.hbar[l][c];
        for (int a = 0; a < nL; ++a) J(a, s) = bt.B[l + 1](a, r) * dh;
    }
    return J;
}

Eigen::MatrixXd jacobian_hL(const NetworkSpec& spec, const ParamSet& params,
                            const Eigen::VectorXd& x) {
    return jacobian_hL(spec, params, x, full_subset(params));
}

std::vector<Eigen::MatrixXd> hessian_hL(const NetworkSpec& spec,
                                        const ParamSet& params,
                                        const Eigen::VectorXd& x,
                                        const std::vector<int>& subset) {
    validate_subset(params, subset);
    if (static_cast<int>(subset.size()) > kDefaultParamCap)
        throw ValidationError("cap_exceeded",
                              "subset larger than the materialization cap " +
                                  std::to_string(kDefaultParamCap));
    const ActOps act = act_ops(spec.activation);
    const int L = spec.depth();
    const int nL = spec.output_dim();
    const int Ps = static_cast<int>(subset.size());
    const ForwardTrace tr = forward(spec, params, x);

    // Activation derivatives per layer; the last layer is affine.
    std::vector<Eigen::VectorXd> d1(L), d2(L);
    for (int l = 0; l < L; ++l) {
        if (l == L - 1) {
            d1[l] = Eigen::VectorXd::Ones(spec.layer_sizes[l + 1]);
            d2[l] = Eigen::VectorXd::Zero(spec.layer_sizes[l + 1]);
        } else {
            d1[l] = tr.preact[l].unaryExpr([&](double z) { return act.df(z); });
            d2[l] = tr.preact[l].unaryExpr([&](double z) { return act.d2f(z); });
        }
    }

    // First-order tangents: u[s][l] = dh_l / dtheta_s and
    // dz[s][l] = d(W_l hbar_l) / dtheta_s.
    std::vector<ParamSet::Coord> coords(Ps);
    std::vector<std::vector<Eigen::VectorXd>> u(Ps), dz(Ps);
    for (int s = 0; s < Ps; ++s) {
        coords[s] = params.coord_of(subset[s]);
        u[s].resize(L + 1);
        dz[s].resize(L);
        u[s][0] = Eigen::VectorXd::Zero(spec.layer_sizes[0]);
        for (int l = 0; l < L; ++l) {
            dz[s][l] = params.weight_nobias(l) * u[s][l];
            if (coords[s].layer == l)
                dz[s][l][coords[s].row] += tr.hbar[l][coords[s].col];
            u[s][l + 1] = d1[l].cwiseProduct(dz[s][l]);
        }
    }

    std::vector<Eigen::MatrixXd> H(nL, Eigen::MatrixXd::Zero(Ps, Ps));
    // Second-order tangents per parameter pair.
    for (int s = 0; s < Ps; ++s) {
        for (int t = s; t < Ps; ++t) {
            Eigen::VectorXd w = Eigen::VectorXd::Zero(spec.layer_sizes[0]);
            for (int l = 0; l < L; ++l) {
                Eigen::VectorXd d2z = params.weight_nobias(l) * w;
                // Cross terms from dW_l acting on the other tangent; the bias
                // column differentiates to zero.
                if (coords[s].layer == l && coords[s].col < spec.layer_sizes[l])
                    d2z[coords[s].row] += u[t][l][coords[s].col];
                if (coords[t].layer == l && coords[t].col < spec.layer_sizes[l])
                    d2z[coords[t].row] += u[s][l][coords[t].col];
                w = d2[l].cwiseProduct(dz[s][l]).cwiseProduct(dz[t][l]) +
                    d1[l].cwiseProduct(d2z);
            }
            for (int a = 0; a < nL; ++a) {
                H[a](s, t) = w[a];
                H[a](t, s) = w[a];
            }
        }
    }
    return H;
}

std::vector<Eigen::MatrixXd> hessian_hL(const NetworkSpec& spec,
                                        const ParamSet& params,
                                        const Eigen::VectorXd& x) {
    return hessian_hL(spec, params, x, full_subset(params));
}

Eigen::VectorXd loglik_grad(const NetworkSpec& spec, const ParamSet& params,
                            const Eigen::VectorXd& x, const Eigen::VectorXd& t) {
    if (t.size() != spec.family.dim_t())
        throw ValidationError("dimension_mismatch", "sufficient statistic dimension");
    const ForwardTrace tr = forward(spec, params, x);
    const Eigen::VectorXd eta = moments(spec.family, tr.h.back()).eta;
    const Eigen::MatrixXd J = jacobian_hL(spec, params, x);
    return J.transpose() * (t - eta);
}

Eigen::MatrixXd loglik_hessian(const NetworkSpec& spec, const ParamSet& params,
                               const Eigen::VectorXd& x, const Eigen::VectorXd& t) {
    if (t.size() != spec.family.dim_t())
        throw ValidationError("dimension_mismatch", "sufficient statistic dimension");
    const ForwardTrace tr = forward(spec, params, x);
    const MomentSet mo = moments(spec.family, tr.h.back());
    const Eigen::MatrixXd J = jacobian_hL(spec, params, x);
    const std::vector<Eigen::MatrixXd> H = hessian_hL(spec, params, x);
    const Eigen::MatrixXd pb = J.transpose() * mo.fim_head * J;
    // Exact symmetry; the raw triple product differs across the diagonal by
    // rounding of the two accumulation orders.
    Eigen::MatrixXd out = -0.5 * (pb + pb.transpose());
    for (int a = 0; a < spec.output_dim(); ++a) out += (t[a] - mo.eta[a]) * H[a];
    return out;
}

JacobianNormReport jacobian_norm_report(const NetworkSpec& spec,
                                        const ParamSet& params,
                                        const Eigen::VectorXd& x, int l) {
    const int L = spec.depth();
    if (l < 0 || l >= L)
        throw ValidationError("invalid_layers", "layer index out of range");
    const ForwardTrace tr = forward(spec, params, x);
    const BackpropTrace bt = backprop_factors(spec, params, tr);

    const Eigen::MatrixXd BD = bt.B[l + 1] * bt.D[l].asDiagonal();
    const double hbar_norm = tr.hbar[l].norm();

    JacobianNormReport rep;
    rep.lhs_frobenius = BD.norm() * hbar_norm;
    rep.lhs_spectral =
        BD.jacobiSvd().singularValues()[0] * hbar_norm;

    if (l == L - 1) {
        // Empty weight product: keep the exact recursion base ||B_L D_{L-1}||.
        rep.rhs_frobenius = std::sqrt(static_cast<double>(spec.output_dim())) * hbar_norm;
        rep.rhs_spectral = hbar_norm;
        return rep;
    }
    double prod_f = 1.0, prod_s = 1.0;
    for (int i = l + 1; i <= L - 1; ++i) {
        const Eigen::MatrixXd wi = params.weight_nobias(i);
        prod_f *= wi.norm();
        prod_s *= wi.jacobiSvd().singularValues()[0];
    }
    rep.rhs_frobenius = prod_f * hbar_norm;
    rep.rhs_spectral = prod_s * hbar_norm;
    return rep;
}

}  // namespace fimlab
