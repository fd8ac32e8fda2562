#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fimlab/errors.hpp"
#include "fimlab/network.hpp"
#include "support/oracles.hpp"

using namespace fimlab;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd x(static_cast<int>(v.size()));
    int i = 0;
    for (double e : v) x[i++] = e;
    return x;
}

NetworkSpec make_spec(std::vector<int> sizes, Activation act,
                      FamilyModel fam = FamilyModel::normal(1)) {
    if (fam.dim_h != sizes.back()) fam = FamilyModel::normal(sizes.back());
    return NetworkSpec(std::move(sizes), act, fam);
}

double hess_rel_err(const std::vector<Eigen::MatrixXd>& got,
                    const std::vector<Eigen::MatrixXd>& want) {
    double diff = 0.0, scale = 1e-300;
    for (std::size_t a = 0; a < got.size(); ++a) {
        diff = std::max(diff, (got[a] - want[a]).cwiseAbs().maxCoeff());
        scale = std::max(scale, want[a].cwiseAbs().maxCoeff());
    }
    return diff / std::max(scale, 1.0);
}

}  // namespace

TEST_CASE("construction rejects non-C2 activations and bad shapes") {
    CHECK_THROWS_AS(activation_from_name("relu"), ValidationError);
    try {
        activation_from_name("relu");
    } catch (const ValidationError& e) {
        CHECK(e.code() == "non_c2_activation");
    }
    CHECK_THROWS_AS(NetworkSpec({2}, Activation::Tanh, FamilyModel::normal(2)),
                    ValidationError);
    CHECK_THROWS_AS(NetworkSpec({2, 0}, Activation::Tanh, FamilyModel::normal(1)),
                    ValidationError);
    CHECK_THROWS_AS(NetworkSpec({2, 3}, Activation::Tanh, FamilyModel::normal(1)),
                    ValidationError);
}

TEST_CASE("flat index map is a bijection") {
    const NetworkSpec spec = make_spec({3, 4, 2}, Activation::Tanh);
    const ParamSet params = ParamSet::zeros(spec);
    CHECK(params.dim() == 4 * 4 + 2 * 5);
    for (int i = 0; i < params.dim(); ++i) {
        const auto [l, r, c] = params.coord_of(i);
        CHECK(params.flat_of(l, r, c) == i);
    }
    CHECK_THROWS_AS(params.coord_of(params.dim()), ValidationError);
}

TEST_CASE("forward: affine single layer") {
    const NetworkSpec spec = make_spec({1, 1}, Activation::Identity);
    ParamSet params = ParamSet::zeros(spec);
    params.weights[0] << 2.0, 1.0;
    const ForwardTrace tr = forward(spec, params, vec({3.0}));
    CHECK(tr.h.back()[0] == 7.0);
}

TEST_CASE("forward: zero weights pass the last bias through") {
    const NetworkSpec spec = make_spec({2, 3, 2}, Activation::Tanh,
                                       FamilyModel::normal(2));
    ParamSet params = ParamSet::zeros(spec);
    params.weights[1](0, 3) = 0.25;
    params.weights[1](1, 3) = -1.5;
    const ForwardTrace tr = forward(spec, params, vec({0.3, -0.9}));
    CHECK(tr.h.back()[0] == 0.25);
    CHECK(tr.h.back()[1] == -1.5);
}

TEST_CASE("forward: re-evaluating the recurrences is bit-exact") {
    const NetworkSpec spec = make_spec({3, 4, 2}, Activation::Softplus,
                                       FamilyModel::normal(2));
    const ParamSet params = oracles::random_params(spec, 11);
    const Eigen::VectorXd x = oracles::random_input(3, 5);
    const ForwardTrace tr = forward(spec, params, x);
    // Replay the recurrence from the stored trace.
    for (int l = 0; l < spec.depth(); ++l) {
        Eigen::VectorXd hbar(tr.h[l].size() + 1);
        hbar << tr.h[l], 1.0;
        CHECK((hbar - tr.hbar[l]).cwiseAbs().maxCoeff() == 0.0);
        const Eigen::VectorXd z = params.weights[l] * tr.hbar[l];
        CHECK((z - tr.preact[l]).cwiseAbs().maxCoeff() == 0.0);
    }
    const ForwardTrace tr2 = forward(spec, params, x);
    CHECK((tr2.h.back() - tr.h.back()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backprop factors: base cases and recursion") {
    SUBCASE("depth 1: B_L is the identity") {
        const NetworkSpec spec = make_spec({2, 2}, Activation::Identity,
                                           FamilyModel::normal(2));
        const ParamSet params = oracles::random_params(spec, 3);
        const ForwardTrace tr = forward(spec, params, vec({0.4, 1.0}));
        const BackpropTrace bt = backprop_factors(spec, params, tr);
        CHECK(bt.B[1].isIdentity(0.0));
        CHECK((bt.D[0] - Eigen::VectorXd::Ones(2)).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("identity activation, depth 2: B_1 = W_1 without bias") {
        const NetworkSpec spec = make_spec({2, 3, 2}, Activation::Identity,
                                           FamilyModel::normal(2));
        const ParamSet params = oracles::random_params(spec, 4);
        const ForwardTrace tr = forward(spec, params, vec({-0.2, 0.8}));
        const BackpropTrace bt = backprop_factors(spec, params, tr);
        CHECK((bt.B[1] - params.weight_nobias(1)).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("sigmoid depth 3: B_1 matches the FD Jacobian of h_1 -> h_L") {
        const NetworkSpec spec = make_spec({2, 3, 3, 2}, Activation::Sigmoid,
                                           FamilyModel::normal(2));
        const ParamSet params = oracles::random_params(spec, 5);
        const Eigen::VectorXd x = vec({0.5, -0.3});
        const ForwardTrace tr = forward(spec, params, x);
        const BackpropTrace bt = backprop_factors(spec, params, tr);

        // FD oracle: perturb h_1 and replay layers 1..L-1.
        const auto tail = [&](const Eigen::VectorXd& h1) {
            Eigen::VectorXd h = h1;
            for (int l = 1; l < spec.depth(); ++l) {
                Eigen::VectorXd hbar(h.size() + 1);
                hbar << h, 1.0;
                Eigen::VectorXd z = params.weights[l] * hbar;
                if (l == spec.depth() - 1)
                    h = z;
                else
                    h = z.unaryExpr(
                        [](double v) { return 0.5 * (1.0 + std::tanh(0.5 * v)); });
            }
            return h;
        };
        const double s = 1e-5;
        Eigen::MatrixXd fd(2, 3);
        for (int i = 0; i < 3; ++i) {
            Eigen::VectorXd hp = tr.h[1], hm = tr.h[1];
            Eigen::VectorXd hp2 = tr.h[1], hm2 = tr.h[1];
            hp[i] += s;
            hm[i] -= s;
            hp2[i] += 2 * s;
            hm2[i] -= 2 * s;
            fd.col(i) =
                (-tail(hp2) + 8 * tail(hp) - 8 * tail(hm) + tail(hm2)) / (12 * s);
        }
        CHECK(oracles::rel_err(bt.B[1], fd) < 1e-6);
    }
}

TEST_CASE("jacobian_hL closed forms") {
    SUBCASE("depth-1 normal head: row is (x, 1)") {
        const NetworkSpec spec = make_spec({1, 1}, Activation::Identity);
        ParamSet params = ParamSet::zeros(spec);
        params.weights[0] << 0.7, -0.1;
        const Eigen::MatrixXd jac = jacobian_hL(spec, params, vec({2.0}));
        CHECK(jac(0, 0) == 2.0);
        CHECK(jac(0, 1) == 1.0);
    }
    SUBCASE("zero input: only bias columns of layer 0 contribute") {
        const NetworkSpec spec = make_spec({2, 3, 1}, Activation::Identity);
        const ParamSet params = oracles::random_params(spec, 6);
        const Eigen::MatrixXd jac = jacobian_hL(spec, params, vec({0.0, 0.0}));
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 2; ++c)  // non-bias columns of W_0
                CHECK(jac(0, params.flat_of(0, r, c)) == 0.0);
    }
}

TEST_CASE("derivative fidelity: analytic vs central finite differences") {
    // Random nets up to depth 4, widths <= 8, all four activations.
    const Activation acts[] = {Activation::Identity, Activation::Tanh,
                               Activation::Sigmoid, Activation::Softplus};
    const std::vector<std::vector<int>> shapes = {
        {2, 2}, {3, 5, 2}, {2, 8, 3, 1}, {2, 4, 3, 4, 2}};
    std::uint64_t seed = 100;
    for (const auto& sizes : shapes) {
        for (Activation act : acts) {
            const NetworkSpec spec = make_spec(sizes, act,
                                               FamilyModel::normal(sizes.back()));
            const ParamSet params = oracles::random_params(spec, ++seed);
            const Eigen::VectorXd x =
                oracles::random_input(sizes.front(), seed ^ 0xabc);
            const Eigen::MatrixXd jac = jacobian_hL(spec, params, x);
            const Eigen::MatrixXd jac_fd = oracles::fd_jacobian_hL(spec, params, x);
            CHECK(oracles::rel_err(jac, jac_fd) < 1e-6);

            const std::vector<Eigen::MatrixXd> hess = hessian_hL(spec, params, x);
            const std::vector<Eigen::MatrixXd> hess_fd =
                oracles::fd_hessian_hL(spec, params, x);
            CHECK(hess_rel_err(hess, hess_fd) < 1e-5);
        }
    }
}

TEST_CASE("hessian structure") {
    SUBCASE("depth-1 nets are affine in theta") {
        const NetworkSpec spec = make_spec({3, 2}, Activation::Identity,
                                           FamilyModel::normal(2));
        const ParamSet params = oracles::random_params(spec, 21);
        for (const auto& h : hessian_hL(spec, params, oracles::random_input(3, 2)))
            CHECK(h.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("identity depth 2: only mixed blocks, value hbar0_k") {
        const NetworkSpec spec = make_spec({2, 3, 2}, Activation::Identity,
                                           FamilyModel::normal(2));
        const ParamSet params = oracles::random_params(spec, 22);
        const Eigen::VectorXd x = vec({0.4, -1.2});
        const auto hess = hessian_hL(spec, params, x);
        const ForwardTrace tr = forward(spec, params, x);
        const int off1 = params.layer_offset(1);
        for (int a = 0; a < 2; ++a) {
            // Diagonal blocks vanish.
            for (int i = 0; i < off1; ++i)
                for (int j = 0; j < off1; ++j) CHECK(hess[a](i, j) == 0.0);
            for (int i = off1; i < params.dim(); ++i)
                for (int j = off1; j < params.dim(); ++j)
                    CHECK(hess[a](i, j) == 0.0);
            // d^2 h_L^a / d[W_1]_{a,j} d[W_0]_{j,k} = hbar0_k.
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) {
                    const int p1 = params.flat_of(1, a, j);
                    const int p0 = params.flat_of(0, j, k);
                    CHECK(hess[a](p1, p0) ==
                          doctest::Approx(tr.hbar[0][k]).epsilon(1e-14));
                }
        }
    }
    SUBCASE("slices are symmetric by construction") {
        const NetworkSpec spec = make_spec({2, 4, 3}, Activation::Tanh,
                                           FamilyModel::normal(3));
        const ParamSet params = oracles::random_params(spec, 23);
        for (const auto& h : hessian_hL(spec, params, oracles::random_input(2, 9)))
            CHECK((h - h.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("chain consistency of the layer-l Jacobian block") {
    const NetworkSpec spec = make_spec({2, 3, 4, 2}, Activation::Tanh,
                                       FamilyModel::normal(2));
    const ParamSet params = oracles::random_params(spec, 31);
    const Eigen::VectorXd x = oracles::random_input(2, 13);
    const Eigen::MatrixXd jac = jacobian_hL(spec, params, x);
    const ForwardTrace tr = forward(spec, params, x);
    const BackpropTrace bt = backprop_factors(spec, params, tr);
    for (int l = 0; l < spec.depth(); ++l) {
        const Eigen::MatrixXd bd = bt.B[l + 1] * bt.D[l].asDiagonal();
        for (int r = 0; r < spec.layer_sizes[l + 1]; ++r)
            for (int c = 0; c <= spec.layer_sizes[l]; ++c)
                for (int a = 0; a < 2; ++a)
                    CHECK(jac(a, params.flat_of(l, r, c)) ==
                          doctest::Approx(bd(a, r) * tr.hbar[l][c]).epsilon(1e-13));
    }
}

TEST_CASE("loglik derivatives") {
    SUBCASE("score vanishes at t = eta") {
        const NetworkSpec spec = make_spec({2, 3, 1}, Activation::Tanh,
                                           FamilyModel::bernoulli(1));
        const ParamSet params = oracles::random_params(spec, 41);
        const Eigen::VectorXd x = oracles::random_input(2, 17);
        const Eigen::VectorXd eta =
            moments(spec.family, forward(spec, params, x).h.back()).eta;
        CHECK(loglik_grad(spec, params, x, eta).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("depth-1 normal head closed form") {
        const NetworkSpec spec = make_spec({1, 1}, Activation::Identity);
        ParamSet params = ParamSet::zeros(spec);
        params.weights[0] << 0.5, 0.2;
        const double x0 = 1.5, y = 2.0;
        const Eigen::VectorXd g = loglik_grad(spec, params, vec({x0}), vec({y}));
        const double resid = y - (0.5 * x0 + 0.2);
        CHECK(g[0] == doctest::Approx(resid * x0).epsilon(1e-14));
        CHECK(g[1] == doctest::Approx(resid).epsilon(1e-14));
    }
    SUBCASE("enumeration mean of the score is zero") {
        const NetworkSpec spec = make_spec({2, 3, 2}, Activation::Sigmoid,
                                           FamilyModel::bernoulli(2));
        const ParamSet params = oracles::random_params(spec, 42);
        const Eigen::VectorXd x = oracles::random_input(2, 19);
        const Eigen::VectorXd h = forward(spec, params, x).h.back();
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(params.dim());
        for (const auto& o : enumerate_outcomes(spec.family, h))
            mean += o.prob * loglik_grad(spec, params, x, o.t);
        CHECK(mean.cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("FD oracles for the gradient and Hessian") {
        const NetworkSpec spec = make_spec({2, 3, 2}, Activation::Tanh,
                                           FamilyModel::bernoulli(2));
        const ParamSet params = oracles::random_params(spec, 43);
        const Eigen::VectorXd x = oracles::random_input(2, 23);
        const Eigen::VectorXd t = vec({1.0, 0.0});
        const Eigen::VectorXd g = loglik_grad(spec, params, x, t);
        const Eigen::VectorXd g_fd = oracles::fd_loglik_grad(spec, params, x, t);
        CHECK((g - g_fd).cwiseAbs().maxCoeff() /
                  std::max(1.0, g_fd.cwiseAbs().maxCoeff()) <
              1e-6);
        const Eigen::MatrixXd hs = loglik_hessian(spec, params, x, t);
        const Eigen::MatrixXd hs_fd = oracles::fd_loglik_hessian(spec, params, x, t);
        CHECK(oracles::rel_err(hs, hs_fd) < 1e-5);
        CHECK((hs - hs.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("depth-1: Hessian is -J' I(h) J for every t") {
        const NetworkSpec spec = make_spec({2, 2}, Activation::Identity,
                                           FamilyModel::normal(2));
        const ParamSet params = oracles::random_params(spec, 44);
        const Eigen::VectorXd x = oracles::random_input(2, 29);
        const Eigen::MatrixXd jac = jacobian_hL(spec, params, x);
        const MomentSet mo = moments(spec.family, forward(spec, params, x).h.back());
        const Eigen::MatrixXd want = -(jac.transpose() * mo.fim_head * jac);
        for (std::uint64_t s = 0; s < 3; ++s) {
            const Eigen::VectorXd t = oracles::random_input(2, 100 + s);
            CHECK(oracles::rel_err(loglik_hessian(spec, params, x, t), want) < 1e-13);
        }
    }
    SUBCASE("t = eta gives minus the exact FIM") {
        const NetworkSpec spec = make_spec({2, 3, 1}, Activation::Softplus,
                                           FamilyModel::poisson(1));
        const ParamSet params = oracles::random_params(spec, 45);
        const Eigen::VectorXd x = oracles::random_input(2, 31);
        const MomentSet mo = moments(spec.family, forward(spec, params, x).h.back());
        const Eigen::MatrixXd jac = jacobian_hL(spec, params, x);
        const Eigen::MatrixXd fim = jac.transpose() * mo.fim_head * jac;
        CHECK(oracles::rel_err(loglik_hessian(spec, params, x, mo.eta), -fim) <
              1e-13);
    }
}

TEST_CASE("jacobian norm report") {
    SUBCASE("last layer: exact equalities") {
        const NetworkSpec spec = make_spec({2, 3, 2}, Activation::Tanh,
                                           FamilyModel::normal(2));
        const ParamSet params = oracles::random_params(spec, 51);
        const Eigen::VectorXd x = oracles::random_input(2, 37);
        const ForwardTrace tr = forward(spec, params, x);
        const JacobianNormReport rep = jacobian_norm_report(spec, params, x, 1);
        const double hbar = tr.hbar[1].norm();
        CHECK(rep.lhs_frobenius ==
              doctest::Approx(std::sqrt(2.0) * hbar).epsilon(1e-12));
        CHECK(rep.rhs_frobenius == doctest::Approx(rep.lhs_frobenius).epsilon(1e-12));
        CHECK(rep.lhs_spectral == doctest::Approx(hbar).epsilon(1e-12));
        CHECK(rep.rhs_spectral == doctest::Approx(rep.lhs_spectral).epsilon(1e-12));
    }
    SUBCASE("identity depth 2, layer 0: spectral bound is tight") {
        const NetworkSpec spec = make_spec({2, 3, 2}, Activation::Identity,
                                           FamilyModel::normal(2));
        const ParamSet params = oracles::random_params(spec, 52);
        const Eigen::VectorXd x = oracles::random_input(2, 41);
        const JacobianNormReport rep = jacobian_norm_report(spec, params, x, 0);
        CHECK(rep.lhs_spectral == doctest::Approx(rep.rhs_spectral).epsilon(1e-12));
    }
    SUBCASE("random sigmoid sweep: lhs <= rhs for both norms") {
        const NetworkSpec spec = make_spec({3, 4, 3, 2}, Activation::Sigmoid,
                                           FamilyModel::normal(2));
        for (std::uint64_t seed = 0; seed < 1000; ++seed) {
            const ParamSet params = oracles::random_params(spec, seed);
            const Eigen::VectorXd x = oracles::random_input(3, seed ^ 0x5555);
            for (int l = 0; l < spec.depth(); ++l) {
                const JacobianNormReport rep =
                    jacobian_norm_report(spec, params, x, l);
                CHECK(rep.lhs_frobenius <= rep.rhs_frobenius * (1.0 + 1e-12));
                CHECK(rep.lhs_spectral <= rep.rhs_spectral * (1.0 + 1e-12));
            }
        }
    }
}

TEST_CASE("jacobian and hessian respect subsets") {
    const NetworkSpec spec = make_spec({2, 3, 2}, Activation::Tanh,
                                       FamilyModel::normal(2));
    const ParamSet params = oracles::random_params(spec, 61);
    const Eigen::VectorXd x = oracles::random_input(2, 43);
    const std::vector<int> subset = {0, 5, 9, 12};
    const Eigen::MatrixXd full = jacobian_hL(spec, params, x);
    const Eigen::MatrixXd sub = jacobian_hL(spec, params, x, subset);
    for (std::size_t s = 0; s < subset.size(); ++s)
        CHECK((sub.col(s) - full.col(subset[s])).cwiseAbs().maxCoeff() == 0.0);

    const auto hs = hessian_hL(spec, params, x);
    const auto hsub = hessian_hL(spec, params, x, subset);
    for (int a = 0; a < 2; ++a)
        for (std::size_t i = 0; i < subset.size(); ++i)
            for (std::size_t j = 0; j < subset.size(); ++j)
                CHECK(hsub[a](i, j) ==
                      doctest::Approx(hs[a](subset[i], subset[j])).epsilon(1e-15));

    CHECK_THROWS_AS(jacobian_hL(spec, params, x, {0, 0}), ValidationError);
    CHECK_THROWS_AS(jacobian_hL(spec, params, x, {999}), ValidationError);
}
