#include "fimlab/variance.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fimlab/errors.hpp"

namespace fimlab {

namespace {

void check_cov_cap(int ps, int cov_cap) {
    if (ps > cov_cap)
        throw ValidationError(
            "cap_exceeded", "subset size " + std::to_string(ps) +
                                " exceeds the 4D tensor cap " + std::to_string(cov_cap) +
                                "; use the element-wise variance or norm bounds");
}

void check_n(int n) {
    if (n < 1) throw ValidationError("invalid_samples", "N must be >= 1");
}

// T'_{ijkl} = sum_abcd G_ai G_bj G_ck G_dl T_abcd, contracting one index per
// stage and rotating it to the back, so the final axis order is (i,j,k,l).
Tensor4 contract4(const Tensor4& t, const Eigen::MatrixXd& g) {
    const int n = t.dim();
    const int m = static_cast<int>(g.cols());
    std::vector<double> cur(t.data());
    for (int stage = 0; stage < 4; ++stage) {
        // cur shape: [n] x rest, with rest = n^(3-stage) * m^stage.
        const std::size_t rest = cur.size() / static_cast<std::size_t>(n);
        std::vector<double> next(rest * static_cast<std::size_t>(m), 0.0);
        for (int a = 0; a < n; ++a) {
            const std::size_t abase = static_cast<std::size_t>(a) * rest;
            for (std::size_t q = 0; q < rest; ++q) {
                const double v = cur[abase + q];
                if (v == 0.0) continue;
                for (int i = 0; i < m; ++i) next[q * m + i] += g(a, i) * v;
            }
        }
        cur = std::move(next);
    }
    Tensor4 out(m);
    out.data() = std::move(cur);
    return out;
}

}  // namespace

std::string estimator_name(EstimatorId id) {
    switch (id) {
        case EstimatorId::One: return "estimator1";
        case EstimatorId::Two: return "estimator2";
        case EstimatorId::Combined: return "combined";
    }
    return "?";
}

std::string bound_kind_name(BoundKind k) {
    switch (k) {
        case BoundKind::Frobenius1: return "frobenius1";
        case BoundKind::Frobenius2: return "frobenius2";
        case BoundKind::Elementwise1: return "elementwise1";
        case BoundKind::Elementwise2: return "elementwise2";
        case BoundKind::Linf1: return "linf1";
        case BoundKind::Linf2: return "linf2";
        case BoundKind::MomentK: return "moment_k";
        case BoundKind::MomentI: return "moment_i";
    }
    return "?";
}

Tensor4 head_cov_tensor(const MomentSet& moments) {
    const int d = static_cast<int>(moments.eta.size());
    Tensor4 w(d);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            for (int c = 0; c < d; ++c)
                for (int e = 0; e < d; ++e)
                    w(a, b, c, e) = moments.cmom4(a, b, c, e) -
                                    moments.fim_head(a, b) * moments.fim_head(c, e);
    return w;
}

CovTensor cov_estimator1(const Eigen::MatrixXd& jac, const MomentSet& moments,
                         int n, int cov_cap) {
    check_n(n);
    const int ps = static_cast<int>(jac.cols());
    check_cov_cap(ps, cov_cap);
    const Tensor4 w = head_cov_tensor(moments);
    // J is n_L x P_s; contract with columns: G(a, i) = J(a, i).
    Tensor4 t = contract4(w, jac);
    // One exact division so the tensor at N is bit-comparable to the tensor
    // at 1 after dividing by N.
    for (double& v : t.data()) v /= static_cast<double>(n);
    CovTensor out;
    out.values = std::move(t);
    out.N = n;
    out.estimator = EstimatorId::One;
    return out;
}

CovTensor cov_estimator2(const std::vector<Eigen::MatrixXd>& hess,
                         const MomentSet& moments, int n, int cov_cap) {
    check_n(n);
    const int d = static_cast<int>(hess.size());
    const int ps = d > 0 ? static_cast<int>(hess[0].rows()) : 0;
    check_cov_cap(ps, cov_cap);
    // G^b = sum_a I_ab H^a, then T_{ijkl} = sum_b G^b_ij H^b_kl.
    std::vector<Eigen::MatrixXd> g(d, Eigen::MatrixXd::Zero(ps, ps));
    for (int b = 0; b < d; ++b)
        for (int a = 0; a < d; ++a)
            if (moments.fim_head(a, b) != 0.0) g[b] += moments.fim_head(a, b) * hess[a];
    Tensor4 t(ps);
    for (int i = 0; i < ps; ++i)
        for (int j = 0; j < ps; ++j)
            for (int k = 0; k < ps; ++k)
                for (int l = 0; l < ps; ++l) {
                    double s = 0.0;
                    for (int b = 0; b < d; ++b) s += g[b](i, j) * hess[b](k, l);
                    t(i, j, k, l) = s;
                }
    for (double& v : t.data()) v /= static_cast<double>(n);
    CovTensor out;
    out.values = std::move(t);
    out.N = n;
    out.estimator = EstimatorId::Two;
    return out;
}

VarMatrix var_matrix(const CovTensor& cov) {
    const int ps = cov.values.dim();
    VarMatrix v;
    v.N = cov.N;
    v.estimator = cov.estimator;
    v.values.resize(ps, ps);
    for (int i = 0; i < ps; ++i)
        for (int j = 0; j < ps; ++j) v.values(i, j) = cov.values(i, j, i, j);
    return v;
}

VarMatrix var_estimator1_direct(const Eigen::MatrixXd& jac,
                                const MomentSet& moments, int n) {
    check_n(n);
    const int ps = static_cast<int>(jac.cols());
    const int d = static_cast<int>(jac.rows());
    const Tensor4 w = head_cov_tensor(moments);
    VarMatrix v;
    v.N = n;
    v.estimator = EstimatorId::One;
    v.values.resize(ps, ps);
    for (int i = 0; i < ps; ++i)
        for (int j = 0; j < ps; ++j) {
            double s = 0.0;
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b)
                    for (int c = 0; c < d; ++c)
                        for (int e = 0; e < d; ++e)
                            s += jac(a, i) * jac(b, j) * jac(c, i) * jac(e, j) *
                                 w(a, b, c, e);
            v.values(i, j) = s / static_cast<double>(n);
        }
    return v;
}

VarMatrix var_estimator2_direct(const std::vector<Eigen::MatrixXd>& hess,
                                const MomentSet& moments, int n) {
    check_n(n);
    const int d = static_cast<int>(hess.size());
    const int ps = d > 0 ? static_cast<int>(hess[0].rows()) : 0;
    VarMatrix v;
    v.N = n;
    v.estimator = EstimatorId::Two;
    v.values.resize(ps, ps);
    for (int i = 0; i < ps; ++i)
        for (int j = 0; j < ps; ++j) {
            double s = 0.0;
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b)
                    s += hess[a](i, j) * hess[b](i, j) * moments.fim_head(a, b);
            v.values(i, j) = s / static_cast<double>(n);
        }
    return v;
}

CovTensor cov_combined(double alpha, const Eigen::MatrixXd& jac,
                       const std::vector<Eigen::MatrixXd>& hess,
                       const MomentSet& moments, int n, int cov_cap) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ValidationError("alpha_out_of_range", "alpha must be in [0, 1]");
    check_n(n);
    if (alpha == 1.0) {
        CovTensor t = cov_estimator1(jac, moments, n, cov_cap);
        t.estimator = EstimatorId::Combined;
        t.alpha = alpha;
        return t;
    }
    if (alpha == 0.0) {
        CovTensor t = cov_estimator2(hess, moments, n, cov_cap);
        t.estimator = EstimatorId::Combined;
        t.alpha = alpha;
        return t;
    }
    const int ps = static_cast<int>(jac.cols());
    const int d = static_cast<int>(jac.rows());
    check_cov_cap(ps, cov_cap);
    const CovTensor t1 = cov_estimator1(jac, moments, n, cov_cap);
    const CovTensor t2 = cov_estimator2(hess, moments, n, cov_cap);

    // Cross term: Cov(I1^{ij}, I2^{kl}) = -(1/N) J_i^a J_j^b H^c_kl cum3_abc.
    // M^c = J' cum3(:,:,c) J.
    std::vector<Eigen::MatrixXd> mc(d);
    for (int c = 0; c < d; ++c) {
        Eigen::MatrixXd slice(d, d);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) slice(a, b) = moments.cum3(a, b, c);
        mc[c] = jac.transpose() * slice * jac;
    }
    Tensor4 out(ps);
    const double a2 = alpha * alpha;
    const double b2 = (1.0 - alpha) * (1.0 - alpha);
    const double ab = alpha * (1.0 - alpha);
    for (int i = 0; i < ps; ++i)
        for (int j = 0; j < ps; ++j)
            for (int k = 0; k < ps; ++k)
                for (int l = 0; l < ps; ++l) {
                    double cross = 0.0;
                    for (int c = 0; c < d; ++c)
                        cross += mc[c](i, j) * hess[c](k, l) + mc[c](k, l) * hess[c](i, j);
                    out(i, j, k, l) = a2 * t1.values(i, j, k, l) +
                                      b2 * t2.values(i, j, k, l) -
                                      ab * cross / static_cast<double>(n);
                }
    CovTensor cov;
    cov.values = std::move(out);
    cov.N = n;
    cov.estimator = EstimatorId::Combined;
    cov.alpha = alpha;
    cov.offdiag_symmetrized = true;
    return cov;
}

CovTensor cov_reparam(const CovTensor& cov, const Reparam& reparam,
                      const Eigen::VectorXd& theta_subset,
                      const Eigen::MatrixXd& jac,
                      const std::vector<Eigen::MatrixXd>& hess,
                      const MomentSet& moments, int n) {
    check_n(n);
    const int ps = cov.values.dim();
    const Eigen::MatrixXd g = reparam.dtheta_dxi(theta_subset);
    CovTensor out = cov;
    out.values = contract4(cov.values, g);
    if (cov.estimator != EstimatorId::Two) return out;

    const std::vector<Eigen::MatrixXd> s2 = reparam.d2theta_dxi2(theta_subset);
    const int d = static_cast<int>(jac.rows());
    // M^a = G' H^a G (Hessian part contracted twice with dtheta/dxi);
    // q^a_ij = sum_c S^c_ij J_ac (Jacobian against the map curvature).
    std::vector<Eigen::MatrixXd> m(d), q(d, Eigen::MatrixXd::Zero(ps, ps));
    for (int a = 0; a < d; ++a) {
        m[a] = g.transpose() * hess[a] * g;
        for (int c = 0; c < ps; ++c)
            if (jac(a, c) != 0.0) q[a] += jac(a, c) * s2[c];
    }
    for (int i = 0; i < ps; ++i)
        for (int j = 0; j < ps; ++j)
            for (int k = 0; k < ps; ++k)
                for (int l = 0; l < ps; ++l) {
                    double corr = 0.0;
                    for (int a = 0; a < d; ++a)
                        for (int b = 0; b < d; ++b)
                            corr += moments.fim_head(a, b) *
                                    (m[a](i, j) * q[b](k, l) + q[a](i, j) * m[b](k, l) +
                                     q[a](i, j) * q[b](k, l));
                    out.values(i, j, k, l) += corr / static_cast<double>(n);
                }
    return out;
}

namespace {

double jac_col_norm(const Eigen::MatrixXd& jac, int i) { return jac.col(i).norm(); }

double hess_pair_norm(const std::vector<Eigen::MatrixXd>& hess, int i, int j) {
    double s = 0.0;
    for (const auto& h : hess) s += h(i, j) * h(i, j);
    return std::sqrt(s);
}

double hess_frobenius(const std::vector<Eigen::MatrixXd>& hess) {
    double s = 0.0;
    for (const auto& h : hess) s += h.squaredNorm();
    return std::sqrt(s);
}

double hess_max_abs(const std::vector<Eigen::MatrixXd>& hess) {
    double m = 0.0;
    for (const auto& h : hess) m = std::max(m, h.cwiseAbs().maxCoeff());
    return m;
}

}  // namespace

BoundReport bound_frobenius(EstimatorId which, const Eigen::MatrixXd& jac,
                            const std::vector<Eigen::MatrixXd>& hess,
                            const MomentSet& moments, int n) {
    check_n(n);
    BoundReport r;
    if (which == EstimatorId::One) {
        r.kind = BoundKind::Frobenius1;
        r.lhs = cov_estimator1(jac, moments, n).values.frobenius();
        const double jf = jac.norm();
        r.rhs = head_cov_tensor(moments).frobenius() * jf * jf * jf * jf /
                static_cast<double>(n);
    } else {
        r.kind = BoundKind::Frobenius2;
        r.lhs = cov_estimator2(hess, moments, n).values.frobenius();
        const double hf = hess_frobenius(hess);
        r.rhs = moments.fim_head.norm() * hf * hf / static_cast<double>(n);
    }
    return r;
}

BoundReport bound_elementwise(EstimatorId which, int i, int j, int k, int l,
                              const Eigen::MatrixXd& jac,
                              const std::vector<Eigen::MatrixXd>& hess,
                              const MomentSet& moments, int n) {
    check_n(n);
    BoundReport r;
    const int d = static_cast<int>(moments.eta.size());
    if (which == EstimatorId::One) {
        r.kind = BoundKind::Elementwise1;
        const Tensor4 w = head_cov_tensor(moments);
        double entry = 0.0;
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                for (int c = 0; c < d; ++c)
                    for (int e = 0; e < d; ++e)
                        entry += jac(a, i) * jac(b, j) * jac(c, k) * jac(e, l) *
                                 w(a, b, c, e);
        r.lhs = std::abs(entry) / static_cast<double>(n);
        r.rhs = jac_col_norm(jac, i) * jac_col_norm(jac, j) * jac_col_norm(jac, k) *
                jac_col_norm(jac, l) * w.frobenius() / static_cast<double>(n);
    } else {
        r.kind = BoundKind::Elementwise2;
        double entry = 0.0;
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                entry += hess[a](i, j) * hess[b](k, l) * moments.fim_head(a, b);
        r.lhs = std::abs(entry) / static_cast<double>(n);
        r.rhs = hess_pair_norm(hess, i, j) * hess_pair_norm(hess, k, l) *
                moments.fim_head.norm() / static_cast<double>(n);
    }
    return r;
}

BoundReport bound_linf(EstimatorId which, const Eigen::MatrixXd& jac,
                       const std::vector<Eigen::MatrixXd>& hess,
                       const MomentSet& moments, int n) {
    check_n(n);
    BoundReport r;
    if (which == EstimatorId::One) {
        r.kind = BoundKind::Linf1;
        r.lhs = cov_estimator1(jac, moments, n).values.max_abs();
        const double jm = jac.cwiseAbs().maxCoeff();
        r.rhs = head_cov_tensor(moments).l1() * jm * jm * jm * jm /
                static_cast<double>(n);
    } else {
        r.kind = BoundKind::Linf2;
        r.lhs = cov_estimator2(hess, moments, n).values.max_abs();
        const double hm = hess_max_abs(hess);
        r.rhs = moments.fim_head.cwiseAbs().sum() * hm * hm / static_cast<double>(n);
    }
    return r;
}

std::pair<BoundReport, BoundReport> bound_moments(const MomentSet& moments) {
    const int d = static_cast<int>(moments.eta.size());
    double s = 0.0, tr = 0.0;
    for (int a = 0; a < d; ++a) {
        s += std::sqrt(std::max(0.0, moments.cmom4(a, a, a, a))) + moments.fim_head(a, a);
        tr += moments.fim_head(a, a);
    }
    BoundReport k;
    k.kind = BoundKind::MomentK;
    k.lhs = head_cov_tensor(moments).frobenius();
    k.rhs = std::sqrt(2.0) * s * s;
    BoundReport i;
    i.kind = BoundKind::MomentI;
    i.lhs = moments.fim_head.norm();
    i.rhs = tr;
    return {k, i};
}

double chebyshev_radius(const VarMatrix& var, double eps) {
    if (!(eps > 0.0 && eps < 1.0))
        throw ValidationError("eps_out_of_range", "eps must be in (0, 1)");
    const double single_sum = var.values.sum() * static_cast<double>(var.N);
    return std::sqrt(single_sum / (eps * static_cast<double>(var.N)));
}

void write_cov_csv(const CovTensor& cov, const std::string& path) {
    const std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw ValidationError("io_error", "cannot open " + tmp);
    std::fprintf(f, "i,j,k,l,value\r\n");
    const int ps = cov.values.dim();
    for (int i = 0; i < ps; ++i)
        for (int j = 0; j < ps; ++j)
            for (int k = 0; k < ps; ++k)
                for (int l = 0; l < ps; ++l)
                    std::fprintf(f, "%d,%d,%d,%d,%.17g\r\n", i, j, k, l,
                                 cov.values(i, j, k, l));
    std::fclose(f);
    std::filesystem::rename(tmp, path);
}

void write_cov_binary(const CovTensor& cov, const std::string& path) {
    const std::string tmp = path + ".tmp";
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw ValidationError("io_error", "cannot open " + tmp);
    const char magic[8] = {'F', 'I', 'M', 'C', 'O', 'V', '0', '1'};
    f.write(magic, 8);
    const std::uint64_t ps = cov.values.dim();
    const std::uint64_t n = cov.N;
    f.write(reinterpret_cast<const char*>(&ps), 8);
    f.write(reinterpret_cast<const char*>(&n), 8);
    for (int idx : cov.subset) {
        const std::uint64_t v = static_cast<std::uint64_t>(idx);
        f.write(reinterpret_cast<const char*>(&v), 8);
    }
    f.write(reinterpret_cast<const char*>(cov.values.data().data()),
            static_cast<std::streamsize>(cov.values.data().size() * sizeof(double)));
    f.close();
    std::filesystem::rename(tmp, path);
}

CovTensor read_cov_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("io_error", "cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (std::memcmp(magic, "FIMCOV01", 8) != 0)
        throw ValidationError("bad_magic", "not a FIMCOV01 file: " + path);
    std::uint64_t ps = 0, n = 0;
    f.read(reinterpret_cast<char*>(&ps), 8);
    f.read(reinterpret_cast<char*>(&n), 8);
    CovTensor cov;
    cov.N = static_cast<int>(n);
    cov.subset.resize(ps);
    for (std::uint64_t i = 0; i < ps; ++i) {
        std::uint64_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 8);
        cov.subset[i] = static_cast<int>(v);
    }
    cov.values = Tensor4(static_cast<int>(ps));
    f.read(reinterpret_cast<char*>(cov.values.data().data()),
           static_cast<std::streamsize>(cov.values.data().size() * sizeof(double)));
    if (!f) throw ValidationError("io_error", "truncated FIMCOV01 file: " + path);
    return cov;
}

}  // namespace fimlab
