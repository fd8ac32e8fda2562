#include "fimlab/numdiff.hpp"

#include <algorithm>
#include <cmath>

#include "fimlab/errors.hpp"

namespace fimlab::numdiff {

namespace {

long double softplus_ld(long double z) {
    return std::max(z, 0.0L) + std::log1p(std::exp(-std::abs(z)));
}

long double logsumexp_ld(const LdVector& h) {
    long double m = h[0];
    for (int i = 1; i < h.size(); ++i) m = std::max(m, h[i]);
    long double s = 0.0L;
    for (int i = 0; i < h.size(); ++i) s += std::exp(h[i] - m);
    return m + std::log(s);
}

LdVector to_ld(const Eigen::VectorXd& h) {
    LdVector v(h.size());
    for (int i = 0; i < h.size(); ++i) v[i] = h[i];
    return v;
}

}  // namespace

long double log_partition_ld(const FamilyModel& family, const LdVector& h) {
    switch (family.kind) {
        case FamilyKind::Bernoulli: {
            long double s = 0.0L;
            for (int i = 0; i < h.size(); ++i) s += softplus_ld(h[i]);
            return s;
        }
        case FamilyKind::Normal: {
            long double s = 0.0L;
            for (int i = 0; i < h.size(); ++i) s += h[i] * h[i];
            return 0.5L * s;
        }
        case FamilyKind::Poisson: {
            long double s = 0.0L;
            for (int i = 0; i < h.size(); ++i) s += std::exp(h[i]);
            return s;
        }
        case FamilyKind::Gaussian2: {
            const long double pi = 3.14159265358979323846264338327950288L;
            return -h[0] * h[0] / (4.0L * h[1]) + 0.5L * std::log(-pi / h[1]);
        }
        case FamilyKind::Categorical:
            return logsumexp_ld(h);
    }
    throw ValidationError("internal", "unreachable");
}

namespace {

// Order-4 central stencil weights for the m-th derivative on the minimal
// symmetric point set: sum_j w_j j^n = m! delta_{nm}. Repeated indices use
// the direct m-th stencil rather than nested first derivatives, which keeps
// the truncation constant small at the pinned steps.
const std::vector<long double>& stencil_weights(int m) {
    static std::vector<std::vector<long double>> cache(5);
    if (m < 1 || m > 4) throw ValidationError("internal", "stencil order");
    if (!cache[m].empty()) return cache[m];
    const int p = (m <= 2) ? 2 : (m == 3 ? 3 : 4);
    const int n = 2 * p + 1;
    Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic> a(n, n);
    Eigen::Matrix<long double, Eigen::Dynamic, 1> rhs =
        Eigen::Matrix<long double, Eigen::Dynamic, 1>::Zero(n);
    for (int row = 0; row < n; ++row)
        for (int col = 0; col < n; ++col) {
            const long double j = static_cast<long double>(col - p);
            a(row, col) = std::pow(j, static_cast<long double>(row));
        }
    long double mfact = 1.0L;
    for (int i = 2; i <= m; ++i) mfact *= i;
    rhs[m] = mfact;
    const Eigen::Matrix<long double, Eigen::Dynamic, 1> w =
        a.fullPivLu().solve(rhs);
    cache[m].assign(w.data(), w.data() + n);
    return cache[m];
}

long double eval_grouped(const LdFn& f, const LdVector& h,
                         const std::vector<std::pair<int, int>>& groups,
                         std::size_t gi, long double step) {
    if (gi == groups.size()) return f(h);
    const auto [coord, order] = groups[gi];
    const std::vector<long double>& w = stencil_weights(order);
    const int p = (static_cast<int>(w.size()) - 1) / 2;
    long double acc = 0.0L;
    for (int j = -p; j <= p; ++j) {
        if (w[j + p] == 0.0L) continue;
        LdVector hs = h;
        hs[coord] += static_cast<long double>(j) * step;
        acc += w[j + p] * eval_grouped(f, hs, groups, gi + 1, step);
    }
    return acc / std::pow(step, static_cast<long double>(order));
}

}  // namespace

long double partial(const LdFn& f, const LdVector& h,
                    const std::vector<int>& idx, long double step) {
    if (idx.empty()) return f(h);
    std::vector<std::pair<int, int>> groups;  // (coordinate, derivative order)
    for (int a : idx) {
        bool found = false;
        for (auto& g : groups)
            if (g.first == a) {
                ++g.second;
                found = true;
            }
        if (!found) groups.emplace_back(a, 1);
    }
    return eval_grouped(f, h, groups, 0, step);
}

long double step_low(const LdVector& h) {
    long double m = 1.0L;
    for (int i = 0; i < h.size(); ++i) m = std::max(m, std::abs(h[i]));
    return 1e-5L * m;
}

long double step_high(const LdVector& h) {
    long double m = 1.0L;
    for (int i = 0; i < h.size(); ++i) m = std::max(m, std::abs(h[i]));
    return 1e-2L * m;
}

Eigen::VectorXd grad_F(const FamilyModel& family, const Eigen::VectorXd& h) {
    const LdVector hl = to_ld(h);
    const LdFn f = [&](const LdVector& v) { return log_partition_ld(family, v); };
    const long double s = step_low(hl);
    Eigen::VectorXd g(h.size());
    for (int a = 0; a < h.size(); ++a) g[a] = static_cast<double>(partial(f, hl, {a}, s));
    return g;
}

Eigen::MatrixXd hess_F(const FamilyModel& family, const Eigen::VectorXd& h) {
    const LdVector hl = to_ld(h);
    const LdFn f = [&](const LdVector& v) { return log_partition_ld(family, v); };
    const long double s = step_low(hl);
    const int n = static_cast<int>(h.size());
    Eigen::MatrixXd m(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b) {
            m(a, b) = static_cast<double>(partial(f, hl, {a, b}, s));
            m(b, a) = m(a, b);
        }
    return m;
}

Tensor3 third_F(const FamilyModel& family, const Eigen::VectorXd& h) {
    const LdVector hl = to_ld(h);
    const LdFn f = [&](const LdVector& v) { return log_partition_ld(family, v); };
    const long double s = step_high(hl);
    const int n = static_cast<int>(h.size());
    Tensor3 t(n);
    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b)
            for (int c = b; c < n; ++c) {
                const double v = static_cast<double>(partial(f, hl, {a, b, c}, s));
                t(a, b, c) = t(a, c, b) = t(b, a, c) = v;
                t(b, c, a) = t(c, a, b) = t(c, b, a) = v;
            }
    return t;
}

Tensor4 fourth_F(const FamilyModel& family, const Eigen::VectorXd& h) {
    const LdVector hl = to_ld(h);
    const LdFn f = [&](const LdVector& v) { return log_partition_ld(family, v); };
    const long double s = step_high(hl);
    const int n = static_cast<int>(h.size());
    Tensor4 t(n);
    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b)
            for (int c = b; c < n; ++c)
                for (int d = c; d < n; ++d) {
                    const double v =
                        static_cast<double>(partial(f, hl, {a, b, c, d}, s));
                    int perm[4] = {a, b, c, d};
                    std::sort(perm, perm + 4);
                    do {
                        t(perm[0], perm[1], perm[2], perm[3]) = v;
                    } while (std::next_permutation(perm, perm + 4));
                }
    return t;
}

}  // namespace fimlab::numdiff
