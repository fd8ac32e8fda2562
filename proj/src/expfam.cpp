#include "fimlab/expfam.hpp"

#include <cmath>
#include <limits>

#include "fimlab/errors.hpp"

namespace fimlab {

namespace {

void check_dim(int dim) {
    if (dim < 1) throw ValidationError("invalid_dimension", "family dimension must be positive");
}

[[noreturn]] void domain_error(int coordinate, const std::string& what) {
    throw ValidationError("domain_violation",
                          "natural parameter out of domain at coordinate " +
                              std::to_string(coordinate) + ": " + what);
}

void check_finite(const Eigen::VectorXd& h) {
    for (int i = 0; i < h.size(); ++i)
        if (!std::isfinite(h[i])) domain_error(i, "non-finite entry");
}

void check_domain(const FamilyModel& family, const Eigen::VectorXd& h) {
    if (h.size() != family.dim_h)
        throw ValidationError("dimension_mismatch", "natural parameter has wrong dimension");
    check_finite(h);
    if (family.kind == FamilyKind::Gaussian2 && h[1] >= 0.0)
        domain_error(1, "h2 must be negative");
}

double sigmoid(double z) { return 0.5 * (1.0 + std::tanh(0.5 * z)); }

// log(1 + exp(z)) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double logsumexp(const Eigen::VectorXd& h) {
    const double m = h.maxCoeff();
    double s = 0.0;
    for (int i = 0; i < h.size(); ++i) s += std::exp(h[i] - m);
    return m + std::log(s);
}

// Per-coordinate cumulants F'', F''', F'''' of the factorized families.
struct ScalarCumulants {
    double eta, d2, d3, d4;
};

ScalarCumulants scalar_cumulants(FamilyKind kind, double h) {
    switch (kind) {
        case FamilyKind::Bernoulli: {
            const double p = sigmoid(h);
            const double q = p * (1.0 - p);
            return {p, q, q * (1.0 - 2.0 * p), q * (6.0 * p * p - 6.0 * p + 1.0)};
        }
        case FamilyKind::Normal:
            return {h, 1.0, 0.0, 0.0};
        case FamilyKind::Poisson: {
            const double lam = std::exp(h);
            return {lam, lam, lam, lam};
        }
        default:
            throw ValidationError("internal", "scalar_cumulants: not a factorized family");
    }
}

MomentSet gaussian2_moments(const Eigen::VectorXd& h) {
    const double h1 = h[0], h2 = h[1];
    MomentSet m;
    m.eta = Eigen::VectorXd(2);
    m.eta << -h1 / (2.0 * h2), (h1 * h1 - 2.0 * h2) / (4.0 * h2 * h2);

    m.fim_head = Eigen::MatrixXd(2, 2);
    m.fim_head << -1.0 / (2.0 * h2), h1 / (2.0 * h2 * h2),
                  h1 / (2.0 * h2 * h2), -h1 * h1 / (2.0 * h2 * h2 * h2) + 1.0 / (2.0 * h2 * h2);

    const double h2_2 = h2 * h2, h2_3 = h2_2 * h2, h2_4 = h2_2 * h2_2, h2_5 = h2_4 * h2;
    // Third and fourth partials of F(h) = -h1^2/(4 h2) + (1/2) ln(-pi/h2).
    const double d111 = 0.0;
    const double d112 = 1.0 / (2.0 * h2_2);
    const double d122 = -h1 / h2_3;
    const double d222 = 3.0 * h1 * h1 / (2.0 * h2_4) - 1.0 / h2_3;
    const double d1111 = 0.0;
    const double d1112 = 0.0;
    const double d1122 = -1.0 / h2_3;
    const double d1222 = 3.0 * h1 / h2_4;
    const double d2222 = -6.0 * h1 * h1 / h2_5 + 3.0 / h2_4;

    m.cum3 = Tensor3(2);
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) {
                const int ones = a + b + c;
                m.cum3(a, b, c) = (ones == 0) ? d111 : (ones == 1) ? d112
                                  : (ones == 2) ? d122 : d222;
            }
    m.cum4 = Tensor4(2);
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c)
                for (int d = 0; d < 2; ++d) {
                    const int ones = a + b + c + d;
                    m.cum4(a, b, c, d) = (ones == 0) ? d1111 : (ones == 1) ? d1112
                                         : (ones == 2) ? d1122 : (ones == 3) ? d1222 : d2222;
                }
    return m;
}

MomentSet categorical_moments(const Eigen::VectorXd& h) {
    const int n = static_cast<int>(h.size());
    const double lse = logsumexp(h);
    Eigen::VectorXd p(n);
    for (int i = 0; i < n; ++i) p[i] = std::exp(h[i] - lse);

    MomentSet m;
    m.eta = p;
    m.fim_head = Eigen::MatrixXd(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            m.fim_head(a, b) = (a == b ? p[a] : 0.0) - p[a] * p[b];

    // Cumulants of the one-hot statistic, derived by repeated differentiation
    // of log-sum-exp: dp_a/dh_c = p_a (delta_ac - p_c).
    m.cum3 = Tensor3(n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < n; ++c) {
                double v = 0.0;
                if (a == b && b == c) v += p[a];
                if (a == b) v -= p[a] * p[c];
                if (a == c) v -= p[a] * p[b];
                if (b == c) v -= p[a] * p[b];
                v += 2.0 * p[a] * p[b] * p[c];
                m.cum3(a, b, c) = v;
            }
    m.cum4 = Tensor4(n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < n; ++c)
                for (int d = 0; d < n; ++d) {
                    double v = 0.0;
                    if (a == b && b == c && c == d) v += p[a];
                    if (a == b && b == c) v -= p[a] * p[d];
                    if (a == b && b == d) v -= p[a] * p[c];
                    if (a == c && c == d) v -= p[a] * p[b];
                    if (b == c && c == d) v -= p[a] * p[b];
                    if (a == b && c == d) v -= p[a] * p[c];
                    if (a == c && b == d) v -= p[a] * p[b];
                    if (a == d && b == c) v -= p[a] * p[b];
                    if (a == b) v += 2.0 * p[a] * p[c] * p[d];
                    if (a == c) v += 2.0 * p[a] * p[b] * p[d];
                    if (a == d) v += 2.0 * p[a] * p[b] * p[c];
                    if (b == c) v += 2.0 * p[a] * p[b] * p[d];
                    if (b == d) v += 2.0 * p[a] * p[b] * p[c];
                    if (c == d) v += 2.0 * p[a] * p[b] * p[c];
                    v -= 6.0 * p[a] * p[b] * p[c] * p[d];
                    m.cum4(a, b, c, d) = v;
                }
    return m;
}

int sample_poisson(double lambda, RngStream& rng) {
    if (lambda <= 30.0) {
        // Knuth's product method.
        const double limit = std::exp(-lambda);
        int k = 0;
        double prod = rng.next_double_pos();
        while (prod > limit) {
            ++k;
            prod *= rng.next_double_pos();
        }
        return k;
    }
    // PTRS transformed rejection (Hormann), exact for large lambda.
    const double slam = std::sqrt(lambda);
    const double loglam = std::log(lambda);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
        const double u = rng.next_double() - 0.5;
        const double v = rng.next_double_pos();
        const double us = 0.5 - std::abs(u);
        const double kf = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
        if (us >= 0.07 && v <= vr) return static_cast<int>(kf);
        if (kf < 0.0 || (us < 0.013 && v > us)) continue;
        const double k = kf;
        if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
            k * loglam - lambda - std::lgamma(k + 1.0))
            return static_cast<int>(kf);
    }
}

}  // namespace

FamilyModel FamilyModel::bernoulli(int dim) {
    check_dim(dim);
    return {FamilyKind::Bernoulli, dim};
}
FamilyModel FamilyModel::normal(int dim) {
    check_dim(dim);
    return {FamilyKind::Normal, dim};
}
FamilyModel FamilyModel::poisson(int dim) {
    check_dim(dim);
    return {FamilyKind::Poisson, dim};
}
FamilyModel FamilyModel::gaussian2() { return {FamilyKind::Gaussian2, 2}; }
FamilyModel FamilyModel::categorical(int dim) {
    check_dim(dim);
    return {FamilyKind::Categorical, dim};
}

FamilyModel FamilyModel::from_name(const std::string& name, int dim) {
    if (name == "bernoulli") return bernoulli(dim);
    if (name == "normal") return normal(dim);
    if (name == "poisson") return poisson(dim);
    if (name == "gaussian2") {
        if (dim != 2)
            throw ValidationError("invalid_dimension", "gaussian2 requires dim = 2");
        return gaussian2();
    }
    if (name == "categorical") return categorical(dim);
    throw ValidationError("unknown_family", "unknown family: " + name);
}

std::string FamilyModel::name() const {
    switch (kind) {
        case FamilyKind::Bernoulli: return "bernoulli";
        case FamilyKind::Normal: return "normal";
        case FamilyKind::Poisson: return "poisson";
        case FamilyKind::Gaussian2: return "gaussian2";
        case FamilyKind::Categorical: return "categorical";
    }
    return "?";
}

double log_partition(const FamilyModel& family, const Eigen::VectorXd& h) {
    check_domain(family, h);
    switch (family.kind) {
        case FamilyKind::Bernoulli: {
            double s = 0.0;
            for (int i = 0; i < h.size(); ++i) s += softplus(h[i]);
            return s;
        }
        case FamilyKind::Normal:
            return 0.5 * h.squaredNorm();
        case FamilyKind::Poisson: {
            double s = 0.0;
            for (int i = 0; i < h.size(); ++i) s += std::exp(h[i]);
            return s;
        }
        case FamilyKind::Gaussian2:
            return -h[0] * h[0] / (4.0 * h[1]) + 0.5 * std::log(-M_PI / h[1]);
        case FamilyKind::Categorical:
            return logsumexp(h);
    }
    throw ValidationError("internal", "unreachable");
}

MomentSet moments(const FamilyModel& family, const Eigen::VectorXd& h) {
    check_domain(family, h);
    const int n = family.dim_t();
    MomentSet m;
    if (family.factorized()) {
        m.eta = Eigen::VectorXd::Zero(n);
        m.fim_head = Eigen::MatrixXd::Zero(n, n);
        m.cum3 = Tensor3(n);
        m.cum4 = Tensor4(n);
        for (int a = 0; a < n; ++a) {
            const ScalarCumulants c = scalar_cumulants(family.kind, h[a]);
            m.eta[a] = c.eta;
            m.fim_head(a, a) = c.d2;
            m.cum3(a, a, a) = c.d3;
            m.cum4(a, a, a, a) = c.d4;
        }
    } else if (family.kind == FamilyKind::Gaussian2) {
        m = gaussian2_moments(h);
    } else {
        m = categorical_moments(h);
    }
    // 4th central moment from the cumulant identity.
    m.cmom4 = Tensor4(n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < n; ++c)
                for (int d = 0; d < n; ++d)
                    m.cmom4(a, b, c, d) = m.cum4(a, b, c, d) +
                                          m.fim_head(a, b) * m.fim_head(c, d) +
                                          m.fim_head(a, c) * m.fim_head(b, d) +
                                          m.fim_head(a, d) * m.fim_head(b, c);
    return m;
}

Eigen::VectorXd natural_from_mean(const FamilyModel& family,
                                  const Eigen::VectorXd& mean_params) {
    const auto reject = [](int i, const std::string& what) {
        throw ValidationError("range_violation",
                              "mean parameter out of range at coordinate " +
                                  std::to_string(i) + ": " + what);
    };
    switch (family.kind) {
        case FamilyKind::Bernoulli: {
            if (mean_params.size() != family.dim_h)
                throw ValidationError("dimension_mismatch", "mean parameter dimension");
            Eigen::VectorXd h(mean_params.size());
            for (int i = 0; i < h.size(); ++i) {
                const double p = mean_params[i];
                if (!(p > 0.0 && p < 1.0)) reject(i, "p must be in (0,1)");
                h[i] = std::log(p / (1.0 - p));
            }
            return h;
        }
        case FamilyKind::Normal:
            if (mean_params.size() != family.dim_h)
                throw ValidationError("dimension_mismatch", "mean parameter dimension");
            return mean_params;
        case FamilyKind::Poisson: {
            if (mean_params.size() != family.dim_h)
                throw ValidationError("dimension_mismatch", "mean parameter dimension");
            Eigen::VectorXd h(mean_params.size());
            for (int i = 0; i < h.size(); ++i) {
                if (!(mean_params[i] > 0.0)) reject(i, "lambda must be positive");
                h[i] = std::log(mean_params[i]);
            }
            return h;
        }
        case FamilyKind::Gaussian2: {
            if (mean_params.size() != 2)
                throw ValidationError("dimension_mismatch", "gaussian2 takes (mu, s)");
            const double mu = mean_params[0], s = mean_params[1];
            if (!(s > 0.0)) reject(1, "s must be positive");
            Eigen::VectorXd h(2);
            h << mu / (s * s), -1.0 / (2.0 * s * s);
            return h;
        }
        case FamilyKind::Categorical: {
            if (mean_params.size() != family.dim_h)
                throw ValidationError("dimension_mismatch", "mean parameter dimension");
            double sum = 0.0;
            for (int i = 0; i < mean_params.size(); ++i) {
                if (!(mean_params[i] > 0.0)) reject(i, "probabilities must be positive");
                sum += mean_params[i];
            }
            if (std::abs(sum - 1.0) > 1e-9) reject(0, "probabilities must sum to 1");
            Eigen::VectorXd h(mean_params.size());
            for (int i = 0; i < h.size(); ++i) h[i] = std::log(mean_params[i]);
            return h;
        }
    }
    throw ValidationError("internal", "unreachable");
}

Draw sample(const FamilyModel& family, const Eigen::VectorXd& h, RngStream& rng) {
    check_domain(family, h);
    Draw d;
    switch (family.kind) {
        case FamilyKind::Bernoulli: {
            d.y = Eigen::VectorXd(h.size());
            for (int i = 0; i < h.size(); ++i)
                d.y[i] = (rng.next_double() < sigmoid(h[i])) ? 1.0 : 0.0;
            d.t = d.y;
            return d;
        }
        case FamilyKind::Normal: {
            d.y = Eigen::VectorXd(h.size());
            for (int i = 0; i < h.size(); ++i) d.y[i] = h[i] + rng.next_normal();
            d.t = d.y;
            return d;
        }
        case FamilyKind::Poisson: {
            d.y = Eigen::VectorXd(h.size());
            for (int i = 0; i < h.size(); ++i)
                d.y[i] = static_cast<double>(sample_poisson(std::exp(h[i]), rng));
            d.t = d.y;
            return d;
        }
        case FamilyKind::Gaussian2: {
            const double s2 = -1.0 / (2.0 * h[1]);
            const double mu = h[0] * s2;
            const double y = mu + std::sqrt(s2) * rng.next_normal();
            d.y = Eigen::VectorXd::Constant(1, y);
            d.t = Eigen::VectorXd(2);
            d.t << y, y * y;
            return d;
        }
        case FamilyKind::Categorical: {
            const int n = family.dim_h;
            const double lse = logsumexp(h);
            const double u = rng.next_double();
            double acc = 0.0;
            int pick = n - 1;
            for (int i = 0; i < n; ++i) {
                acc += std::exp(h[i] - lse);
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
            d.y = Eigen::VectorXd::Constant(1, static_cast<double>(pick));
            d.t = Eigen::VectorXd::Zero(n);
            d.t[pick] = 1.0;
            return d;
        }
    }
    throw ValidationError("internal", "unreachable");
}

std::vector<Outcome> enumerate_outcomes(const FamilyModel& family,
                                        const Eigen::VectorXd& h) {
    check_domain(family, h);
    if (!family.finite_support())
        throw ValidationError("unsupported_family",
                              "enumerate_outcomes requires a finite-support family");
    std::vector<Outcome> out;
    if (family.kind == FamilyKind::Categorical) {
        const int n = family.dim_h;
        const double lse = logsumexp(h);
        out.reserve(n);
        for (int i = 0; i < n; ++i) {
            Outcome o;
            o.prob = std::exp(h[i] - lse);
            o.t = Eigen::VectorXd::Zero(n);
            o.t[i] = 1.0;
            out.push_back(std::move(o));
        }
        return out;
    }
    const int n = family.dim_h;
    if (n > 20)
        throw ValidationError("cap_exceeded",
                              "bernoulli enumeration supports dim_h <= 20");
    Eigen::VectorXd p(n);
    for (int i = 0; i < n; ++i) p[i] = sigmoid(h[i]);
    const std::uint64_t count = 1ULL << n;
    out.reserve(count);
    for (std::uint64_t mask = 0; mask < count; ++mask) {
        Outcome o;
        o.prob = 1.0;
        o.t = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) {
            if (mask & (1ULL << i)) {
                o.t[i] = 1.0;
                o.prob *= p[i];
            } else {
                o.prob *= 1.0 - p[i];
            }
        }
        out.push_back(std::move(o));
    }
    return out;
}

}  // namespace fimlab
