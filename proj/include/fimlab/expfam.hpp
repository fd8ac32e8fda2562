#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "fimlab/rng.hpp"
#include "fimlab/tensor.hpp"

namespace fimlab {

enum class FamilyKind {
    Bernoulli,   // factorized, t(y) = y in {0,1}^d
    Normal,      // factorized, unit standard deviation, t(y) = y
    Poisson,     // factorized, t(y) = y in N^d
    Gaussian2,   // univariate Gaussian in natural coordinates, t(y) = (y, y^2)
    Categorical  // log-softmax head, t(y) = one-hot
};

/// An exponential-family output head p(y|h) = exp(t(y)'h - F(h)).
struct FamilyModel {
    FamilyKind kind;
    int dim_h;

    static FamilyModel bernoulli(int dim);
    static FamilyModel normal(int dim);
    static FamilyModel poisson(int dim);
    static FamilyModel gaussian2();  // dim_h = 2 always
    static FamilyModel categorical(int dim);
    static FamilyModel from_name(const std::string& name, int dim);

    int dim_t() const { return dim_h; }
    bool factorized() const {
        return kind == FamilyKind::Bernoulli || kind == FamilyKind::Normal ||
               kind == FamilyKind::Poisson;
    }
    bool finite_support() const {
        return kind == FamilyKind::Bernoulli || kind == FamilyKind::Categorical;
    }
    std::string name() const;
};

/// Mean parameters and cumulant tensors of t(y) at a natural parameter h.
/// fim_head is Cov(t) = grad^2 F; cum3/cum4 are the 3rd/4th cumulants
/// (grad^3 F, grad^4 F); cmom4 is the 4th central moment K, assembled as
/// K_abcd = kappa_abcd + I_ab I_cd + I_ac I_bd + I_ad I_bc.
struct MomentSet {
    Eigen::VectorXd eta;
    Eigen::MatrixXd fim_head;
    Tensor3 cum3;
    Tensor4 cum4;
    Tensor4 cmom4;
};

struct Draw {
    Eigen::VectorXd y;
    Eigen::VectorXd t;
};

struct Outcome {
    double prob;
    Eigen::VectorXd t;
};

/// Log-partition F(h). Throws ValidationError("domain_violation") with the
/// offending coordinate in the message when h is outside the natural domain.
double log_partition(const FamilyModel& family, const Eigen::VectorXd& h);

MomentSet moments(const FamilyModel& family, const Eigen::VectorXd& h);

/// Inverse of eta: natural parameters from mean parameters. Mean parameters
/// are (p), (mu), (lambda), (mu, s), or the probability vector respectively.
Eigen::VectorXd natural_from_mean(const FamilyModel& family,
                                  const Eigen::VectorXd& mean_params);

/// Draw one outcome exactly from p(y|h) and return (y, t(y)).
Draw sample(const FamilyModel& family, const Eigen::VectorXd& h, RngStream& rng);

/// Exhaustive (probability, t) list for finite-support families.
/// Bernoulli supports dim_h <= 20; infinite-support families are rejected.
std::vector<Outcome> enumerate_outcomes(const FamilyModel& family,
                                        const Eigen::VectorXd& h);

}  // namespace fimlab
