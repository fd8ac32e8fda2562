#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "fimlab/expfam.hpp"
#include "fimlab/tensor.hpp"

namespace fimlab::numdiff {

// Generic numeric-differentiation fallback for the cumulants of any family.
// Order-4 central stencils on the log-partition, evaluated in extended
// precision so that the stencil cancellation stays far below the comparison
// tolerances. Production paths never call this; it backs the test oracles.

using LdVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
using LdFn = std::function<long double(const LdVector&)>;

/// Log-partition of `family` evaluated in long double.
long double log_partition_ld(const FamilyModel& family, const LdVector& h);

/// Mixed partial d^k F / dh_{idx[0]} ... dh_{idx[k-1]} by order-4 central
/// stencils with the given step; repeated indices use the direct stencil of
/// the matching derivative order.
long double partial(const LdFn& f, const LdVector& h,
                    const std::vector<int>& idx, long double step);

/// Steps pinned for the fallback: 1e-5 for 1st/2nd derivatives,
/// 1e-2 for 3rd/4th, each scaled by max(1, |h|_inf).
long double step_low(const LdVector& h);
long double step_high(const LdVector& h);

Eigen::VectorXd grad_F(const FamilyModel& family, const Eigen::VectorXd& h);
Eigen::MatrixXd hess_F(const FamilyModel& family, const Eigen::VectorXd& h);
Tensor3 third_F(const FamilyModel& family, const Eigen::VectorXd& h);
Tensor4 fourth_F(const FamilyModel& family, const Eigen::VectorXd& h);

}  // namespace fimlab::numdiff
