#include "fimlab/spectrum.hpp"

#include <cmath>

#include "fimlab/errors.hpp"

namespace fimlab {

Eigen::VectorXd hessian_spectral_radii(const std::vector<Eigen::MatrixXd>& hess) {
    Eigen::VectorXd rho(hess.size());
    for (std::size_t a = 0; a < hess.size(); ++a) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess[a],
                                                          Eigen::EigenvaluesOnly);
        const auto& ev = es.eigenvalues();
        rho[a] = std::max(std::abs(ev[0]), std::abs(ev[ev.size() - 1]));
    }
    return rho;
}

std::optional<double> psd_probability_bound(const NetworkSpec& spec,
                                            const ParamSet& params,
                                            const Eigen::VectorXd& x, int n,
                                            const std::vector<int>& subset) {
    if (n < 1) throw ValidationError("invalid_samples", "N must be >= 1");
    const FimMatrix exact = exact_fim(spec, params, x, subset);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(exact.values,
                                                      Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues()[0];
    if (lmin < 1e-12) return std::nullopt;

    const ForwardTrace tr = forward(spec, params, x);
    const MomentSet mo = moments(spec.family, tr.h.back());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eh(mo.fim_head,
                                                      Eigen::EigenvaluesOnly);
    const double head_lmax = eh.eigenvalues()[eh.eigenvalues().size() - 1];

    const Eigen::VectorXd rho =
        hessian_spectral_radii(hessian_hL(spec, params, x, subset));
    const double nl = static_cast<double>(spec.output_dim());
    return 1.0 - nl * rho.squaredNorm() * head_lmax /
                     (static_cast<double>(n) * lmin * lmin);
}

double min_eig_bound(const NetworkSpec& spec, const ParamSet& params,
                     const Eigen::VectorXd& x, const SampleBatch& batch,
                     const std::vector<int>& subset) {
    const ForwardTrace tr = forward(spec, params, x);
    const MomentSet mo = moments(spec.family, tr.h.back());
    const Eigen::VectorXd rho =
        hessian_spectral_radii(hessian_hL(spec, params, x, subset));
    const Eigen::VectorXd residual = mo.eta - batch.mean_t();
    double s = 0.0;
    for (int a = 0; a < residual.size(); ++a) s += rho[a] * std::abs(residual[a]);
    return -s;
}

double min_eig_bound(const NetworkSpec& spec, const ParamSet& params,
                     const Eigen::VectorXd& x, const SampleBatch& batch) {
    return min_eig_bound(spec, params, x, batch, full_subset(params));
}

SpectrumReport spectrum_report(const Eigen::MatrixXd& matrix,
                               const std::vector<Eigen::MatrixXd>* hess) {
    if (matrix.rows() != matrix.cols())
        throw ValidationError("non_symmetric_matrix", "matrix is not square");
    const double asym = (matrix - matrix.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-9)
        throw ValidationError("non_symmetric_matrix",
                              "matrix asymmetry " + std::to_string(asym) +
                                  " exceeds 1e-9");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(matrix);
    SpectrumReport rep;
    rep.eigenvalues = es.eigenvalues();
    rep.lambda_min = rep.eigenvalues[0];
    rep.lambda_max = rep.eigenvalues[rep.eigenvalues.size() - 1];
    rep.is_psd = rep.lambda_min >= -1e-10 * std::max(1.0, std::abs(rep.lambda_max));
    if (hess) rep.rho_per_output = hessian_spectral_radii(*hess);
    return rep;
}

}  // namespace fimlab
