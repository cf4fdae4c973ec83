#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace rapt {

struct SymSolveInfo {
    double min_eig = 0.0;
    double max_eig = 0.0;
    double condition = 0.0;        // max |eig| / min |kept eig|
    bool truncated = false;        // some eigenvalue fell below the cutoff
};

/// Moore-Penrose solve A x = b for symmetric A via eigendecomposition.
/// Eigenvalues with |eig| <= rel_cutoff * max|eig| are dropped; negative
/// eigenvalues above the cutoff are inverted with their sign (the
/// pseudo-inverse of a symmetric indefinite matrix).
inline Eigen::VectorXd pinv_solve_sym(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                      SymSolveInfo* info = nullptr, double rel_cutoff = 1e-12) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    const Eigen::VectorXd& vals = eig.eigenvalues();
    const Eigen::MatrixXd& vecs = eig.eigenvectors();
    const double max_abs = vals.size() ? vals.cwiseAbs().maxCoeff() : 0.0;
    const double cutoff = rel_cutoff * max_abs;

    double min_kept = std::numeric_limits<double>::infinity();
    bool truncated = false;
    Eigen::VectorXd scaled = vecs.transpose() * b;
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (std::abs(vals[i]) <= cutoff) {
            scaled[i] = 0.0;
            truncated = true;
        } else {
            scaled[i] /= vals[i];
            min_kept = std::min(min_kept, std::abs(vals[i]));
        }
    }
    if (info) {
        info->min_eig = vals.size() ? vals.minCoeff() : 0.0;
        info->max_eig = vals.size() ? vals.maxCoeff() : 0.0;
        info->truncated = truncated;
        info->condition = (std::isfinite(min_kept) && min_kept > 0.0)
                              ? max_abs / min_kept
                              : std::numeric_limits<double>::infinity();
    }
    return vecs * scaled;
}

}  // namespace rapt
