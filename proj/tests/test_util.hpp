// Shared generators and oracles for the test suites.
#pragma once

#include <Eigen/Dense>

#include "statarb/filters.hpp"
#include "statarb/random.hpp"

namespace statarb::testing {

using filters::Index;
using filters::Matrix;
using filters::Vector;

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double sd = 1.0) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
    return m;
}

inline Vector random_vector(Rng& rng, Index n, double sd = 1.0) { return random_matrix(rng, n, 1, sd).col(0); }

/// Symmetric positive definite with eigenvalues bounded away from zero.
inline Matrix random_spd(Rng& rng, Index n, double ridge = 0.1) {
    const Matrix a = random_matrix(rng, n, n);
    return a * a.transpose() / static_cast<double>(n) + ridge * Matrix::Identity(n, n);
}

/// Random matrix rescaled to the given spectral radius.
inline Matrix random_stable(Rng& rng, Index n, double radius = 0.9) {
    const Matrix a = random_matrix(rng, n, n);
    const double rho = a.eigenvalues().cwiseAbs().maxCoeff();
    return a * (radius / rho);
}

inline Matrix random_orthogonal(Rng& rng, Index n) {
    Eigen::HouseholderQR<Matrix> qr(random_matrix(rng, n, n));
    return qr.householderQ() * Matrix::Identity(n, n);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline bool symmetric(const Matrix& m, double tol = 1e-10) { return max_abs_diff(m, m.transpose()) <= tol; }

/// Conditional Gaussian: given the joint of (x, y) with means (mx, my) and
/// blocks (Cxx, Cxy, Cyy), returns x | y.
inline filters::GaussianBelief condition_gaussian(const Vector& mx, const Vector& my, const Matrix& cxx,
                                                  const Matrix& cxy, const Matrix& cyy, const Vector& y) {
    Eigen::LDLT<Matrix> ldlt(cyy);
    filters::GaussianBelief out;
    out.mean = mx + cxy * ldlt.solve(y - my);
    out.cov = cxx - cxy * ldlt.solve(cxy.transpose());
    return out;
}

}  // namespace statarb::testing
