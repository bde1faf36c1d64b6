#pragma once
// Eigen aliases and the cosine-geometry helpers shared by clustering,
// assignment, and item matching. All embedding math goes through here.

#include <Eigen/Dense>

namespace convrec {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;  // rows are observations / centroids

template <typename Derived>
Vector l2_normalized(const Eigen::MatrixBase<Derived>& v) {
    const double n = v.norm();
    if (n == 0.0) return v.derived();
    return v.derived() / n;
}

// Zero-norm inputs are treated as similarity 0 (maximally non-aligned for
// our ranking purposes) rather than NaN.
template <typename D1, typename D2>
double cosine_similarity(const Eigen::MatrixBase<D1>& a, const Eigen::MatrixBase<D2>& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.derived().dot(b.derived()) / (na * nb);
}

template <typename D1, typename D2>
double cosine_distance(const Eigen::MatrixBase<D1>& a, const Eigen::MatrixBase<D2>& b) {
    return 1.0 - cosine_similarity(a, b);
}

// Index of the unit row closest to x by cosine distance; ties go to the
// lowest index. rows and x are expected unit-norm.
template <typename Derived>
int nearest_unit_row(const Matrix& rows, const Eigen::MatrixBase<Derived>& x,
                     double* distance_out = nullptr) {
    int best = 0;
    double best_dot = rows.row(0).dot(x.derived().transpose());
    for (int i = 1; i < rows.rows(); ++i) {
        const double d = rows.row(i).dot(x.derived().transpose());
        if (d > best_dot) {
            best_dot = d;
            best = i;
        }
    }
    if (distance_out != nullptr) *distance_out = 1.0 - best_dot;
    return best;
}

}  // namespace convrec
