#ifndef NGD_ORACLES_HPP
#define NGD_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>

#include "ngd/linalg.hpp"
#include "ngd/reference.hpp"

// Brute-force verification machinery. Everything here is deliberately naive
// and size-guarded, and stays independent of the CG / power-iteration code
// paths that it checks.

namespace ngd::oracle {

inline Vec finite_difference_gradient(const std::function<double(const Vec&)>& cost, const Vec& x,
                                      double h = 1e-5) {
    if (h <= 0.0) throw std::invalid_argument("finite_difference_gradient: h <= 0");
    Vec g(x.size());
    Vec xp = x, xm = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        xm[i] = x[i] - h;
        const double fp = cost(xp), fm = cost(xm);
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_difference_gradient: non-finite evaluation");
        g[i] = (fp - fm) / (2.0 * h);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    return g;
}

// Columns of the Jacobian of a reference map, via jvp on basis vectors.
inline Mat dense_jacobian(const ReferenceMap& map, const Vec& x) {
    Mat J(map.dim_y, map.dim_x);
    Vec e(map.dim_x, 0.0);
    for (std::size_t j = 0; j < map.dim_x; ++j) {
        e[j] = 1.0;
        Vec col = map.jvp(x, e);
        for (std::size_t i = 0; i < map.dim_y; ++i) J(i, j) = col[i];
        e[j] = 0.0;
    }
    return J;
}

inline Mat dense_operator(const std::function<Vec(const Vec&)>& apply, std::size_t dim) {
    Mat A(dim, dim);
    Vec e(dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) {
        e[j] = 1.0;
        Vec col = apply(e);
        for (std::size_t i = 0; i < dim; ++i) A(i, j) = col[i];
        e[j] = 0.0;
    }
    return A;
}

// J^T G_Y J assembled literally.
inline Mat assemble_dense_metric(const ReferenceMap& map, const ReferenceMetric& ref_metric,
                                 const Vec& x) {
    if (map.dim_x > 200) throw std::invalid_argument("assemble_dense_metric: dim_x guard exceeded");
    Mat J = dense_jacobian(map, x);
    Vec y = map.eval(x);
    Mat GY = dense_operator([&](const Vec& u) { return ref_metric.apply(y, u); }, map.dim_y);
    return matmul(transpose(J), matmul(GY, J));
}

struct EigenDecomposition {
    Vec eigenvalues;   // ascending
    Mat eigenvectors;  // columns, same order
};

// Cyclic Jacobi rotations on a symmetric matrix.
inline EigenDecomposition dense_symmetric_eigensolve(Mat A) {
    const std::size_t n = A.rows;
    if (A.cols != n) throw std::invalid_argument("eigensolve: not square");
    if (n > 2000) throw std::invalid_argument("eigensolve: size guard exceeded");
    double asym = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            asym = std::max(asym, std::abs(A(i, j) - A(j, i)));
            scale = std::max(scale, std::abs(A(i, j)));
        }
    if (asym > 1e-12 * std::max(scale, 1.0))
        throw std::invalid_argument("eigensolve: matrix not symmetric");

    Mat V(n, n);
    for (std::size_t i = 0; i < n; ++i) V(i, i) = 1.0;

    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) norm += A(i, j) * A(i, j);
    norm = std::sqrt(norm);
    const double target = 1e-12 * std::max(norm, 1e-300);

    const std::size_t max_sweeps = 100;
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += 2.0 * A(i, j) * A(i, j);
        if (std::sqrt(off) <= target) break;
        if (sweep + 1 == max_sweeps)
            throw std::runtime_error("eigensolve: Jacobi sweep cap exceeded");

        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return A(a, a) < A(b, b); });

    EigenDecomposition out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Mat(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = A(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, j) = V(i, order[j]);
    }
    return out;
}

// Moore-Penrose pseudo-inverse of a symmetric matrix via the Jacobi solver.
inline Mat symmetric_pinv(const Mat& A, double cutoff_rel = 1e-12) {
    EigenDecomposition eig = dense_symmetric_eigensolve(A);
    double smax = 0.0;
    for (double l : eig.eigenvalues) smax = std::max(smax, std::abs(l));
    Mat P(A.rows, A.cols);
    for (std::size_t k = 0; k < eig.eigenvalues.size(); ++k) {
        const double l = eig.eigenvalues[k];
        if (std::abs(l) <= cutoff_rel * smax) continue;
        for (std::size_t i = 0; i < A.rows; ++i)
            for (std::size_t j = 0; j < A.cols; ++j)
                P(i, j) += eig.eigenvectors(i, k) * eig.eigenvectors(j, k) / l;
    }
    return P;
}

inline Vec solve_spd(const Mat& A, const Vec& b) { return matvec(symmetric_pinv(A), b); }

// Appendix-style identity: the pushed-forward natural direction dy = J dx
// must be collinear (up to positive scale) with -P dy~, where
// dy~ = G_Y^{-1} grad_y and P is the G_Y-orthogonal projector onto range(J).
// grad_y is the reference-space gradient with grad_x = J^T grad_y.
// Returns the collinearity defect; ~0 certifies the identity.
inline double projection_identity_check(const ReferenceMap& map, const ReferenceMetric& ref_metric,
                                        const Vec& x, const Vec& grad_x, const Vec& grad_y) {
    if (map.dim_y > 200) throw std::invalid_argument("projection_identity_check: dim_y guard");
    Mat J = dense_jacobian(map, x);
    Vec y = map.eval(x);
    Mat GY = dense_operator([&](const Vec& u) { return ref_metric.apply(y, u); }, map.dim_y);
    Mat GX = matmul(transpose(J), matmul(GY, J));

    Mat GXpinv = symmetric_pinv(GX);
    Vec dx = matvec(GXpinv, grad_x);
    scal(-1.0, dx);
    Vec dy = matvec(J, dx);

    // P = J (J^T G_Y J)^+ J^T G_Y
    Mat P = matmul(J, matmul(GXpinv, matmul(transpose(J), GY)));

    // Full-rank assumption of the restricted metric: P must reproduce range(J).
    Mat PJ = matmul(P, J);
    double pj_defect = 0.0, jn = 0.0;
    for (std::size_t i = 0; i < J.rows; ++i)
        for (std::size_t j = 0; j < J.cols; ++j) {
            pj_defect = std::max(pj_defect, std::abs(PJ(i, j) - J(i, j)));
            jn = std::max(jn, std::abs(J(i, j)));
        }
    if (pj_defect > 1e-6 * std::max(jn, 1.0))
        throw std::runtime_error(
            "projection_identity_check: P_im G_Y P_im rank assumption violated");

    Vec dy_tilde = matvec(symmetric_pinv(GY), grad_y);
    Vec p_dy_tilde = matvec(P, dy_tilde);

    const double ndy = norm2(dy), npd = norm2(p_dy_tilde);
    if (ndy == 0.0 || npd == 0.0)
        throw std::runtime_error("projection_identity_check: vanishing direction");
    // dy should equal -P dy~ up to positive scale.
    Vec defect = scaled(dy, npd);
    axpy(ndy, p_dy_tilde, defect);
    return norm2(defect) / (ndy * npd);
}

}  // namespace ngd::oracle

#endif
