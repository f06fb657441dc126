#ifndef NGD_OPERATOR_HPP
#define NGD_OPERATOR_HPP

#include <functional>
#include <stdexcept>
#include <string>

#include "ngd/linalg.hpp"

namespace ngd {

// Symmetric positive-(semi)definite operator v -> G v, kept matrix-free.
struct LinearOperator {
    std::size_t dim = 0;
    std::function<Vec(const Vec&)> apply;
};

inline LinearOperator identity_operator(std::size_t n) {
    return {n, [](const Vec& v) { return v; }};
}

inline LinearOperator add_ridge(LinearOperator op, double ridge) {
    if (ridge == 0.0) return op;
    auto base = op.apply;
    op.apply = [base, ridge](const Vec& v) {
        Vec y = base(v);
        axpy(ridge, v, y);
        return y;
    };
    return op;
}

struct CgSolverConfig {
    double rel_tol = 1e-10;
    double abs_tol = 0.0;
    std::size_t max_iters = 0;  // 0 -> 10*dim
};

struct CgFailure : std::runtime_error {
    double residual_norm;
    explicit CgFailure(double res)
        : std::runtime_error("cg_solve: no convergence, residual " + std::to_string(res)),
          residual_norm(res) {}
};

struct CgResult {
    Vec x;
    double residual_norm = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

// Plain conjugate gradients on a symmetric PSD operator. For a singular
// operator this converges whenever b lies in the numerical range (the
// iterates stay in the Krylov space generated by b).
inline CgResult cg_solve_result(const LinearOperator& op, const Vec& b, const CgSolverConfig& cfg = {}) {
    if (b.size() != op.dim) throw std::invalid_argument("cg_solve: rhs dimension mismatch");
    const std::size_t max_iters = cfg.max_iters ? cfg.max_iters : 10 * op.dim;
    const double bnorm = norm2(b);
    const double tol = std::max(cfg.abs_tol, cfg.rel_tol * bnorm);

    CgResult out;
    out.x.assign(op.dim, 0.0);
    Vec r = b;
    double rho = dot(r, r);
    if (std::sqrt(rho) <= tol) {
        out.residual_norm = std::sqrt(rho);
        out.converged = true;
        return out;
    }
    Vec p = r;
    for (std::size_t it = 0; it < max_iters; ++it) {
        Vec q = op.apply(p);
        const double pq = dot(p, q);
        if (pq <= 0.0) break;  // lost positive-definiteness along p; return best iterate
        const double alpha = rho / pq;
        axpy(alpha, p, out.x);
        axpy(-alpha, q, r);
        const double rho_new = dot(r, r);
        out.iterations = it + 1;
        if (std::sqrt(rho_new) <= tol) {
            out.residual_norm = std::sqrt(rho_new);
            out.converged = true;
            return out;
        }
        const double beta = rho_new / rho;
        rho = rho_new;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
    }
    out.residual_norm = norm2(r);
    return out;
}

inline Vec cg_solve(const LinearOperator& op, const Vec& b, const CgSolverConfig& cfg = {}) {
    CgResult res = cg_solve_result(op, b, cfg);
    if (!res.converged) throw CgFailure(res.residual_norm);
    return std::move(res.x);
}

}  // namespace ngd

#endif
