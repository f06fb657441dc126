#ifndef NGD_REFERENCE_HPP
#define NGD_REFERENCE_HPP

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>

#include "ngd/linalg.hpp"
#include "ngd/operator.hpp"

namespace ngd {

// Differentiable map f: X -> Y into a reference space, exposed through its
// value and Jacobian-vector products (jvp) / adjoints (vjp).
struct ReferenceMap {
    std::size_t dim_x = 0, dim_y = 0;
    std::function<Vec(const Vec&)> eval;
    std::function<Vec(const Vec&, const Vec&)> jvp;  // (x, v) -> J v
    std::function<Vec(const Vec&, const Vec&)> vjp;  // (x, w) -> J^T w
};

enum class RefMetricKind { euclidean, hessian_regularized, fisher, custom };

// Metric on the reference space: (y, u) -> G_Y(y) u.
struct ReferenceMetric {
    RefMetricKind kind = RefMetricKind::custom;
    std::function<Vec(const Vec&, const Vec&)> apply;
};

struct HessianRegularization {
    double epsilon_h_estimate = 0.0;
    std::size_t power_iters = 100;

    double epsilon() const { return std::abs(epsilon_h_estimate) + 0.1; }
};

inline ReferenceMetric euclidean_reference() {
    return {RefMetricKind::euclidean, [](const Vec&, const Vec& u) { return u; }};
}

// Regularized Hessian metric: u -> H u + eps u with eps = |eps_H| + 0.1.
inline ReferenceMetric hessian_reference(std::function<Vec(const Vec&, const Vec&)> hessian_apply,
                                         const HessianRegularization& reg) {
    const double eps = reg.epsilon();
    return {RefMetricKind::hessian_regularized,
            [h = std::move(hessian_apply), eps](const Vec& y, const Vec& u) {
                Vec out = h(y, u);
                axpy(eps, u, out);
                return out;
            }};
}

// Pullback metric v -> J^T G_Y(f(x)) J v + ridge v, evaluated matrix-free.
inline LinearOperator pullback_metric(const ReferenceMap& map, const ReferenceMetric& ref_metric,
                                      const Vec& x, double ridge = 0.0) {
    if (x.size() != map.dim_x) throw std::invalid_argument("pullback_metric: dimension mismatch");
    Vec y = map.eval(x);
    LinearOperator op;
    op.dim = map.dim_x;
    op.apply = [map, ref_metric, x, y = std::move(y)](const Vec& v) {
        return map.vjp(x, ref_metric.apply(y, map.jvp(x, v)));
    };
    return add_ridge(std::move(op), ridge);
}

// Estimate of the minimal eigenvalue of a symmetric operator. First the
// spectral radius rho via the norm ratio of plain power iteration (robust
// against tied +-rho pairs, where the Rayleigh quotient oscillates), then
// power iteration on rho*I - H, whose dominant eigenvalue is rho - lambda_min.
inline double estimate_min_eigenvalue(const std::function<Vec(const Vec&)>& op_apply,
                                      std::size_t dim, std::size_t power_iters, std::uint64_t seed) {
    if (dim == 0) throw std::invalid_argument("estimate_min_eigenvalue: dim = 0");
    std::mt19937_64 rng(seed);

    Vec v = random_unit(dim, rng);
    double rho = 0.0;
    for (std::size_t it = 0; it < power_iters; ++it) {
        Vec w = op_apply(v);
        rho = norm2(w);
        if (rho < 1e-300) return 0.0;  // (numerically) the zero operator
        scal(1.0 / rho, w);
        v = std::move(w);
    }

    Vec u = random_unit(dim, rng);
    for (std::size_t it = 0; it < power_iters; ++it) {
        Vec w = scaled(u, rho);
        axpy(-1.0, op_apply(u), w);
        const double nw = norm2(w);
        if (nw < 1e-300) return rho;  // H = rho I on this subspace
        scal(1.0 / nw, w);
        u = std::move(w);
    }
    return dot(u, op_apply(u));
}

// Fisher information metric for a finite-outcome probability model.
// The model returns, at x, the probabilities p_s and the log-derivative
// vectors d log p_s / dx.
struct ProbabilityModel {
    std::vector<double> probabilities;
    std::vector<Vec> log_gradients;  // one vector of length dim(x) per outcome
};

inline LinearOperator fisher_metric(const std::function<ProbabilityModel(const Vec&)>& model,
                                    const Vec& x) {
    ProbabilityModel m = model(x);
    double total = 0.0;
    for (double p : m.probabilities) {
        if (p < 0.0) throw std::invalid_argument("fisher_metric: negative probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-10)
        throw std::invalid_argument("fisher_metric: probabilities not normalized");

    LinearOperator op;
    op.dim = x.size();
    op.apply = [m = std::move(m), n = x.size()](const Vec& v) {
        Vec out(n, 0.0);
        for (std::size_t s = 0; s < m.probabilities.size(); ++s) {
            const double p = m.probabilities[s];
            if (p == 0.0) continue;
            const double proj = dot(m.log_gradients[s], v);
            axpy(p * proj, m.log_gradients[s], out);
        }
        return out;
    };
    return op;
}

// Default ridge for possibly singular pullback metrics:
// scale * (Hutchinson trace estimate of G) / dim. The 1e-10 default is enough
// for metrics whose null space is exactly orthogonal to the gradient; metrics
// with near-null modes that the gradient does overlap need a larger scale or
// CG turns the direction into an almost-flat gauge motion.
inline double default_ridge(const LinearOperator& op, std::uint64_t seed = 0x9e3779b97f4a7c15ULL,
                            double scale = 1e-10) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    const std::size_t probes = 4;
    double trace = 0.0;
    for (std::size_t k = 0; k < probes; ++k) {
        Vec z(op.dim);
        for (double& zi : z) zi = coin(rng) ? 1.0 : -1.0;
        trace += dot(z, op.apply(z));
    }
    trace /= static_cast<double>(probes);
    return scale * std::max(trace, 0.0) / static_cast<double>(op.dim);
}

}  // namespace ngd

#endif
