#ifndef NGD_RAYLEIGH_HPP
#define NGD_RAYLEIGH_HPP

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ngd/linalg.hpp"
#include "ngd/optimize.hpp"
#include "ngd/reference.hpp"

// Minimal-eigenvalue problem: L(x) = x^T H x / x^T x over a real symmetric H.

namespace ngd {

struct RayleighInstance {
    std::size_t n = 0;
    Mat H;  // symmetric
    std::uint64_t seed = 0;
};

// Symmetrized i.i.d. Gaussian matrix (not positive definite in general).
inline RayleighInstance make_rayleigh_instance(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("rayleigh: n >= 2 required");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    Mat M(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) M(i, j) = d(rng);
    RayleighInstance inst{n, Mat(n, n), seed};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) inst.H(i, j) = 0.5 * (M(i, j) + M(j, i));
    return inst;
}

// The cost only sees the symmetric part, so asymmetric input is symmetrized.
inline RayleighInstance rayleigh_instance_from_matrix(Mat H, std::uint64_t seed = 0,
                                                      bool* was_asymmetric = nullptr) {
    if (H.rows != H.cols || H.rows < 2) throw std::invalid_argument("rayleigh: bad matrix");
    bool asym = false;
    for (std::size_t i = 0; i < H.rows; ++i)
        for (std::size_t j = i + 1; j < H.cols; ++j) {
            if (H(i, j) != H(j, i)) asym = true;
            const double v = 0.5 * (H(i, j) + H(j, i));
            H(i, j) = H(j, i) = v;
        }
    if (was_asymmetric) *was_asymmetric = asym;
    return {H.rows, std::move(H), seed};
}

// Textual dense matrix file: first line n, then n^2 whitespace-separated reals.
inline Mat read_matrix_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open matrix file: " + path);
    std::size_t n = 0;
    in >> n;
    Mat H(n, n);
    for (std::size_t i = 0; i < n * n; ++i)
        if (!(in >> H.a[i])) throw std::runtime_error("truncated matrix file: " + path);
    return H;
}

inline double rayleigh_cost(const Vec& x, const RayleighInstance& inst) {
    const double xx = dot(x, x);
    if (xx == 0.0) throw std::invalid_argument("rayleigh_cost: x = 0");
    return dot(x, matvec(inst.H, x)) / xx;
}

// grad = 2 (H x - L(x) x) / |x|^2; orthogonal to x.
inline Vec rayleigh_gradient(const Vec& x, const RayleighInstance& inst) {
    const double xx = dot(x, x);
    if (xx == 0.0) throw std::invalid_argument("rayleigh_gradient: x = 0");
    Vec hx = matvec(inst.H, x);
    const double lx = dot(x, hx) / xx;
    axpy(-lx, x, hx);
    scal(2.0 / xx, hx);
    return hx;
}

// Reference map Y = x / |x|. Its Jacobian is (I - Y Y^T)/|x|, symmetric.
inline ReferenceMap normalized_vector_map(std::size_t n) {
    ReferenceMap map;
    map.dim_x = map.dim_y = n;
    map.eval = [](const Vec& x) {
        const double z = norm2(x);
        if (z == 0.0) throw std::invalid_argument("normalized_vector_map: x = 0");
        return scaled(x, 1.0 / z);
    };
    auto project = [](const Vec& x, const Vec& v) {
        const double z = norm2(x);
        if (z == 0.0) throw std::invalid_argument("normalized_vector_map: x = 0");
        Vec y = scaled(x, 1.0 / z);
        Vec out = v;
        axpy(-dot(y, v), y, out);
        scal(1.0 / z, out);
        return out;
    };
    map.jvp = project;
    map.vjp = project;
    return map;
}

// Pullback of the regularized Hessian metric H + eps I through Y = x/|x|.
inline LinearOperator rayleigh_pullback_metric(const Vec& x, const RayleighInstance& inst,
                                               const HessianRegularization& reg,
                                               double ridge = 0.0) {
    ReferenceMap map = normalized_vector_map(inst.n);
    ReferenceMetric href = hessian_reference(
        [&inst](const Vec&, const Vec& u) { return matvec(inst.H, u); }, reg);
    return pullback_metric(map, href, x, ridge);
}

// Fisher metric under Born weights p_s = x_s^2 / Z^2. Densely this equals
// (4/Z^2)(I - x x^T / Z^2).
inline LinearOperator rayleigh_fisher_metric(const Vec& x) {
    if (dot(x, x) == 0.0) throw std::invalid_argument("rayleigh_fisher_metric: x = 0");
    auto model = [](const Vec& xx) {
        ProbabilityModel m;
        const double z2 = dot(xx, xx);
        const std::size_t n = xx.size();
        m.probabilities.resize(n);
        m.log_gradients.resize(n);
        for (std::size_t s = 0; s < n; ++s) {
            if (xx[s] == 0.0)
                throw std::invalid_argument("rayleigh_fisher_metric: x_s = 0");
            m.probabilities[s] = xx[s] * xx[s] / z2;
            Vec g = scaled(xx, -2.0 / z2);
            g[s] += 2.0 / xx[s];
            m.log_gradients[s] = std::move(g);
        }
        return m;
    };
    return fisher_metric(model, x);
}

struct RayleighProblemOptions {
    std::size_t power_iters = 100;
    std::uint64_t seed = 0;
};

// Metrics: "rayleigh_pullback", "fisher", "identity". The eps_H estimate and
// the ridge are frozen at construction (run start), not refreshed per step.
inline Problem make_rayleigh_problem(const RayleighInstance& inst,
                                     const RayleighProblemOptions& opts = {}) {
    Problem p;
    p.dim = inst.n;
    p.cost = [inst](const Vec& x) { return rayleigh_cost(x, inst); };
    p.gradient = [inst](const Vec& x) { return rayleigh_gradient(x, inst); };

    HessianRegularization reg;
    reg.power_iters = opts.power_iters;
    reg.epsilon_h_estimate = estimate_min_eigenvalue(
        [&inst](const Vec& u) { return matvec(inst.H, u); }, inst.n, opts.power_iters,
        opts.seed ^ 0x5851f42d4c957f2dULL);

    p.metrics["rayleigh_pullback"] = [inst, reg, seed = opts.seed](const Vec& x) {
        LinearOperator op = rayleigh_pullback_metric(x, inst, reg);
        return add_ridge(std::move(op), default_ridge(op, seed));
    };
    p.metrics["fisher"] = [](const Vec& x) { return rayleigh_fisher_metric(x); };
    p.metrics["identity"] = [n = inst.n](const Vec&) { return identity_operator(n); };
    return p;
}

inline Vec rayleigh_initial_point(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return random_unit(n, rng);
}

}  // namespace ngd

#endif
