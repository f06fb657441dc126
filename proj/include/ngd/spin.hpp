#ifndef NGD_SPIN_HPP
#define NGD_SPIN_HPP

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ngd/linalg.hpp"
#include "ngd/optimize.hpp"
#include "ngd/reference.hpp"

// 2D classical Heisenberg model on a W x H lattice of unnormalized 3-vector
// spins: L = (1/N) sum_<ij> S_i/|S_i| . S_j/|S_j|.

namespace ngd {

struct SpinLattice {
    std::size_t width = 0, height = 0;
    bool periodic = true;
    Vec spins;  // length 3N, site-major (Sx, Sy, Sz)

    std::size_t sites() const { return width * height; }
    std::size_t dim() const { return 3 * sites(); }
    std::size_t site(std::size_t ix, std::size_t iy) const { return iy * width + ix; }
};

inline std::vector<std::pair<std::size_t, std::size_t>> spin_bonds(const SpinLattice& lat) {
    std::vector<std::pair<std::size_t, std::size_t>> bonds;
    for (std::size_t iy = 0; iy < lat.height; ++iy)
        for (std::size_t ix = 0; ix < lat.width; ++ix) {
            if (ix + 1 < lat.width)
                bonds.emplace_back(lat.site(ix, iy), lat.site(ix + 1, iy));
            else if (lat.periodic && lat.width > 1)
                bonds.emplace_back(lat.site(ix, iy), lat.site(0, iy));
            if (iy + 1 < lat.height)
                bonds.emplace_back(lat.site(ix, iy), lat.site(ix, iy + 1));
            else if (lat.periodic && lat.height > 1)
                bonds.emplace_back(lat.site(ix, iy), lat.site(ix, 0));
        }
    return bonds;
}

inline std::vector<std::vector<std::size_t>> spin_neighbors(const SpinLattice& lat) {
    std::vector<std::vector<std::size_t>> nbr(lat.sites());
    for (auto [i, j] : spin_bonds(lat)) {
        nbr[i].push_back(j);
        nbr[j].push_back(i);
    }
    return nbr;
}

inline double site_length(const Vec& spins, std::size_t i) {
    const double sx = spins[3 * i], sy = spins[3 * i + 1], sz = spins[3 * i + 2];
    const double len = std::sqrt(sx * sx + sy * sy + sz * sz);
    if (len == 0.0) throw std::invalid_argument("spin: zero-length spin at site " + std::to_string(i));
    return len;
}

// Unit spins, 3N vector.
inline Vec normalized_spins(const SpinLattice& lat, const Vec& spins) {
    Vec y(spins.size());
    for (std::size_t i = 0; i < lat.sites(); ++i) {
        const double len = site_length(spins, i);
        for (std::size_t a = 0; a < 3; ++a) y[3 * i + a] = spins[3 * i + a] / len;
    }
    return y;
}

inline double spin_cost(const SpinLattice& lat) {
    const Vec y = normalized_spins(lat, lat.spins);
    double e = 0.0;
    for (auto [i, j] : spin_bonds(lat))
        for (std::size_t a = 0; a < 3; ++a) e += y[3 * i + a] * y[3 * j + a];
    return e / static_cast<double>(lat.sites());
}

// dL/dS_{i,a} = (1/(N|S_i|)) (delta - Yhat Yhat^T) sum_{j in nbr(i)} Yhat_j
inline Vec spin_gradient(const SpinLattice& lat) {
    const std::size_t N = lat.sites();
    const Vec y = normalized_spins(lat, lat.spins);
    const auto nbr = spin_neighbors(lat);
    Vec g(lat.dim(), 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        double field[3] = {0, 0, 0};
        for (std::size_t j : nbr[i])
            for (std::size_t a = 0; a < 3; ++a) field[a] += y[3 * j + a];
        const double len = site_length(lat.spins, i);
        double proj = 0.0;
        for (std::size_t a = 0; a < 3; ++a) proj += y[3 * i + a] * field[a];
        for (std::size_t a = 0; a < 3; ++a)
            g[3 * i + a] = (field[a] - proj * y[3 * i + a]) / (static_cast<double>(N) * len);
    }
    return g;
}

// Reference map S_i -> S_i/|S_i|, per site.
inline ReferenceMap spin_normalization_map(const SpinLattice& lat) {
    ReferenceMap map;
    map.dim_x = map.dim_y = lat.dim();
    const std::size_t N = lat.sites();
    map.eval = [lat, N](const Vec& x) { return normalized_spins(lat, x); };
    auto project = [N](const Vec& x, const Vec& v) {
        Vec out(v.size());
        for (std::size_t i = 0; i < N; ++i) {
            const double len = site_length(x, i);
            double yhat[3], proj = 0.0;
            for (std::size_t a = 0; a < 3; ++a) yhat[a] = x[3 * i + a] / len;
            for (std::size_t a = 0; a < 3; ++a) proj += yhat[a] * v[3 * i + a];
            for (std::size_t a = 0; a < 3; ++a)
                out[3 * i + a] = (v[3 * i + a] - proj * yhat[a]) / len;
        }
        return out;
    };
    map.jvp = project;
    map.vjp = project;  // per-site Jacobian blocks are symmetric
    return map;
}

// Hessian of the quadratic reference cost Lbar(Y) = (1/N) sum_<ij> Y_i.Y_j:
// the lattice adjacency acting blockwise on each Cartesian component, /N.
inline Vec spin_hessian_apply(const SpinLattice& lat,
                              const std::vector<std::vector<std::size_t>>& nbr, const Vec& u) {
    const std::size_t N = lat.sites();
    Vec out(u.size(), 0.0);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j : nbr[i])
            for (std::size_t a = 0; a < 3; ++a)
                out[3 * i + a] += u[3 * j + a] / static_cast<double>(N);
    return out;
}

// eps_H of the adjacency/N operator. Periodic even lattices have the exact
// antiperiodic-mode value -4/N; otherwise fall back to power iteration.
inline double spin_epsilon_h(const SpinLattice& lat, std::size_t power_iters, std::uint64_t seed,
                             bool* analytic_path = nullptr) {
    const auto nbr = spin_neighbors(lat);
    if (lat.periodic && lat.width % 2 == 0 && lat.height % 2 == 0) {
        if (analytic_path) *analytic_path = true;
        return -4.0 / static_cast<double>(lat.sites());
    }
    if (analytic_path) *analytic_path = false;
    return estimate_min_eigenvalue(
        [&lat, &nbr](const Vec& u) { return spin_hessian_apply(lat, nbr, u); }, lat.dim(),
        power_iters, seed);
}

inline LinearOperator spin_pullback_metric(const SpinLattice& lat,
                                           const HessianRegularization& reg, double ridge = 0.0) {
    ReferenceMap map = spin_normalization_map(lat);
    auto nbr = spin_neighbors(lat);
    ReferenceMetric href = hessian_reference(
        [lat, nbr = std::move(nbr)](const Vec&, const Vec& u) {
            return spin_hessian_apply(lat, nbr, u);
        },
        reg);
    return pullback_metric(map, href, lat.spins, ridge);
}

struct SpinProblemOptions {
    std::size_t power_iters = 100;
    std::uint64_t seed = 0;
};

// The optimization state is the flat 3N vector; metric "spin_pullback".
inline Problem make_spin_problem(SpinLattice lat, const SpinProblemOptions& opts = {}) {
    Problem p;
    p.dim = lat.dim();

    HessianRegularization reg;
    reg.power_iters = opts.power_iters;
    reg.epsilon_h_estimate =
        spin_epsilon_h(lat, opts.power_iters, opts.seed ^ 0x2545f4914f6cdd1dULL);

    p.cost = [lat](const Vec& x) {
        SpinLattice l = lat;
        l.spins = x;
        return spin_cost(l);
    };
    p.gradient = [lat](const Vec& x) {
        SpinLattice l = lat;
        l.spins = x;
        return spin_gradient(l);
    };
    p.metrics["spin_pullback"] = [lat, reg, seed = opts.seed](const Vec& x) {
        SpinLattice l = lat;
        l.spins = x;
        LinearOperator op = spin_pullback_metric(l, reg);
        return add_ridge(std::move(op), default_ridge(op, seed));
    };
    p.metrics["identity"] = [n = lat.dim()](const Vec&) { return identity_operator(n); };
    return p;
}

// i.i.d. standard normal 3-vectors, rejecting near-zero lengths.
inline Vec spin_initial_state(const SpinLattice& lat, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    Vec x(lat.dim());
    for (std::size_t i = 0; i < lat.sites(); ++i) {
        double len = 0.0;
        do {
            for (std::size_t a = 0; a < 3; ++a) x[3 * i + a] = d(rng);
            len = std::sqrt(x[3 * i] * x[3 * i] + x[3 * i + 1] * x[3 * i + 1] +
                            x[3 * i + 2] * x[3 * i + 2]);
        } while (len < 1e-8);
    }
    return x;
}

// Neel configuration (unit spins, alternating +-z).
inline Vec spin_neel_state(const SpinLattice& lat) {
    Vec x(lat.dim(), 0.0);
    for (std::size_t iy = 0; iy < lat.height; ++iy)
        for (std::size_t ix = 0; ix < lat.width; ++ix)
            x[3 * lat.site(ix, iy) + 2] = ((ix + iy) % 2 == 0) ? 1.0 : -1.0;
    return x;
}

}  // namespace ngd

#endif
