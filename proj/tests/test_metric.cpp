#include <doctest.h>

#include <random>

#include "ngd/oracles.hpp"
#include "ngd/reference.hpp"

using namespace ngd;

namespace {

ReferenceMap identity_map(std::size_t n) {
    ReferenceMap m;
    m.dim_x = m.dim_y = n;
    m.eval = [](const Vec& x) { return x; };
    m.jvp = [](const Vec&, const Vec& v) { return v; };
    m.vjp = [](const Vec&, const Vec& w) { return w; };
    return m;
}

// y = (x0^2, x0 x1, x1 x2, x2 x3, x3 x4, x4 x5), a nonlinear 6->6 toy map.
ReferenceMap toy_quadratic_map() {
    ReferenceMap m;
    m.dim_x = m.dim_y = 6;
    m.eval = [](const Vec& x) {
        return Vec{x[0] * x[0], x[0] * x[1], x[1] * x[2], x[2] * x[3], x[3] * x[4], x[4] * x[5]};
    };
    m.jvp = [](const Vec& x, const Vec& v) {
        return Vec{2.0 * x[0] * v[0],
                   x[1] * v[0] + x[0] * v[1],
                   x[2] * v[1] + x[1] * v[2],
                   x[3] * v[2] + x[2] * v[3],
                   x[4] * v[3] + x[3] * v[4],
                   x[5] * v[4] + x[4] * v[5]};
    };
    m.vjp = [](const Vec& x, const Vec& w) {
        Vec g(6, 0.0);
        g[0] = 2.0 * x[0] * w[0] + x[1] * w[1];
        g[1] = x[0] * w[1] + x[2] * w[2];
        g[2] = x[1] * w[2] + x[3] * w[3];
        g[3] = x[2] * w[3] + x[4] * w[4];
        g[4] = x[3] * w[4] + x[5] * w[5];
        g[5] = x[4] * w[5];
        return g;
    };
    return m;
}

}  // namespace

TEST_CASE("pullback of euclidean through identity is the identity") {
    ReferenceMap m = identity_map(5);
    std::mt19937_64 rng(1);
    Vec x = random_normal(5, rng);
    LinearOperator op = pullback_metric(m, euclidean_reference(), x, 0.0);
    for (int t = 0; t < 5; ++t) {
        Vec v = random_normal(5, rng);
        Vec gv = op.apply(v);
        for (std::size_t i = 0; i < 5; ++i) CHECK(gv[i] == doctest::Approx(v[i]).epsilon(1e-14));
    }
}

TEST_CASE("ridge additivity: identity pullback with ridge 0.5 scales by 1.5") {
    ReferenceMap m = identity_map(3);
    LinearOperator op = pullback_metric(m, euclidean_reference(), Vec{1.0, 2.0, 3.0}, 0.5);
    Vec gv = op.apply(Vec{2.0, -4.0, 6.0});
    CHECK(gv[0] == doctest::Approx(3.0));
    CHECK(gv[1] == doctest::Approx(-6.0));
    CHECK(gv[2] == doctest::Approx(9.0));
}

TEST_CASE("pullback matches densely assembled J^T G J with finite-difference J") {
    ReferenceMap m = toy_quadratic_map();
    std::mt19937_64 rng(5);
    Vec x = random_normal(6, rng);
    for (double& xi : x) xi += 2.0;  // keep away from degenerate points

    // finite-difference Jacobian, independent of the map's jvp
    const double h = 1e-6;
    Mat J(6, 6);
    for (std::size_t j = 0; j < 6; ++j) {
        Vec xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        Vec yp = m.eval(xp), ym = m.eval(xm);
        for (std::size_t i = 0; i < 6; ++i) J(i, j) = (yp[i] - ym[i]) / (2.0 * h);
    }
    Mat G = matmul(transpose(J), J);

    LinearOperator op = pullback_metric(m, euclidean_reference(), x, 0.0);
    for (int t = 0; t < 10; ++t) {
        Vec v = random_normal(6, rng);
        Vec a = op.apply(v), b = matvec(G, v);
        for (std::size_t i = 0; i < 6; ++i)
            CHECK(std::abs(a[i] - b[i]) <= 1e-6 * std::max(1.0, std::abs(b[i])));
    }
}

TEST_CASE("euclidean reference is the identity and pullback reduces to the Gram matrix") {
    ReferenceMetric eu = euclidean_reference();
    Vec u = eu.apply(Vec{0.0}, Vec{1.0, 2.0, 3.0});
    CHECK(u == Vec{1.0, 2.0, 3.0});

    // with any map, Eq. J^T I J = J^T J; verify densely on the 5-dim slice
    ReferenceMap m = toy_quadratic_map();
    std::mt19937_64 rng(9);
    Vec x = random_normal(6, rng);
    Mat J = oracle::dense_jacobian(m, x);
    Mat gram = matmul(transpose(J), J);
    Mat dense = oracle::assemble_dense_metric(m, eu, x);
    for (std::size_t i = 0; i < dense.a.size(); ++i)
        CHECK(std::abs(dense.a[i] - gram.a[i]) <= 1e-12);
}

TEST_CASE("hessian reference: zero hessian, SPD after regularization, epsilon rule") {
    HessianRegularization reg;
    reg.epsilon_h_estimate = -3.0;
    CHECK(reg.epsilon() == doctest::Approx(3.1));

    ReferenceMetric zero_h = hessian_reference([](const Vec&, const Vec& u) {
        return Vec(u.size(), 0.0);
    }, reg);
    Vec u = zero_h.apply(Vec{0.0, 0.0}, Vec{1.0, -2.0});
    CHECK(u[0] == doctest::Approx(3.1));
    CHECK(u[1] == doctest::Approx(-6.2));

    // A = diag(-1, 2): exact eps_H = -1 by dense eigensolve, operator SPD
    Mat A(2, 2);
    A(0, 0) = -1.0;
    A(1, 1) = 2.0;
    auto eig = oracle::dense_symmetric_eigensolve(A);
    HessianRegularization reg2;
    reg2.epsilon_h_estimate = eig.eigenvalues.front();
    CHECK(reg2.epsilon_h_estimate == doctest::Approx(-1.0));
    ReferenceMetric href = hessian_reference(
        [A](const Vec&, const Vec& v) { return matvec(A, v); }, reg2);
    std::mt19937_64 rng(2);
    for (int t = 0; t < 50; ++t) {
        Vec v = random_normal(2, rng);
        CHECK(dot(v, href.apply(Vec{0.0, 0.0}, v)) > 0.0);
    }
}

TEST_CASE("min-eigenvalue estimate against known spectra") {
    auto diag_op = [](Vec d) {
        return [d = std::move(d)](const Vec& v) {
            Vec out(v.size());
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = d[i] * v[i];
            return out;
        };
    };
    CHECK(estimate_min_eigenvalue(diag_op({1.0, 2.0, 3.0}), 3, 200, 7) ==
          doctest::Approx(1.0).epsilon(0.1));
    CHECK(estimate_min_eigenvalue(diag_op({-5.0, 0.0, 5.0}), 3, 400, 7) ==
          doctest::Approx(-5.0).epsilon(0.1));

    const std::size_t n = 50;
    std::mt19937_64 rng(13);
    Mat M(n, n);
    for (double& v : M.a) v = std::normal_distribution<double>()(rng);
    Mat H(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) H(i, j) = 0.5 * (M(i, j) + M(j, i));
    auto eig = oracle::dense_symmetric_eigensolve(H);
    const double est = estimate_min_eigenvalue(
        [&H](const Vec& v) { return matvec(H, v); }, n, 400, 23);
    CHECK(std::abs(est - eig.eigenvalues.front()) <= 0.1 * std::abs(eig.eigenvalues.front()));
}

TEST_CASE("fisher metric: degenerate, bernoulli, and normalized-vector models") {
    SUBCASE("single certain outcome gives the zero operator") {
        auto model = [](const Vec& x) {
            ProbabilityModel m;
            m.probabilities = {1.0};
            m.log_gradients = {Vec(x.size(), 0.0)};
            return m;
        };
        LinearOperator op = fisher_metric(model, Vec{0.3, 0.7});
        Vec out = op.apply(Vec{1.0, 1.0});
        CHECK(norm2(out) == 0.0);
    }
    SUBCASE("bernoulli information 1/(p(1-p))") {
        auto model = [](const Vec& th) {
            ProbabilityModel m;
            const double t = th[0];
            m.probabilities = {t, 1.0 - t};
            m.log_gradients = {Vec{1.0 / t}, Vec{-1.0 / (1.0 - t)}};
            return m;
        };
        LinearOperator op = fisher_metric(model, Vec{0.5});
        CHECK(op.apply(Vec{1.0})[0] == doctest::Approx(4.0));
    }
    SUBCASE("born-weight model matches (4/Z^2)(I - x x^T / Z^2)") {
        Vec x{0.4, -1.1, 2.0, 0.7};
        auto model = [](const Vec& xx) {
            ProbabilityModel m;
            const double z2 = dot(xx, xx);
            for (std::size_t s = 0; s < xx.size(); ++s) {
                m.probabilities.push_back(xx[s] * xx[s] / z2);
                Vec g = scaled(xx, -2.0 / z2);
                g[s] += 2.0 / xx[s];
                m.log_gradients.push_back(g);
            }
            return m;
        };
        LinearOperator op = fisher_metric(model, x);
        const double z2 = dot(x, x);
        Mat expect(4, 4);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                expect(i, j) = 4.0 / z2 * ((i == j ? 1.0 : 0.0) - x[i] * x[j] / z2);
        Mat got = oracle::dense_operator(op.apply, 4);
        for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(got.a[i] - expect.a[i]) <= 1e-10);

        // zero mode along x
        CHECK(norm2(op.apply(x)) <= 1e-10);
    }
    SUBCASE("invalid distributions are rejected") {
        auto bad = [](const Vec&) {
            ProbabilityModel m;
            m.probabilities = {0.7, 0.7};
            m.log_gradients = {Vec{0.0}, Vec{0.0}};
            return m;
        };
        CHECK_THROWS_AS(fisher_metric(bad, Vec{1.0}), std::invalid_argument);
    }
}

TEST_CASE("cg solver basics and certificate") {
    SUBCASE("identity") {
        Vec b{1.0, 2.0, 3.0};
        CHECK(cg_solve(identity_operator(3), b) == b);
    }
    SUBCASE("diagonal") {
        LinearOperator d{3, [](const Vec& v) { return Vec{v[0], 2.0 * v[1], 4.0 * v[2]}; }};
        Vec x = cg_solve(d, Vec{1.0, 2.0, 4.0});
        CHECK(x[0] == doctest::Approx(1.0));
        CHECK(x[1] == doctest::Approx(1.0));
        CHECK(x[2] == doctest::Approx(1.0));
    }
    SUBCASE("random 30x30 spd vs pseudo-inverse, with residual certificate") {
        const std::size_t n = 30;
        std::mt19937_64 rng(17);
        Mat B(n, n);
        for (double& v : B.a) v = std::normal_distribution<double>()(rng);
        Mat A = matmul(transpose(B), B);
        for (std::size_t i = 0; i < n; ++i) A(i, i) += static_cast<double>(n);
        LinearOperator op{n, [&A](const Vec& v) { return matvec(A, v); }};
        Vec b = random_normal(n, rng);
        CgResult res = cg_solve_result(op, b, {});
        CHECK(res.converged);

        Vec r = sub(b, op.apply(res.x));
        CHECK(norm2(r) <= 1e-9 * norm2(b));

        Vec x_ref = oracle::solve_spd(A, b);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(res.x[i] - x_ref[i]) <= 1e-8);
    }
}

TEST_CASE("adjoint consistency, symmetry, and psd of pullback operators") {
    ReferenceMap m = toy_quadratic_map();
    std::mt19937_64 rng(21);
    Vec x = random_normal(6, rng);
    for (double& xi : x) xi += 1.5;

    for (int t = 0; t < 100; ++t) {
        Vec v = random_normal(6, rng), w = random_normal(6, rng);
        const double lhs = dot(w, m.jvp(x, v));
        const double rhs = dot(m.vjp(x, w), v);
        CHECK(std::abs(lhs - rhs) <= 1e-10 * norm2(v) * norm2(w));
    }

    LinearOperator op = pullback_metric(m, euclidean_reference(), x, 0.0);
    for (int t = 0; t < 20; ++t) {
        Vec u = random_normal(6, rng), v = random_normal(6, rng);
        CHECK(std::abs(dot(u, op.apply(v)) - dot(v, op.apply(u))) <=
              1e-10 * norm2(u) * norm2(v));
        CHECK(dot(u, op.apply(u)) >= -1e-10 * dot(u, u));
    }
}

TEST_CASE("default ridge is nonnegative and tiny relative to the trace") {
    LinearOperator d{4, [](const Vec& v) { return Vec{v[0], 2.0 * v[1], 3.0 * v[2], 4.0 * v[3]}; }};
    const double r = default_ridge(d);
    // Hutchinson with +-1 probes is exact for diagonal operators: tr = 10
    CHECK(r == doctest::Approx(1e-10 * 10.0 / 4.0));
}
