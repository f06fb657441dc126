#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "ngd/oracles.hpp"
#include "ngd/rayleigh.hpp"

using namespace ngd;

TEST_CASE("rayleigh quotient on eigenvectors and bounds") {
    Mat H(2, 2);
    H(0, 0) = 2.0;
    H(1, 1) = 5.0;
    RayleighInstance inst{2, H, 0};
    CHECK(rayleigh_cost(Vec{1.0, 0.0}, inst) == doctest::Approx(2.0));

    Mat S(2, 2);
    S(0, 1) = S(1, 0) = 1.0;
    RayleighInstance swap{2, S, 0};
    CHECK(rayleigh_cost(Vec{1.0, 1.0}, swap) == doctest::Approx(1.0));

    RayleighInstance rnd = make_rayleigh_instance(20, 77);
    auto eig = oracle::dense_symmetric_eigensolve(rnd.H);
    std::mt19937_64 rng(78);
    for (int t = 0; t < 20; ++t) {
        const double q = rayleigh_cost(random_normal(20, rng), rnd);
        CHECK(q >= eig.eigenvalues.front() - 1e-12);
        CHECK(q <= eig.eigenvalues.back() + 1e-12);
    }
}

TEST_CASE("rayleigh cost is scale invariant") {
    RayleighInstance inst = make_rayleigh_instance(15, 3);
    std::mt19937_64 rng(4);
    Vec x = random_normal(15, rng);
    const double base = rayleigh_cost(x, inst);
    for (double alpha : {-2.0, 0.5, 10.0})
        CHECK(std::abs(rayleigh_cost(scaled(x, alpha), inst) - base) <=
              1e-12 * std::abs(base));
}

TEST_CASE("rayleigh gradient: stationary on eigenvectors, fd check, orthogonality") {
    RayleighInstance inst = make_rayleigh_instance(10, 11);
    auto eig = oracle::dense_symmetric_eigensolve(inst.H);
    Vec v0(10);
    for (std::size_t i = 0; i < 10; ++i) v0[i] = eig.eigenvectors(i, 0);
    CHECK(norm2(rayleigh_gradient(v0, inst)) <= 1e-9);

    std::mt19937_64 rng(12);
    for (int t = 0; t < 10; ++t) {
        Vec x = random_normal(10, rng);
        Vec g = rayleigh_gradient(x, inst);
        Vec fd = oracle::finite_difference_gradient(
            [&inst](const Vec& p) { return rayleigh_cost(p, inst); }, x);
        for (std::size_t i = 0; i < 10; ++i)
            CHECK(std::abs(g[i] - fd[i]) <= 1e-6 * std::max(1.0, norm2(g)));
    }

    for (int t = 0; t < 100; ++t) {
        Vec x = random_normal(10, rng);
        Vec g = rayleigh_gradient(x, inst);
        CHECK(std::abs(dot(g, x)) <= 1e-10 * norm2(g) * norm2(x));
    }
}

TEST_CASE("pullback metric: radial null space and dense agreement at n=5") {
    RayleighInstance inst = make_rayleigh_instance(5, 21);
    Vec x = rayleigh_initial_point(5, 22);
    auto eig = oracle::dense_symmetric_eigensolve(inst.H);
    HessianRegularization reg;
    reg.epsilon_h_estimate = eig.eigenvalues.front();
    CHECK(reg.epsilon() == doctest::Approx(std::abs(eig.eigenvalues.front()) + 0.1));

    const double ridge = 1e-8;
    LinearOperator op = rayleigh_pullback_metric(x, inst, reg, ridge);

    // J annihilates the radial direction, so only the ridge survives
    Vec gx = op.apply(x);
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(gx[i] - ridge * x[i]) <= 1e-14);

    ReferenceMap map = normalized_vector_map(5);
    ReferenceMetric href = hessian_reference(
        [&inst](const Vec&, const Vec& u) { return matvec(inst.H, u); }, reg);
    Mat dense = oracle::assemble_dense_metric(map, href, x);
    LinearOperator bare = rayleigh_pullback_metric(x, inst, reg, 0.0);
    std::mt19937_64 rng(23);
    for (int t = 0; t < 10; ++t) {
        Vec v = random_normal(5, rng);
        Vec a = bare.apply(v), b = matvec(dense, v);
        for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-10);
    }

    // SPD on the tangent space
    for (int t = 0; t < 20; ++t) {
        Vec v = random_normal(5, rng);
        axpy(-dot(v, x) / dot(x, x), x, v);
        CHECK(dot(v, bare.apply(v)) > 0.0);
    }
}

TEST_CASE("fisher metric: null mode, closed form, gd collinearity") {
    std::mt19937_64 rng(31);
    Vec x = random_normal(4, rng);
    LinearOperator fi = rayleigh_fisher_metric(x);
    CHECK(norm2(fi.apply(x)) <= 1e-10);

    const double z2 = dot(x, x);
    Mat dense = oracle::dense_operator(fi.apply, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(std::abs(dense(i, j) -
                           4.0 / z2 * ((i == j ? 1.0 : 0.0) - x[i] * x[j] / z2)) <= 1e-10);

    RayleighInstance inst = make_rayleigh_instance(12, 41);
    for (int t = 0; t < 100; ++t) {
        Vec p = random_normal(12, rng);
        Vec g = rayleigh_gradient(p, inst);
        if (norm2(g) < 1e-12) continue;
        LinearOperator m = rayleigh_fisher_metric(p);
        Vec d = natural_direction(g, m);
        const double cosine = -dot(d, g) / (norm2(d) * norm2(g));
        CHECK(cosine >= 1.0 - 1e-10);
    }
}

TEST_CASE("matrix file round trip and symmetrization notice") {
    const char* path = "rayleigh_test_matrix.txt";
    {
        std::ofstream out(path);
        out << "2\n1.0 3.0\n1.0 2.0\n";  // asymmetric on purpose
    }
    bool asym = false;
    RayleighInstance inst = rayleigh_instance_from_matrix(read_matrix_file(path), 0, &asym);
    std::remove(path);
    CHECK(asym);
    CHECK(inst.H(0, 1) == doctest::Approx(2.0));
    CHECK(inst.H(1, 0) == doctest::Approx(2.0));
}

TEST_CASE("full problem converges to the dense minimal eigenvalue") {
    RayleighInstance inst = make_rayleigh_instance(40, 51);
    auto eig = oracle::dense_symmetric_eigensolve(inst.H);
    Problem p = make_rayleigh_problem(inst, {100, 51});
    OptimizerConfig cfg;
    cfg.method = Method::ngd;
    cfg.metric_id = "rayleigh_pullback";
    cfg.max_iterations = 2000;
    RunTrace t = optimize(p, rayleigh_initial_point(40, 52), cfg);
    const double lmin = eig.eigenvalues.front();
    CHECK(std::abs(t.records.back().cost - lmin) <= 1e-10 * std::abs(lmin));
}
