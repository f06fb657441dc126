#include <doctest.h>

#include <random>

#include "ngd/oracles.hpp"
#include "ngd/rayleigh.hpp"

using namespace ngd;

TEST_CASE("finite differences: exact on quadratics, h^2 error on cubics") {
    auto quad = [](const Vec& x) { return 0.5 * dot(x, x); };
    Vec x{1.3, -0.2, 4.0};
    Vec g = oracle::finite_difference_gradient(quad, x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(x[i]).epsilon(1e-10));

    auto cubic = [](const Vec& x) { return x[0] * x[0] * x[0]; };
    Vec gc = oracle::finite_difference_gradient(cubic, Vec{1.0});
    CHECK(std::abs(gc[0] - 3.0) <= 1e-9);
}

TEST_CASE("finite differences match the analytic rayleigh gradient") {
    RayleighInstance inst = make_rayleigh_instance(12, 31);
    Vec x = rayleigh_initial_point(12, 32);
    Vec g = rayleigh_gradient(x, inst);
    Vec fd = oracle::finite_difference_gradient(
        [&inst](const Vec& p) { return rayleigh_cost(p, inst); }, x);
    for (std::size_t i = 0; i < 12; ++i)
        CHECK(std::abs(g[i] - fd[i]) <= 1e-6 * std::max(1.0, norm2(g)));
}

TEST_CASE("jacobi eigensolver on known matrices") {
    SUBCASE("diagonal permutation") {
        Mat A(3, 3);
        A(0, 0) = 3.0;
        A(1, 1) = 1.0;
        A(2, 2) = 2.0;
        auto eig = oracle::dense_symmetric_eigensolve(A);
        CHECK(eig.eigenvalues[0] == doctest::Approx(1.0));
        CHECK(eig.eigenvalues[1] == doctest::Approx(2.0));
        CHECK(eig.eigenvalues[2] == doctest::Approx(3.0));
    }
    SUBCASE("2x2 swap matrix") {
        Mat A(2, 2);
        A(0, 1) = A(1, 0) = 1.0;
        auto eig = oracle::dense_symmetric_eigensolve(A);
        CHECK(eig.eigenvalues[0] == doctest::Approx(-1.0));
        CHECK(eig.eigenvalues[1] == doctest::Approx(1.0));
    }
    SUBCASE("random 50x50: residual and orthonormality certificates") {
        const std::size_t n = 50;
        std::mt19937_64 rng(3);
        Mat M(n, n);
        for (double& v : M.a) v = std::normal_distribution<double>()(rng);
        Mat A(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) A(i, j) = 0.5 * (M(i, j) + M(j, i));
        auto eig = oracle::dense_symmetric_eigensolve(A);

        // A v_k = lambda_k v_k
        for (std::size_t k = 0; k < n; ++k) {
            Vec v(n);
            for (std::size_t i = 0; i < n; ++i) v[i] = eig.eigenvectors(i, k);
            Vec Av = matvec(A, v);
            axpy(-eig.eigenvalues[k], v, Av);
            CHECK(norm2(Av) <= 1e-9 * std::abs(eig.eigenvalues[k]) + 1e-9);
        }
        // V^T V = I
        Mat vtv = matmul(transpose(eig.eigenvectors), eig.eigenvectors);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                CHECK(std::abs(vtv(i, j) - (i == j ? 1.0 : 0.0)) <= 1e-9);
        // ascending order
        for (std::size_t k = 1; k < n; ++k)
            CHECK(eig.eigenvalues[k] >= eig.eigenvalues[k - 1]);
    }
    SUBCASE("asymmetric input is rejected") {
        Mat A(2, 2);
        A(0, 1) = 1.0;
        CHECK_THROWS_AS(oracle::dense_symmetric_eigensolve(A), std::invalid_argument);
    }
}

TEST_CASE("symmetric pseudo-inverse satisfies the penrose identities") {
    std::mt19937_64 rng(8);
    Mat B(5, 3);
    for (double& v : B.a) v = std::normal_distribution<double>()(rng);
    Mat A = matmul(B, transpose(B));  // rank 3, 5x5
    Mat P = oracle::symmetric_pinv(A);
    Mat APA = matmul(A, matmul(P, A));
    Mat PAP = matmul(P, matmul(A, P));
    for (std::size_t i = 0; i < A.a.size(); ++i) {
        CHECK(std::abs(APA.a[i] - A.a[i]) <= 1e-9);
        CHECK(std::abs(PAP.a[i] - P.a[i]) <= 1e-9);
    }
}

TEST_CASE("dense metric assembly: identity map, psd spectrum") {
    ReferenceMap m;
    m.dim_x = m.dim_y = 4;
    m.eval = [](const Vec& x) { return x; };
    m.jvp = [](const Vec&, const Vec& v) { return v; };
    m.vjp = [](const Vec&, const Vec& w) { return w; };
    Mat G = oracle::assemble_dense_metric(m, euclidean_reference(), Vec{1.0, 2.0, 3.0, 4.0});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(G(i, j) == doctest::Approx(i == j ? 1.0 : 0.0));
    auto eig = oracle::dense_symmetric_eigensolve(G);
    for (double l : eig.eigenvalues) CHECK(l >= -1e-10);
}

TEST_CASE("projection identity: identity map is exact, rayleigh n=6 within 1e-8") {
    SUBCASE("identity map") {
        ReferenceMap m;
        m.dim_x = m.dim_y = 3;
        m.eval = [](const Vec& x) { return x; };
        m.jvp = [](const Vec&, const Vec& v) { return v; };
        m.vjp = [](const Vec&, const Vec& w) { return w; };
        Vec x{0.5, -1.0, 2.0}, g{1.0, 2.0, -1.0};
        CHECK(oracle::projection_identity_check(m, euclidean_reference(), x, g, g) <= 1e-12);
    }
    SUBCASE("rayleigh with regularized hessian reference") {
        RayleighInstance inst = make_rayleigh_instance(6, 5);
        Vec x = rayleigh_initial_point(6, 6);
        auto eig = oracle::dense_symmetric_eigensolve(inst.H);
        HessianRegularization reg;
        reg.epsilon_h_estimate = eig.eigenvalues.front();
        ReferenceMap map = normalized_vector_map(6);
        ReferenceMetric href = hessian_reference(
            [&inst](const Vec&, const Vec& u) { return matvec(inst.H, u); }, reg);
        Vec grad_y = scaled(matvec(inst.H, map.eval(x)), 2.0);
        CHECK(oracle::projection_identity_check(map, href, x, rayleigh_gradient(x, inst),
                                                grad_y) <= 1e-8);
    }
}
