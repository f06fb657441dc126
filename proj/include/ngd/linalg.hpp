#ifndef NGD_LINALG_HPP
#define NGD_LINALG_HPP

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace ngd {

using Vec = std::vector<double>;

// Dense row-major matrix. Used for small problem data (Rayleigh H) and by
// the test oracles; the optimizer itself never materializes large matrices.
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

inline double dot(const Vec& x, const Vec& y) {
    assert(x.size() == y.size());
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

inline void axpy(double alpha, const Vec& x, Vec& y) {
    assert(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scal(double alpha, Vec& x) {
    for (double& v : x) v *= alpha;
}

inline Vec scaled(const Vec& x, double alpha) {
    Vec y = x;
    scal(alpha, y);
    return y;
}

inline Vec add(const Vec& x, const Vec& y) {
    Vec z = x;
    axpy(1.0, y, z);
    return z;
}

inline Vec sub(const Vec& x, const Vec& y) {
    Vec z = x;
    axpy(-1.0, y, z);
    return z;
}

inline bool all_finite(const Vec& x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

inline Vec matvec(const Mat& A, const Vec& x) {
    if (A.cols != x.size()) throw std::invalid_argument("matvec: dimension mismatch");
    Vec y(A.rows, 0.0);
    for (std::size_t i = 0; i < A.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < A.cols; ++j) s += A(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

inline Mat matmul(const Mat& A, const Mat& B) {
    if (A.cols != B.rows) throw std::invalid_argument("matmul: dimension mismatch");
    Mat C(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double aik = A(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < B.cols; ++j) C(i, j) += aik * B(k, j);
        }
    return C;
}

inline Mat transpose(const Mat& A) {
    Mat T(A.cols, A.rows);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t j = 0; j < A.cols; ++j) T(j, i) = A(i, j);
    return T;
}

inline Vec random_normal(std::size_t n, std::mt19937_64& rng, double sigma = 1.0) {
    std::normal_distribution<double> d(0.0, sigma);
    Vec x(n);
    for (double& v : x) v = d(rng);
    return x;
}

inline Vec random_unit(std::size_t n, std::mt19937_64& rng) {
    Vec x = random_normal(n, rng);
    double nrm = norm2(x);
    while (nrm < 1e-12) {
        x = random_normal(n, rng);
        nrm = norm2(x);
    }
    scal(1.0 / nrm, x);
    return x;
}

}  // namespace ngd

#endif
