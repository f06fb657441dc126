#ifndef NGD_MPS_HPP
#define NGD_MPS_HPP

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ngd/linalg.hpp"
#include "ngd/optimize.hpp"
#include "ngd/reference.hpp"

// Least-squares rebuild of two-site reduced density matrices from an open-
// boundary real MPS. Parameters are the raw tensor elements; boundary
// tensors are 2 x D, interior tensors 2 x D x D.

namespace ngd {

constexpr std::size_t kMpsDenseGuard = 14;  // largest L with 2^L enumeration

struct MpsShape {
    std::size_t length = 0, bond_dim = 0;

    MpsShape() = default;
    MpsShape(std::size_t L, std::size_t D) : length(L), bond_dim(D) {
        if (L < 3 || D < 1) throw std::invalid_argument("mps: need L >= 3, D >= 1");
    }

    std::size_t dl(std::size_t k) const { return k == 0 ? 1 : bond_dim; }
    std::size_t dr(std::size_t k) const { return k + 1 == length ? 1 : bond_dim; }
    std::size_t tensor_size(std::size_t k) const { return 2 * dl(k) * dr(k); }
    std::size_t offset(std::size_t k) const {
        std::size_t off = 0;
        for (std::size_t j = 0; j < k; ++j) off += tensor_size(j);
        return off;
    }
    std::size_t parameter_count() const { return offset(length); }
};

inline Mat site_matrix(const Vec& x, const MpsShape& sh, std::size_t k, std::size_t s) {
    const std::size_t rows = sh.dl(k), cols = sh.dr(k), off = sh.offset(k);
    Mat A(rows, cols);
    for (std::size_t a = 0; a < rows; ++a)
        for (std::size_t b = 0; b < cols; ++b) A(a, b) = x[off + (s * rows + a) * cols + b];
    return A;
}

inline void add_site_matrix(Vec& g, const MpsShape& sh, std::size_t k, std::size_t s,
                            const Mat& M, double alpha = 1.0) {
    const std::size_t rows = sh.dl(k), cols = sh.dr(k), off = sh.offset(k);
    for (std::size_t a = 0; a < rows; ++a)
        for (std::size_t b = 0; b < cols; ++b) g[off + (s * rows + a) * cols + b] += alpha * M(a, b);
}

// Plain transfer environments; rows index the ket bond, columns the bra bond.
// le[k] contracts sites 0..k-1, re[k] contracts sites k..L-1; le[L](0,0) = Z^2.
inline std::vector<Mat> mps_left_envs(const Vec& x, const MpsShape& sh) {
    std::vector<Mat> le(sh.length + 1);
    le[0] = Mat(1, 1);
    le[0](0, 0) = 1.0;
    for (std::size_t k = 0; k < sh.length; ++k) {
        Mat next(sh.dr(k), sh.dr(k));
        for (std::size_t s = 0; s < 2; ++s) {
            Mat A = site_matrix(x, sh, k, s);
            Mat t = matmul(transpose(A), matmul(le[k], A));
            for (std::size_t i = 0; i < next.a.size(); ++i) next.a[i] += t.a[i];
        }
        le[k + 1] = std::move(next);
    }
    return le;
}

inline std::vector<Mat> mps_right_envs(const Vec& x, const MpsShape& sh) {
    std::vector<Mat> re(sh.length + 1);
    re[sh.length] = Mat(1, 1);
    re[sh.length](0, 0) = 1.0;
    for (std::size_t k = sh.length; k-- > 0;) {
        Mat next(sh.dl(k), sh.dl(k));
        for (std::size_t s = 0; s < 2; ++s) {
            Mat A = site_matrix(x, sh, k, s);
            Mat t = matmul(A, matmul(re[k + 1], transpose(A)));
            for (std::size_t i = 0; i < next.a.size(); ++i) next.a[i] += t.a[i];
        }
        re[k] = std::move(next);
    }
    return re;
}

// Mixed environments with exactly one ket-side insertion of v.
inline std::vector<Mat> mps_left_envs_mixed(const Vec& x, const Vec& v, const MpsShape& sh,
                                            const std::vector<Mat>& le) {
    std::vector<Mat> lm(sh.length + 1);
    lm[0] = Mat(1, 1);
    for (std::size_t k = 0; k < sh.length; ++k) {
        Mat next(sh.dr(k), sh.dr(k));
        for (std::size_t s = 0; s < 2; ++s) {
            Mat A = site_matrix(x, sh, k, s);
            Mat V = site_matrix(v, sh, k, s);
            Mat t = matmul(transpose(V), matmul(le[k], A));
            Mat u = matmul(transpose(A), matmul(lm[k], A));
            for (std::size_t i = 0; i < next.a.size(); ++i) next.a[i] += t.a[i] + u.a[i];
        }
        lm[k + 1] = std::move(next);
    }
    return lm;
}

inline std::vector<Mat> mps_right_envs_mixed(const Vec& x, const Vec& v, const MpsShape& sh,
                                             const std::vector<Mat>& re) {
    std::vector<Mat> rm(sh.length + 1);
    rm[sh.length] = Mat(1, 1);
    for (std::size_t k = sh.length; k-- > 0;) {
        Mat next(sh.dl(k), sh.dl(k));
        for (std::size_t s = 0; s < 2; ++s) {
            Mat A = site_matrix(x, sh, k, s);
            Mat V = site_matrix(v, sh, k, s);
            Mat t = matmul(V, matmul(re[k + 1], transpose(A)));
            Mat u = matmul(A, matmul(rm[k + 1], transpose(A)));
            for (std::size_t i = 0; i < next.a.size(); ++i) next.a[i] += t.a[i] + u.a[i];
        }
        rm[k] = std::move(next);
    }
    return rm;
}

inline double frob_inner(const Mat& A, const Mat& B) {
    double s = 0.0;
    for (std::size_t i = 0; i < A.a.size(); ++i) s += A.a[i] * B.a[i];
    return s;
}

// Unnormalized two-site RDM for sites (b, b+1), 0 <= b <= L-2.
// Row index (s_b, s_{b+1}) flattened as s*2+t.
inline Mat mps_rdm_unnormalized(const Vec& x, const MpsShape& sh, std::size_t b,
                                const std::vector<Mat>& le, const std::vector<Mat>& re) {
    if (b + 2 > sh.length) throw std::out_of_range("mps rdm: bond index out of range");
    std::array<Mat, 4> B;
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t t = 0; t < 2; ++t)
            B[s * 2 + t] = matmul(site_matrix(x, sh, b, s), site_matrix(x, sh, b + 1, t));
    Mat rho(4, 4);
    for (std::size_t r = 0; r < 4; ++r) {
        Mat M = matmul(transpose(le[b]), matmul(B[r], re[b + 2]));
        for (std::size_t c = 0; c < 4; ++c) rho(r, c) = frob_inner(M, B[c]);
    }
    return rho;
}

// Normalized RDM D_{b,b+1}; trace 1, symmetric.
inline Mat reduced_density_matrix(const Vec& x, const MpsShape& sh, std::size_t b) {
    auto le = mps_left_envs(x, sh);
    auto re = mps_right_envs(x, sh);
    const double z2 = le[sh.length](0, 0);
    if (z2 <= 0.0) throw std::runtime_error("mps: vanishing norm");
    Mat rho = mps_rdm_unnormalized(x, sh, b, le, re);
    for (double& v : rho.a) v /= z2;
    return rho;
}

// Dense amplitude vector W_s over all 2^L bitstrings; s_0 is the most
// significant bit.
inline Vec mps_amplitudes(const Vec& x, const MpsShape& sh) {
    if (sh.length > kMpsDenseGuard)
        throw std::invalid_argument("mps_amplitudes: L exceeds dense guard");
    std::vector<Vec> cur = {{1.0}};  // row vectors over the current bond
    for (std::size_t k = 0; k < sh.length; ++k) {
        std::vector<Vec> next(cur.size() * 2);
        for (std::size_t p = 0; p < cur.size(); ++p)
            for (std::size_t s = 0; s < 2; ++s) {
                Mat A = site_matrix(x, sh, k, s);
                Vec row(sh.dr(k), 0.0);
                for (std::size_t a = 0; a < sh.dl(k); ++a)
                    for (std::size_t b = 0; b < sh.dr(k); ++b) row[b] += cur[p][a] * A(a, b);
                next[p * 2 + s] = std::move(row);
            }
        cur = std::move(next);
    }
    Vec w(cur.size());
    for (std::size_t i = 0; i < cur.size(); ++i) w[i] = cur[i][0];
    return w;
}

// ---------------------------------------------------------------------------
// Target data

struct TargetData {
    std::size_t length = 0;
    double noise_amplitude = 0.0;
    std::uint64_t source_seed = 0;
    std::vector<Mat> targets;  // L-1 symmetric 4x4 matrices
};

namespace detail {

// Dense open-chain antiferromagnetic Heisenberg Hamiltonian action,
// H = sum_i (sx sx + sy sy + sz sz) on neighbors, in the z basis.
inline Vec heisenberg_apply(const Vec& psi, std::size_t L) {
    const std::size_t dim = std::size_t{1} << L;
    Vec out(dim, 0.0);
    for (std::size_t n = 0; n < dim; ++n) {
        const double amp = psi[n];
        if (amp == 0.0) continue;
        for (std::size_t i = 0; i + 1 < L; ++i) {
            const std::size_t b1 = (n >> (L - 1 - i)) & 1u;
            const std::size_t b2 = (n >> (L - 2 - i)) & 1u;
            out[n] += (b1 == b2 ? 1.0 : -1.0) * amp;  // sz sz
            if (b1 != b2) {
                const std::size_t flipped =
                    n ^ ((std::size_t{1} << (L - 1 - i)) | (std::size_t{1} << (L - 2 - i)));
                out[flipped] += 2.0 * amp;  // sx sx + sy sy
            }
        }
    }
    return out;
}

// Two-site RDM of a dense state at sites (b, b+1).
inline Mat dense_rdm(const Vec& psi, std::size_t L, std::size_t b) {
    const std::size_t hi_shift = L - 1 - b, lo_shift = L - 2 - b;
    const std::size_t lo_mask = (std::size_t{1} << lo_shift) - 1;
    Mat rho(4, 4);
    double norm2v = 0.0;
    for (double a : psi) norm2v += a * a;
    const std::size_t dim = psi.size();
    for (std::size_t n = 0; n < dim; ++n) {
        const std::size_t s = (n >> hi_shift) & 1u, t = (n >> lo_shift) & 1u;
        const std::size_t base = n & ~((std::size_t{1} << hi_shift) | (std::size_t{1} << lo_shift));
        (void)lo_mask;
        for (std::size_t sp = 0; sp < 2; ++sp)
            for (std::size_t tp = 0; tp < 2; ++tp) {
                const std::size_t m = base | (sp << hi_shift) | (tp << lo_shift);
                rho(s * 2 + t, sp * 2 + tp) += psi[n] * psi[m];
            }
    }
    for (double& v : rho.a) v /= norm2v;
    return rho;
}

}  // namespace detail

// Ground state of the open Heisenberg chain by shifted power iteration.
// Tolerance is on the eigen-residual of the Rayleigh quotient.
inline Vec heisenberg_ground_state(std::size_t L, std::uint64_t seed, double tol = 1e-10,
                                   std::size_t max_iters = 500000) {
    if (L < 2 || L > kMpsDenseGuard)
        throw std::invalid_argument("heisenberg_ground_state: L out of range");
    const std::size_t dim = std::size_t{1} << L;
    const double shift = 3.0 * static_cast<double>(L - 1) + 1.0;  // > ||H||
    std::mt19937_64 rng(seed);
    Vec psi = random_unit(dim, rng);
    for (std::size_t it = 0; it < max_iters; ++it) {
        Vec h = detail::heisenberg_apply(psi, L);
        const double theta = dot(psi, h);
        Vec resid = h;
        axpy(-theta, psi, resid);
        if (norm2(resid) <= tol) return psi;
        Vec next = scaled(psi, shift);
        axpy(-1.0, h, next);
        scal(1.0 / norm2(next), next);
        psi = std::move(next);
    }
    throw std::runtime_error("heisenberg_ground_state: power iteration did not converge");
}

// Exact ground-state RDMs plus i.i.d. uniform(-amplitude, amplitude) noise on
// every element; each noisy matrix is symmetrized, traces are left untouched.
// Beyond the dense guard the exact ground state is out of reach, so the clean
// targets come from the RDMs of a seeded random MPS (D = 4) instead.
inline TargetData generate_target_data(std::size_t L, double noise_amplitude, std::uint64_t seed) {
    TargetData data;
    data.length = L;
    data.noise_amplitude = noise_amplitude;
    data.source_seed = seed;
    std::vector<Mat> clean;
    if (L <= kMpsDenseGuard) {
        Vec psi = heisenberg_ground_state(L, seed);
        for (std::size_t b = 0; b + 1 < L; ++b) clean.push_back(detail::dense_rdm(psi, L, b));
    } else {
        MpsShape sh(L, 4);
        std::mt19937_64 init_rng(seed);
        Vec x = random_normal(sh.parameter_count(), init_rng, 0.5);
        for (std::size_t b = 0; b + 1 < L; ++b) clean.push_back(reduced_density_matrix(x, sh, b));
    }
    std::mt19937_64 rng(seed ^ 0xda3e39cb94b95bdbULL);
    std::uniform_real_distribution<double> noise(-noise_amplitude, noise_amplitude);
    for (std::size_t b = 0; b + 1 < L; ++b) {
        Mat rho = std::move(clean[b]);
        if (noise_amplitude > 0.0)
            for (double& v : rho.a) v += noise(rng);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = i + 1; j < 4; ++j) {
                const double v = 0.5 * (rho(i, j) + rho(j, i));
                rho(i, j) = rho(j, i) = v;
            }
        data.targets.push_back(std::move(rho));
    }
    return data;
}

// Textual format: line 1 "L noise_amplitude seed", then L-1 blocks of 16
// row-major reals. 17 significant digits, so a round trip is bit exact.
inline void write_target_data(const TargetData& data, std::ostream& out) {
    out << data.length << ' ' << std::setprecision(17) << data.noise_amplitude << ' '
        << data.source_seed << '\n';
    for (const Mat& m : data.targets) {
        for (std::size_t i = 0; i < 16; ++i) out << std::setprecision(17) << m.a[i] << (i % 4 == 3 ? '\n' : ' ');
        out << '\n';
    }
}

inline void write_target_data_file(const TargetData& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    write_target_data(data, out);
}

inline TargetData read_target_data(std::istream& in) {
    TargetData data;
    if (!(in >> data.length >> data.noise_amplitude >> data.source_seed))
        throw std::runtime_error("target data: bad header");
    for (std::size_t b = 0; b + 1 < data.length; ++b) {
        Mat m(4, 4);
        for (std::size_t i = 0; i < 16; ++i)
            if (!(in >> m.a[i])) throw std::runtime_error("target data: truncated block");
        data.targets.push_back(std::move(m));
    }
    return data;
}

inline TargetData read_target_data_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open target data file: " + path);
    return read_target_data(in);
}

// ---------------------------------------------------------------------------
// Cost and gradient

inline double lsm_cost(const Vec& x, const MpsShape& sh, const TargetData& data) {
    if (data.length != sh.length) throw std::invalid_argument("lsm_cost: shape mismatch");
    auto le = mps_left_envs(x, sh);
    auto re = mps_right_envs(x, sh);
    const double z2 = le[sh.length](0, 0);
    double cost = 0.0;
    for (std::size_t b = 0; b + 1 < sh.length; ++b) {
        Mat rho = mps_rdm_unnormalized(x, sh, b, le, re);
        for (std::size_t i = 0; i < 16; ++i) {
            const double diff = rho.a[i] / z2 - data.targets[b].a[i];
            cost += diff * diff;
        }
    }
    return cost / static_cast<double>(sh.length);
}

namespace detail {

// Gradient of sum_b <W_b, rho~_b> with respect to all tensor elements.
// Each W_b must be symmetric; pass a zero matrix to skip a bond.
inline Vec rdm_weighted_gradient_unnormalized(const Vec& x, const MpsShape& sh,
                                              const std::vector<Mat>& weights,
                                              const std::vector<Mat>& le,
                                              const std::vector<Mat>& re) {
    const std::size_t L = sh.length;
    Vec g(sh.parameter_count(), 0.0);
    for (std::size_t b = 0; b + 1 < L; ++b) {
        const Mat& W = weights[b];
        bool zero = true;
        for (double v : W.a)
            if (v != 0.0) { zero = false; break; }
        if (zero) continue;

        std::array<Mat, 4> B;
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t t = 0; t < 2; ++t)
                B[s * 2 + t] = matmul(site_matrix(x, sh, b, s), site_matrix(x, sh, b + 1, t));

        // Center blocks folded with the weight:
        //   F (at bond b, ket x bra)  = sum_W B[st] re[b+2] B[s't']^T
        //   Hc (at bond b+2)          = sum_W B[st]^T le[b] B[s't']
        Mat F(sh.dl(b), sh.dl(b));
        Mat Hc(sh.dr(b + 1), sh.dr(b + 1));
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 4; ++c) {
                const double w = W(r, c);
                if (w == 0.0) continue;
                Mat f = matmul(B[r], matmul(re[b + 2], transpose(B[c])));
                Mat h = matmul(transpose(B[r]), matmul(le[b], B[c]));
                for (std::size_t i = 0; i < F.a.size(); ++i) F.a[i] += w * f.a[i];
                for (std::size_t i = 0; i < Hc.a.size(); ++i) Hc.a[i] += w * h.a[i];
            }

        // On-center holes (factor 2 covers the bra-side hole, W symmetric).
        for (std::size_t sig = 0; sig < 2; ++sig) {
            Mat acc_b(sh.dl(b), sh.dr(b));
            Mat acc_b1(sh.dl(b + 1), sh.dr(b + 1));
            for (std::size_t t = 0; t < 2; ++t) {
                Mat core_b(sh.dl(b), sh.dr(b + 1));   // sum over (s',t') for hole at site b
                Mat core_b1(sh.dl(b), sh.dr(b + 1));  // hole at site b+1 (sig plays role of t)
                for (std::size_t c = 0; c < 4; ++c) {
                    const double wb = W(sig * 2 + t, c);
                    const double wb1 = W(t * 2 + sig, c);
                    if (wb == 0.0 && wb1 == 0.0) continue;
                    Mat base = matmul(le[b], matmul(B[c], transpose(re[b + 2])));
                    if (wb != 0.0)
                        for (std::size_t i = 0; i < core_b.a.size(); ++i)
                            core_b.a[i] += wb * base.a[i];
                    if (wb1 != 0.0)
                        for (std::size_t i = 0; i < core_b1.a.size(); ++i)
                            core_b1.a[i] += wb1 * base.a[i];
                }
                Mat gb = matmul(core_b, transpose(site_matrix(x, sh, b + 1, t)));
                Mat gb1 = matmul(transpose(site_matrix(x, sh, b, t)), core_b1);
                for (std::size_t i = 0; i < acc_b.a.size(); ++i) acc_b.a[i] += gb.a[i];
                for (std::size_t i = 0; i < acc_b1.a.size(); ++i) acc_b1.a[i] += gb1.a[i];
            }
            add_site_matrix(g, sh, b, sig, acc_b, 2.0);
            add_site_matrix(g, sh, b + 1, sig, acc_b1, 2.0);
        }

        // Holes left of the center: sweep Psi inward from F.
        if (b > 0) {
            Mat psi = F;
            for (std::size_t j = b; j-- > 0;) {
                for (std::size_t s = 0; s < 2; ++s) {
                    Mat grad = matmul(le[j], matmul(site_matrix(x, sh, j, s), transpose(psi)));
                    add_site_matrix(g, sh, j, s, grad, 2.0);
                }
                if (j == 0) break;
                Mat next(sh.dl(j), sh.dl(j));
                for (std::size_t s = 0; s < 2; ++s) {
                    Mat A = site_matrix(x, sh, j, s);
                    Mat t = matmul(A, matmul(psi, transpose(A)));
                    for (std::size_t i = 0; i < next.a.size(); ++i) next.a[i] += t.a[i];
                }
                psi = std::move(next);
            }
        }

        // Holes right of the center: sweep Phi inward from Hc.
        if (b + 2 < L) {
            Mat phi = Hc;
            for (std::size_t j = b + 2; j < L; ++j) {
                for (std::size_t s = 0; s < 2; ++s) {
                    Mat grad = matmul(phi, matmul(site_matrix(x, sh, j, s), transpose(re[j + 1])));
                    add_site_matrix(g, sh, j, s, grad, 2.0);
                }
                if (j + 1 == L) break;
                Mat next(sh.dr(j), sh.dr(j));
                for (std::size_t s = 0; s < 2; ++s) {
                    Mat A = site_matrix(x, sh, j, s);
                    Mat t = matmul(transpose(A), matmul(phi, A));
                    for (std::size_t i = 0; i < next.a.size(); ++i) next.a[i] += t.a[i];
                }
                phi = std::move(next);
            }
        }
    }
    return g;
}

// Gradient of Z^2.
inline Vec z2_gradient(const Vec& x, const MpsShape& sh, const std::vector<Mat>& le,
                       const std::vector<Mat>& re) {
    Vec g(sh.parameter_count(), 0.0);
    for (std::size_t k = 0; k < sh.length; ++k)
        for (std::size_t s = 0; s < 2; ++s) {
            Mat grad = matmul(le[k], matmul(site_matrix(x, sh, k, s), transpose(re[k + 1])));
            add_site_matrix(g, sh, k, s, grad, 2.0);
        }
    return g;
}

// Gradient of sum_b <W_b, D_b> for the normalized RDMs D_b = rho~_b / Z^2.
inline Vec rdm_weighted_gradient(const Vec& x, const MpsShape& sh,
                                 const std::vector<Mat>& weights) {
    auto le = mps_left_envs(x, sh);
    auto re = mps_right_envs(x, sh);
    const double z2 = le[sh.length](0, 0);
    Vec g = rdm_weighted_gradient_unnormalized(x, sh, weights, le, re);
    scal(1.0 / z2, g);
    double inner = 0.0;  // sum_b <W_b, D_b>
    for (std::size_t b = 0; b + 1 < sh.length; ++b) {
        Mat rho = mps_rdm_unnormalized(x, sh, b, le, re);
        inner += frob_inner(weights[b], rho) / z2;
    }
    Vec zg = z2_gradient(x, sh, le, re);
    axpy(-inner / z2, zg, g);
    return g;
}

// Directional derivatives dD_b(v) of all normalized RDMs.
inline std::vector<Mat> rdm_jvp(const Vec& x, const Vec& v, const MpsShape& sh,
                                const std::vector<Mat>& le, const std::vector<Mat>& re) {
    const std::size_t L = sh.length;
    const double z2 = le[L](0, 0);
    auto lm = mps_left_envs_mixed(x, v, sh, le);
    auto rm = mps_right_envs_mixed(x, v, sh, re);
    const double dz2 = 2.0 * lm[L](0, 0);

    std::vector<Mat> out;
    for (std::size_t b = 0; b + 1 < L; ++b) {
        std::array<Mat, 4> B, dB;
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t t = 0; t < 2; ++t) {
                Mat Ab = site_matrix(x, sh, b, s), Ab1 = site_matrix(x, sh, b + 1, t);
                Mat Vb = site_matrix(v, sh, b, s), Vb1 = site_matrix(v, sh, b + 1, t);
                B[s * 2 + t] = matmul(Ab, Ab1);
                Mat d = matmul(Vb, Ab1);
                Mat d2 = matmul(Ab, Vb1);
                for (std::size_t i = 0; i < d.a.size(); ++i) d.a[i] += d2.a[i];
                dB[s * 2 + t] = std::move(d);
            }
        Mat K(4, 4);
        for (std::size_t r = 0; r < 4; ++r) {
            Mat m1 = matmul(transpose(lm[b]), matmul(B[r], re[b + 2]));
            Mat m2 = matmul(transpose(le[b]), matmul(dB[r], re[b + 2]));
            Mat m3 = matmul(transpose(le[b]), matmul(B[r], rm[b + 2]));
            for (std::size_t i = 0; i < m1.a.size(); ++i) m1.a[i] += m2.a[i] + m3.a[i];
            for (std::size_t c = 0; c < 4; ++c) K(r, c) = frob_inner(m1, B[c]);
        }
        Mat rho = mps_rdm_unnormalized(x, sh, b, le, re);
        Mat dD(4, 4);
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 4; ++c)
                dD(r, c) = (K(r, c) + K(c, r)) / z2 - rho(r, c) / z2 * (dz2 / z2);
        out.push_back(std::move(dD));
    }
    return out;
}

}  // namespace detail

inline Vec lsm_gradient(const Vec& x, const MpsShape& sh, const TargetData& data) {
    if (data.length != sh.length) throw std::invalid_argument("lsm_gradient: shape mismatch");
    auto le = mps_left_envs(x, sh);
    auto re = mps_right_envs(x, sh);
    const double z2 = le[sh.length](0, 0);
    std::vector<Mat> weights;
    for (std::size_t b = 0; b + 1 < sh.length; ++b) {
        Mat rho = mps_rdm_unnormalized(x, sh, b, le, re);
        Mat w(4, 4);
        for (std::size_t i = 0; i < 16; ++i)
            w.a[i] = 2.0 / static_cast<double>(sh.length) * (rho.a[i] / z2 - data.targets[b].a[i]);
        weights.push_back(std::move(w));
    }
    return detail::rdm_weighted_gradient(x, sh, weights);
}

// ---------------------------------------------------------------------------
// Reference maps

// x -> all 16(L-1) normalized RDM entries, with O(L D^3) products.
inline ReferenceMap mps_density_map(const MpsShape& sh) {
    ReferenceMap map;
    map.dim_x = sh.parameter_count();
    map.dim_y = 16 * (sh.length - 1);
    map.eval = [sh](const Vec& x) {
        auto le = mps_left_envs(x, sh);
        auto re = mps_right_envs(x, sh);
        const double z2 = le[sh.length](0, 0);
        Vec y;
        y.reserve(16 * (sh.length - 1));
        for (std::size_t b = 0; b + 1 < sh.length; ++b) {
            Mat rho = mps_rdm_unnormalized(x, sh, b, le, re);
            for (double val : rho.a) y.push_back(val / z2);
        }
        return y;
    };
    map.jvp = [sh](const Vec& x, const Vec& v) {
        auto le = mps_left_envs(x, sh);
        auto re = mps_right_envs(x, sh);
        auto dds = detail::rdm_jvp(x, v, sh, le, re);
        Vec out;
        out.reserve(16 * (sh.length - 1));
        for (const Mat& m : dds)
            for (double val : m.a) out.push_back(val);
        return out;
    };
    map.vjp = [sh](const Vec& x, const Vec& w) {
        std::vector<Mat> weights;
        for (std::size_t b = 0; b + 1 < sh.length; ++b) {
            Mat m(4, 4);
            for (std::size_t i = 0; i < 16; ++i) m.a[i] = w[16 * b + i];
            // symmetrize; the RDMs are symmetric so only the symmetric part acts
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = i + 1; j < 4; ++j) {
                    const double val = 0.5 * (m(i, j) + m(j, i));
                    m(i, j) = m(j, i) = val;
                }
            weights.push_back(std::move(m));
        }
        return detail::rdm_weighted_gradient(x, sh, weights);
    };
    return map;
}

namespace detail {

// Prefix products: prefix[k] has 2^k rows of length dl(k); suffix[k] has
// 2^(L-k) rows of length dl(k). W_s = prefix[k][pre] . suffix[k][suf].
struct AmplitudeTables {
    std::vector<Mat> prefix, suffix;  // index k = 0..L
};

inline AmplitudeTables amplitude_tables(const Vec& x, const MpsShape& sh) {
    const std::size_t L = sh.length;
    if (L > kMpsDenseGuard) throw std::invalid_argument("mps: L exceeds dense guard");
    AmplitudeTables t;
    t.prefix.resize(L + 1);
    t.suffix.resize(L + 1);
    t.prefix[0] = Mat(1, 1);
    t.prefix[0](0, 0) = 1.0;
    for (std::size_t k = 0; k < L; ++k) {
        const std::size_t rows = std::size_t{1} << (k + 1);
        Mat next(rows, sh.dr(k));
        const Mat A[2] = {site_matrix(x, sh, k, 0), site_matrix(x, sh, k, 1)};
        for (std::size_t p = 0; p < (std::size_t{1} << k); ++p)
            for (std::size_t s = 0; s < 2; ++s)
                for (std::size_t a = 0; a < sh.dl(k); ++a) {
                    const double pa = t.prefix[k](p, a);
                    if (pa == 0.0) continue;
                    for (std::size_t b = 0; b < sh.dr(k); ++b)
                        next(p * 2 + s, b) += pa * A[s](a, b);
                }
        t.prefix[k + 1] = std::move(next);
    }
    t.suffix[L] = Mat(1, 1);
    t.suffix[L](0, 0) = 1.0;
    for (std::size_t k = L; k-- > 0;) {
        const std::size_t rows = std::size_t{1} << (L - k);
        Mat next(rows, sh.dl(k));
        const Mat A[2] = {site_matrix(x, sh, k, 0), site_matrix(x, sh, k, 1)};
        // suffix row index carries s_k as its most significant bit
        for (std::size_t q = 0; q < (std::size_t{1} << (L - k - 1)); ++q)
            for (std::size_t s = 0; s < 2; ++s)
                for (std::size_t a = 0; a < sh.dl(k); ++a) {
                    double acc = 0.0;
                    for (std::size_t b = 0; b < sh.dr(k); ++b)
                        acc += A[s](a, b) * t.suffix[k + 1](q, b);
                    next((s << (L - k - 1)) | q, a) = acc;
                }
        t.suffix[k] = std::move(next);
    }
    return t;
}

inline Vec amplitude_jvp(const Vec& x, const Vec& v, const MpsShape& sh,
                         const AmplitudeTables& t) {
    const std::size_t L = sh.length;
    const std::size_t dim = std::size_t{1} << L;
    Vec out(dim, 0.0);
    for (std::size_t j = 0; j < L; ++j) {
        const std::size_t hi = L - 1 - j;
        const Mat V[2] = {site_matrix(v, sh, j, 0), site_matrix(v, sh, j, 1)};
        for (std::size_t n = 0; n < dim; ++n) {
            const std::size_t pre = n >> (hi + 1);
            const std::size_t s = (n >> hi) & 1u;
            const std::size_t suf = n & ((std::size_t{1} << hi) - 1);
            double acc = 0.0;
            for (std::size_t a = 0; a < sh.dl(j); ++a) {
                const double pa = t.prefix[j](pre, a);
                if (pa == 0.0) continue;
                for (std::size_t b = 0; b < sh.dr(j); ++b)
                    acc += pa * V[s](a, b) * t.suffix[j + 1](suf, b);
            }
            out[n] += acc;
        }
    }
    return out;
}

inline Vec amplitude_vjp(const Vec& x, const Vec& u, const MpsShape& sh,
                         const AmplitudeTables& t) {
    const std::size_t L = sh.length;
    const std::size_t dim = std::size_t{1} << L;
    Vec g(sh.parameter_count(), 0.0);
    for (std::size_t j = 0; j < L; ++j) {
        const std::size_t hi = L - 1 - j;
        Mat acc0(sh.dl(j), sh.dr(j)), acc1(sh.dl(j), sh.dr(j));
        for (std::size_t n = 0; n < dim; ++n) {
            const double un = u[n];
            if (un == 0.0) continue;
            const std::size_t pre = n >> (hi + 1);
            const std::size_t s = (n >> hi) & 1u;
            const std::size_t suf = n & ((std::size_t{1} << hi) - 1);
            Mat& acc = s == 0 ? acc0 : acc1;
            for (std::size_t a = 0; a < sh.dl(j); ++a) {
                const double pa = t.prefix[j](pre, a);
                if (pa == 0.0) continue;
                for (std::size_t b = 0; b < sh.dr(j); ++b)
                    acc(a, b) += un * pa * t.suffix[j + 1](suf, b);
            }
        }
        add_site_matrix(g, sh, j, 0, acc0);
        add_site_matrix(g, sh, j, 1, acc1);
    }
    return g;
}

}  // namespace detail

// x -> dense unnormalized amplitudes W_s (test oracle and Hilbert building
// block; guarded at L <= 14).
inline ReferenceMap mps_amplitude_map(const MpsShape& sh) {
    ReferenceMap map;
    map.dim_x = sh.parameter_count();
    map.dim_y = std::size_t{1} << sh.length;
    map.eval = [sh](const Vec& x) { return mps_amplitudes(x, sh); };
    map.jvp = [sh](const Vec& x, const Vec& v) {
        auto t = detail::amplitude_tables(x, sh);
        return detail::amplitude_jvp(x, v, sh, t);
    };
    map.vjp = [sh](const Vec& x, const Vec& u) {
        auto t = detail::amplitude_tables(x, sh);
        return detail::amplitude_vjp(x, u, sh, t);
    };
    return map;
}

// x -> normalized amplitudes Y_s = W_s / Z.
inline ReferenceMap mps_hilbert_map(const MpsShape& sh) {
    ReferenceMap map = mps_amplitude_map(sh);
    auto raw_eval = map.eval;
    auto raw_jvp = map.jvp;
    auto raw_vjp = map.vjp;
    map.eval = [raw_eval](const Vec& x) {
        Vec w = raw_eval(x);
        scal(1.0 / norm2(w), w);
        return w;
    };
    map.jvp = [raw_eval, raw_jvp](const Vec& x, const Vec& v) {
        Vec w = raw_eval(x);
        const double z = norm2(w);
        Vec dw = raw_jvp(x, v);
        const double proj = dot(w, dw) / (z * z);
        Vec out = dw;
        axpy(-proj, w, out);
        scal(1.0 / z, out);
        return out;
    };
    map.vjp = [raw_eval, raw_vjp](const Vec& x, const Vec& u) {
        Vec w = raw_eval(x);
        const double z = norm2(w);
        Vec proj = u;
        axpy(-dot(w, u) / (z * z), w, proj);
        scal(1.0 / z, proj);
        return raw_vjp(x, proj);
    };
    return map;
}

namespace detail {

// The quartic reference cost on normalized amplitudes:
//   Lbar(Y) = (1/L) sum_b || rho_b(Y) - T_b ||_F^2,
//   rho_b(Y)[(st),(s't')] = sum_env Y[..st..] Y[..s't'..]
// Mixed bilinear form M_b(u, y) and the local weight application (W . y)
// are the two primitives; both run over the dense 2^L index.
inline Mat dense_rdm_mixed(const Vec& u, const Vec& y, std::size_t L, std::size_t b) {
    const std::size_t hi = L - 1 - b, lo = L - 2 - b;
    Mat m(4, 4);
    const std::size_t dim = std::size_t{1} << L;
    for (std::size_t n = 0; n < dim; ++n) {
        const std::size_t s = (n >> hi) & 1u, t = (n >> lo) & 1u;
        const std::size_t base = n & ~((std::size_t{1} << hi) | (std::size_t{1} << lo));
        for (std::size_t sp = 0; sp < 2; ++sp)
            for (std::size_t tp = 0; tp < 2; ++tp)
                m(s * 2 + t, sp * 2 + tp) += u[n] * y[base | (sp << hi) | (tp << lo)];
    }
    return m;
}

inline Vec dense_local_apply(const Mat& W, const Vec& y, std::size_t L, std::size_t b) {
    const std::size_t hi = L - 1 - b, lo = L - 2 - b;
    const std::size_t dim = std::size_t{1} << L;
    Vec out(dim, 0.0);
    for (std::size_t n = 0; n < dim; ++n) {
        const std::size_t s = (n >> hi) & 1u, t = (n >> lo) & 1u;
        const std::size_t base = n & ~((std::size_t{1} << hi) | (std::size_t{1} << lo));
        double acc = 0.0;
        for (std::size_t sp = 0; sp < 2; ++sp)
            for (std::size_t tp = 0; tp < 2; ++tp)
                acc += W(s * 2 + t, sp * 2 + tp) * y[base | (sp << hi) | (tp << lo)];
        out[n] = acc;
    }
    return out;
}

inline Vec quartic_reference_gradient(const Vec& y, std::size_t L, const TargetData& data) {
    Vec g(y.size(), 0.0);
    for (std::size_t b = 0; b + 1 < L; ++b) {
        Mat R = dense_rdm_mixed(y, y, L, b);
        for (std::size_t i = 0; i < 16; ++i) R.a[i] -= data.targets[b].a[i];
        Vec term = dense_local_apply(R, y, L, b);
        axpy(4.0 / static_cast<double>(L), term, g);
    }
    return g;
}

inline Vec quartic_reference_hvp(const Vec& y, const Vec& u, std::size_t L,
                                 const TargetData& data) {
    Vec g(y.size(), 0.0);
    for (std::size_t b = 0; b + 1 < L; ++b) {
        Mat R = dense_rdm_mixed(y, y, L, b);
        for (std::size_t i = 0; i < 16; ++i) R.a[i] -= data.targets[b].a[i];
        Mat K = dense_rdm_mixed(u, y, L, b);
        Mat dR(4, 4);
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 4; ++c) dR(r, c) = K(r, c) + K(c, r);
        Vec t1 = dense_local_apply(dR, y, L, b);
        Vec t2 = dense_local_apply(R, u, L, b);
        axpy(4.0 / static_cast<double>(L), t1, g);
        axpy(4.0 / static_cast<double>(L), t2, g);
    }
    return g;
}

}  // namespace detail

// Metric operators -----------------------------------------------------------

// Eq.-style density metric: pullback of the Euclidean metric through the
// normalized-RDM map.
inline LinearOperator metric_density_reference(const Vec& x, const MpsShape& sh) {
    return pullback_metric(mps_density_map(sh), euclidean_reference(), x);
}

// Pullback of the Euclidean Hilbert-space metric through Y_s = W_s / Z.
inline LinearOperator metric_hilbert_identity(const Vec& x, const MpsShape& sh) {
    return pullback_metric(mps_hilbert_map(sh), euclidean_reference(), x);
}

// Pullback of the quartic reference Hessian (+ eps shift) through Y_s = W_s/Z.
inline LinearOperator metric_hilbert_hessian(const Vec& x, const MpsShape& sh,
                                             const TargetData& data,
                                             const HessianRegularization& reg) {
    ReferenceMetric href = hessian_reference(
        [L = sh.length, data](const Vec& y, const Vec& u) {
            return detail::quartic_reference_hvp(y, u, L, data);
        },
        reg);
    return pullback_metric(mps_hilbert_map(sh), href, x);
}

// Gram metric of unnormalized amplitudes, evaluated by transfer contractions
// without enumerating the 2^L states.
inline LinearOperator metric_mps_amplitude(const Vec& x, const MpsShape& sh) {
    LinearOperator op;
    op.dim = sh.parameter_count();
    op.apply = [x, sh](const Vec& v) {
        auto le = mps_left_envs(x, sh);
        auto re = mps_right_envs(x, sh);
        auto lm = mps_left_envs_mixed(x, v, sh, le);
        auto rm = mps_right_envs_mixed(x, v, sh, re);
        Vec out(sh.parameter_count(), 0.0);
        for (std::size_t j = 0; j < sh.length; ++j)
            for (std::size_t s = 0; s < 2; ++s) {
                Mat A = site_matrix(x, sh, j, s);
                Mat V = site_matrix(v, sh, j, s);
                Mat g1 = matmul(transpose(lm[j]), matmul(A, re[j + 1]));
                Mat g2 = matmul(transpose(le[j]), matmul(V, re[j + 1]));
                Mat g3 = matmul(transpose(le[j]), matmul(A, rm[j + 1]));
                for (std::size_t i = 0; i < g1.a.size(); ++i) g1.a[i] += g2.a[i] + g3.a[i];
                add_site_matrix(out, sh, j, s, g1);
            }
        return out;
    };
    return op;
}

// ---------------------------------------------------------------------------

struct MpsProblemOptions {
    std::size_t power_iters = 100;
    std::uint64_t seed = 0;
    // MPS Gram metrics carry near-gauge modes (eigenvalues ~1e-6 next to an
    // exact gauge null space); the stock 1e-10 ridge lets CG amplify those
    // modes into directions that barely move the state.
    double ridge_scale = 1e-3;
};

// Metrics: density, mps_amplitude, identity; plus hilbert_identity and
// hilbert_hessian when L is within the dense guard. The eps_H estimate for
// the Hilbert Hessian is frozen at the starting point.
inline Problem make_mps_problem(const MpsShape& sh, const TargetData& data, const Vec& x0,
                                const MpsProblemOptions& opts = {}) {
    if (data.length != sh.length) throw std::invalid_argument("make_mps_problem: shape mismatch");
    Problem p;
    p.dim = sh.parameter_count();
    p.cost = [sh, data](const Vec& x) { return lsm_cost(x, sh, data); };
    p.gradient = [sh, data](const Vec& x) { return lsm_gradient(x, sh, data); };

    const std::uint64_t seed = opts.seed;
    const double rs = opts.ridge_scale;
    p.metrics["density"] = [sh, seed, rs](const Vec& x) {
        LinearOperator op = metric_density_reference(x, sh);
        return add_ridge(std::move(op), default_ridge(op, seed, rs));
    };
    p.metrics["mps_amplitude"] = [sh, seed, rs](const Vec& x) {
        LinearOperator op = metric_mps_amplitude(x, sh);
        return add_ridge(std::move(op), default_ridge(op, seed, rs));
    };
    p.metrics["identity"] = [n = p.dim](const Vec&) { return identity_operator(n); };

    if (sh.length <= kMpsDenseGuard) {
        p.metrics["hilbert_identity"] = [sh, seed, rs](const Vec& x) {
            LinearOperator op = metric_hilbert_identity(x, sh);
            return add_ridge(std::move(op), default_ridge(op, seed, rs));
        };

        ReferenceMap hmap = mps_hilbert_map(sh);
        Vec y0 = hmap.eval(x0);
        HessianRegularization reg;
        reg.power_iters = opts.power_iters;
        reg.epsilon_h_estimate = estimate_min_eigenvalue(
            [&](const Vec& u) { return detail::quartic_reference_hvp(y0, u, sh.length, data); },
            y0.size(), opts.power_iters, opts.seed ^ 0x94d049bb133111ebULL);
        p.metrics["hilbert_hessian"] = [sh, data, reg, seed, rs](const Vec& x) {
            LinearOperator op = metric_hilbert_hessian(x, sh, data, reg);
            return add_ridge(std::move(op), default_ridge(op, seed, rs));
        };
    }
    return p;
}

// i.i.d. normal(0, 1/sqrt(D)) tensor entries.
inline Vec mps_initial_state(const MpsShape& sh, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return random_normal(sh.parameter_count(), rng,
                         1.0 / std::sqrt(static_cast<double>(sh.bond_dim)));
}

}  // namespace ngd

#endif
