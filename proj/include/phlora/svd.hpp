#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "phlora/errors.hpp"
#include "phlora/matrix.hpp"

namespace phlora {

// Thin SVD: m = u * diag(sigma) * vt with u (d x p), sigma (p, descending),
// vt (p x k), p <= min(d, k). Columns of u and rows of vt are orthonormal.
struct SvdResult {
    Matrix u;
    std::vector<double> sigma;
    Matrix vt;

    Matrix reconstruct() const {
        Matrix us = u;
        for (std::size_t i = 0; i < us.rows(); ++i)
            for (std::size_t j = 0; j < us.cols(); ++j)
                us(i, j) *= sigma[j];
        return matmul(us, vt);
    }
};

enum class SvdMethod { Exact, Randomized };

inline const char* to_string(SvdMethod m) {
    return m == SvdMethod::Exact ? "exact" : "randomized";
}

inline SvdMethod svd_method_from_string(const std::string& s) {
    if (s == "exact") return SvdMethod::Exact;
    if (s == "randomized") return SvdMethod::Randomized;
    throw ValidationError("unknown SVD method '" + s + "' (expected exact|randomized)");
}

namespace detail {

constexpr int kMaxJacobiSweeps = 100;
constexpr double kJacobiTol = 1.0e-15;

inline double column_dot(const Matrix& m, std::size_t p, std::size_t q) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, p) * m(i, q);
    return s;
}

// One-sided Jacobi on a tall matrix (rows >= cols). Rotates column pairs of
// `work` until all pairs are mutually orthogonal, accumulating the rotations
// in `v`. On return the columns of `work` are sigma_j * u_j.
inline void jacobi_orthogonalize(Matrix& work, Matrix& v) {
    const std::size_t n = work.cols();
    if (n < 2) return;
    int sweep = 0;
    bool converged = false;
    while (sweep < kMaxJacobiSweeps && !converged) {
        converged = true;
        ++sweep;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double app = column_dot(work, p, p);
                const double aqq = column_dot(work, q, q);
                const double apq = column_dot(work, p, q);
                if (std::abs(apq) <= kJacobiTol * std::sqrt(app) * std::sqrt(aqq)) continue;
                converged = false;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::size_t i = 0; i < work.rows(); ++i) {
                    const double wp = work(i, p), wq = work(i, q);
                    work(i, p) = c * wp - s * wq;
                    work(i, q) = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < v.rows(); ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
    }
    if (!converged) {
        throw ConvergenceFailure("one-sided Jacobi exceeded " +
                                 std::to_string(kMaxJacobiSweeps) + " sweeps");
    }
}

// Fill exactly-zero columns of an orthonormal-column matrix with unit vectors
// orthogonal to all other columns (needed so rank-deficient inputs still yield
// a valid thin factor; the paired singular value is zero, so the
// reconstruction is unaffected).
inline void complete_zero_columns(Matrix& u, const std::vector<bool>& is_zero) {
    const std::size_t m = u.rows(), n = u.cols();
    for (std::size_t j = 0; j < n; ++j) {
        if (!is_zero[j]) continue;
        for (std::size_t basis = 0; basis < m; ++basis) {
            std::vector<double> cand(m, 0.0);
            cand[basis] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t c = 0; c < n; ++c) {
                    if (c == j) continue;
                    if (is_zero[c] && c > j) continue; // not yet filled
                    double dot = 0.0;
                    for (std::size_t i = 0; i < m; ++i) dot += cand[i] * u(i, c);
                    for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * u(i, c);
                }
            }
            double norm = 0.0;
            for (double x : cand) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 0.5) {
                for (std::size_t i = 0; i < m; ++i) u(i, j) = cand[i] / norm;
                break;
            }
        }
    }
}

// Deterministic sign convention: the largest-magnitude entry of each column
// of u is made non-negative; the matching row of vt is flipped in tandem so
// the product is unchanged.
inline void canonicalize_signs(Matrix& u, Matrix& vt) {
    for (std::size_t j = 0; j < u.cols(); ++j) {
        std::size_t arg = 0;
        double best = 0.0;
        for (std::size_t i = 0; i < u.rows(); ++i) {
            const double a = std::abs(u(i, j));
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        if (u(arg, j) < 0.0) {
            for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
            for (std::size_t i = 0; i < vt.cols(); ++i) vt(j, i) = -vt(j, i);
        }
    }
}

} // namespace detail

inline SvdResult svd_thin(const Matrix& m) {
    const bool transposed = m.rows() < m.cols();
    Matrix work = transposed ? transpose(m) : m; // rows >= cols from here on
    const std::size_t n = work.cols();

    Matrix v = Matrix::identity(n);
    detail::jacobi_orthogonalize(work, v);

    // Column norms of the rotated matrix are the singular values.
    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        sigma[j] = std::sqrt(detail::column_dot(work, j, j));
    }

    // Stable descending sort; ties keep kernel order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    Matrix u_work(work.rows(), n);
    Matrix v_sorted(n, n);
    std::vector<double> sigma_sorted(n);
    std::vector<bool> zero_col(n, false);
    for (std::size_t jj = 0; jj < n; ++jj) {
        const std::size_t j = order[jj];
        sigma_sorted[jj] = sigma[j];
        if (sigma[j] == 0.0) {
            zero_col[jj] = true; // filled in below
        } else {
            for (std::size_t i = 0; i < work.rows(); ++i) u_work(i, jj) = work(i, j) / sigma[j];
        }
        for (std::size_t i = 0; i < n; ++i) v_sorted(i, jj) = v(i, j);
    }
    detail::complete_zero_columns(u_work, zero_col);

    SvdResult out;
    out.sigma = std::move(sigma_sorted);
    if (transposed) {
        // work held m^T = u_work * diag(sigma) * v_sorted^T, so
        // m = v_sorted * diag(sigma) * u_work^T.
        out.u = std::move(v_sorted);
        out.vt = transpose(u_work);
    } else {
        out.u = std::move(u_work);
        out.vt = transpose(v_sorted);
    }
    detail::canonicalize_signs(out.u, out.vt);
    return out;
}

namespace detail {

// Thin Q factor of a tall matrix via Householder reflections.
inline Matrix householder_q(const Matrix& y) {
    const std::size_t m = y.rows(), n = y.cols();
    Matrix a = y;
    std::vector<std::vector<double>> reflectors;
    reflectors.reserve(n);
    for (std::size_t k = 0; k < n && k < m; ++k) {
        double norm = 0.0;
        for (std::size_t i = k; i < m; ++i) norm += a(i, k) * a(i, k);
        norm = std::sqrt(norm);
        std::vector<double> v(m, 0.0);
        if (norm == 0.0) {
            v[k] = 1.0; // degenerate column; identity reflector keeps Q orthonormal
            reflectors.push_back(std::move(v));
            continue;
        }
        const double alpha = a(k, k) >= 0.0 ? -norm : norm;
        for (std::size_t i = k; i < m; ++i) v[i] = a(i, k);
        v[k] -= alpha;
        double vnorm = 0.0;
        for (std::size_t i = k; i < m; ++i) vnorm += v[i] * v[i];
        vnorm = std::sqrt(vnorm);
        if (vnorm == 0.0) {
            v[k] = 1.0;
        } else {
            for (std::size_t i = k; i < m; ++i) v[i] /= vnorm;
        }
        for (std::size_t j = k; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t i = k; i < m; ++i) dot += v[i] * a(i, j);
            for (std::size_t i = k; i < m; ++i) a(i, j) -= 2.0 * dot * v[i];
        }
        reflectors.push_back(std::move(v));
    }
    // Q = H_0 ... H_{l-1} applied to the first n columns of the identity.
    Matrix q(m, n);
    for (std::size_t j = 0; j < n; ++j) q(j, j) = 1.0;
    for (std::size_t kk = reflectors.size(); kk-- > 0;) {
        const auto& v = reflectors[kk];
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t i = kk; i < m; ++i) dot += v[i] * q(i, j);
            for (std::size_t i = kk; i < m; ++i) q(i, j) -= 2.0 * dot * v[i];
        }
    }
    return q;
}

} // namespace detail

// Range-finder randomized SVD (Gaussian sketch + power iterations). Accurate
// for spectra that decay past rank r; the exact path is the reference.
struct RandomizedConfig {
    std::size_t oversample = 10;
    int power_iterations = 2;
    std::uint64_t seed = 42;
};

inline SvdResult svd_randomized(const Matrix& m, std::size_t r,
                                const RandomizedConfig& cfg = {}) {
    const std::size_t p = std::min(m.rows(), m.cols());
    const std::size_t sketch = std::min(r + cfg.oversample, p);

    std::mt19937_64 gen(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix omega(m.cols(), sketch);
    for (double& x : omega.data()) x = gauss(gen);

    Matrix q = detail::householder_q(matmul(m, omega));
    const Matrix mt = transpose(m);
    for (int it = 0; it < cfg.power_iterations; ++it) {
        Matrix z = detail::householder_q(matmul(mt, q));
        q = detail::householder_q(matmul(m, z));
    }

    // Project, solve the small problem exactly, then lift U back.
    Matrix b = matmul(transpose(q), m); // sketch x cols
    SvdResult small = svd_thin(b);
    Matrix u_full = matmul(q, small.u);

    const std::size_t keep = std::min(r, small.sigma.size());
    SvdResult out;
    out.sigma.assign(small.sigma.begin(), small.sigma.begin() + keep);
    out.u = Matrix(m.rows(), keep);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < keep; ++j)
            out.u(i, j) = u_full(i, j);
    out.vt = Matrix(keep, m.cols());
    for (std::size_t i = 0; i < keep; ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            out.vt(i, j) = small.vt(i, j);
    detail::canonicalize_signs(out.u, out.vt);
    return out;
}

// Truncated SVD with p = effective rank. r is clamped to min(rows, cols); the
// clamp is reported through `warnings` when a sink is provided.
inline SvdResult svd_truncated(const Matrix& m, std::size_t r,
                               SvdMethod method = SvdMethod::Exact,
                               std::uint64_t seed = 42,
                               std::vector<std::string>* warnings = nullptr) {
    if (r < 1) throw ValidationError("rank must be >= 1");
    const std::size_t p = std::min(m.rows(), m.cols());
    if (r > p) {
        if (warnings) {
            warnings->push_back("rank " + std::to_string(r) + " clamped to min(d,k) = " +
                                std::to_string(p));
        }
        r = p;
    }
    if (method == SvdMethod::Randomized) {
        RandomizedConfig cfg;
        cfg.seed = seed;
        return svd_randomized(m, r, cfg);
    }
    SvdResult full = svd_thin(m);
    if (r == full.sigma.size()) return full;
    SvdResult out;
    out.sigma.assign(full.sigma.begin(), full.sigma.begin() + r);
    out.u = Matrix(m.rows(), r);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < r; ++j)
            out.u(i, j) = full.u(i, j);
    out.vt = Matrix(r, m.cols());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            out.vt(i, j) = full.vt(i, j);
    return out;
}

} // namespace phlora
