#pragma once

// Test-only helpers: seeded generators and an independent symmetric
// eigensolver used to cross-check singular values. Nothing here calls into
// the SVD kernels under test.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "phlora/matrix.hpp"

namespace oracles {

inline phlora::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint32_t seed,
                                    double lo = -1.0, double hi = 1.0) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    phlora::Matrix m(rows, cols);
    for (double& x : m.data()) x = dist(gen);
    return m;
}

// (random d x r) * (random r x k): a matrix of rank exactly r (w.p. 1).
inline phlora::Matrix random_low_rank(std::size_t d, std::size_t k, std::size_t r,
                                      std::uint32_t seed) {
    return phlora::matmul(random_matrix(d, r, seed), random_matrix(r, k, seed + 1));
}

// Orthonormal columns via modified Gram-Schmidt on random data (test-local,
// independent of the library's QR).
inline phlora::Matrix random_orthonormal(std::size_t rows, std::size_t cols, std::uint32_t seed) {
    phlora::Matrix q = random_matrix(rows, cols, seed);
    for (std::size_t j = 0; j < cols; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t c = 0; c < j; ++c) {
                double dot = 0.0;
                for (std::size_t i = 0; i < rows; ++i) dot += q(i, j) * q(i, c);
                for (std::size_t i = 0; i < rows; ++i) q(i, j) -= dot * q(i, c);
            }
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < rows; ++i) norm += q(i, j) * q(i, j);
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < rows; ++i) q(i, j) /= norm;
    }
    return q;
}

// U diag(sigma) V^T with known singular values (descending input expected).
inline phlora::Matrix matrix_with_spectrum(std::size_t rows, std::size_t cols,
                                           const std::vector<double>& sigma,
                                           std::uint32_t seed) {
    const std::size_t p = sigma.size();
    phlora::Matrix u = random_orthonormal(rows, p, seed);
    phlora::Matrix v = random_orthonormal(cols, p, seed + 7);
    phlora::Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < p; ++t) s += u(i, t) * sigma[t] * v(j, t);
            m(i, j) = s;
        }
    return m;
}

// Classical two-sided Jacobi eigensolver for a symmetric matrix; returns
// eigenvalues in descending order. Independent route for sigma^2 = eig(m^T m).
inline std::vector<double> symmetric_eigenvalues(phlora::Matrix s) {
    const std::size_t n = s.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += s(p, q) * s(p, q);
        if (off < 1e-28) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (s(p, q) == 0.0) continue;
                const double theta = (s(q, q) - s(p, p)) / (2.0 * s(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double sip = s(i, p), siq = s(i, q);
                    s(i, p) = c * sip - sn * siq;
                    s(i, q) = sn * sip + c * siq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double spi = s(p, i), sqi = s(q, i);
                    s(p, i) = c * spi - sn * sqi;
                    s(q, i) = sn * spi + c * sqi;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = s(i, i);
    std::sort(eig.begin(), eig.end(), std::greater<double>());
    return eig;
}

inline std::vector<double> singular_values_via_gram(const phlora::Matrix& m) {
    const phlora::Matrix gram = phlora::matmul(phlora::transpose(m), m);
    std::vector<double> eig = symmetric_eigenvalues(gram);
    std::vector<double> sigma;
    sigma.reserve(eig.size());
    for (double e : eig) sigma.push_back(std::sqrt(std::max(0.0, e)));
    return sigma;
}

inline double max_abs_diff(const phlora::Matrix& a, const phlora::Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

// ||q^T q - I||_max: how far the columns are from orthonormal.
inline double orthonormality_defect(const phlora::Matrix& q) {
    double worst = 0.0;
    for (std::size_t a = 0; a < q.cols(); ++a) {
        for (std::size_t b = a; b < q.cols(); ++b) {
            double dot = 0.0;
            for (std::size_t i = 0; i < q.rows(); ++i) dot += q(i, a) * q(i, b);
            worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
        }
    }
    return worst;
}

} // namespace oracles
