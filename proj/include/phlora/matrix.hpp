#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "phlora/errors.hpp"

namespace phlora {

// Dense row-major matrix of 64-bit reals. All numerics in the library run in
// double precision regardless of the dtype a tensor was stored with.
class Matrix {
public:
    Matrix() = default;

    // Uninitialised-to-zero construction; entries are filled in by the caller.
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
        if (rows == 0 || cols == 0) {
            throw ValidationError("matrix dimensions must be positive, got " +
                                  std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    // Construction from existing data validates the finiteness invariant.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (rows == 0 || cols == 0) {
            throw ValidationError("matrix dimensions must be positive");
        }
        if (data_.size() != rows * cols) {
            throw ValidationError("data length " + std::to_string(data_.size()) +
                                  " does not equal rows*cols = " + std::to_string(rows * cols));
        }
        for (double x : data_) {
            if (!std::isfinite(x)) {
                throw ValidationError("non-finite entry in matrix data");
            }
        }
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix diagonal(const std::vector<double>& d) {
        Matrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            t(j, i) = m(i, j);
    return t;
}

// Standard dense product, ikj loop order for row-major locality.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeMismatch("matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                            " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix c(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), p = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double aij = a(i, l);
            if (aij == 0.0) continue;
            for (std::size_t j = 0; j < p; ++j) {
                c(i, j) += aij * b(l, j);
            }
        }
    }
    return c;
}

inline double frobenius_norm(const Matrix& m) {
    double sum = 0.0;
    for (double x : m.data()) sum += x * x;
    return std::sqrt(sum);
}

inline double frobenius_norm_sq(const Matrix& m) {
    double sum = 0.0;
    for (double x : m.data()) sum += x * x;
    return sum;
}

inline Matrix subtract(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeMismatch("subtract " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                            " - " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
    return c;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeMismatch("add " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                            " + " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
    return c;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * s;
    return c;
}

} // namespace phlora
