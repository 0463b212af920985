#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dpmil/errors.hpp"

namespace dpmil {

// Row-major dense matrix of doubles.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

    static DenseMatrix zeros(std::size_t r, std::size_t c) { return DenseMatrix(r, c); }

    double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }

    bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
        return a.rows == b.rows && a.cols == b.cols && a.values == b.values;
    }
};

// C = A * B
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                         " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    DenseMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.values.data() + i * a.cols;
        double* crow = c.values.data() + i * b.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.values.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

// C = A^T * B
inline DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows != b.rows) throw ShapeError("matmul_at_b: row counts differ");
    DenseMatrix c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.values.data() + k * a.cols;
        const double* brow = b.values.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = c.values.data() + i * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

// C = A * B^T
inline DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.cols) throw ShapeError("matmul_a_bt: col counts differ");
    DenseMatrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.values.data() + i * a.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.values.data() + j * b.cols;
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            c.at(i, j) = s;
        }
    }
    return c;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace dpmil
