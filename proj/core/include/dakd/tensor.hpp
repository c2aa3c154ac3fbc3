#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dakd/errors.hpp"

namespace dakd {

// Dense row-major matrix of 64-bit reals. Vectors are n x 1 or 1 x n,
// scalars 1 x 1.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
        if (r <= 0 || c <= 0) throw ShapeError("Tensor extents must be positive");
    }
    Tensor(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        if (r <= 0 || c <= 0) throw ShapeError("Tensor extents must be positive");
        if (data.size() != static_cast<size_t>(r) * c) throw ShapeError("Tensor data length does not match extents");
    }

    static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

    double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
    size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }
};

inline bool bit_identical(const Tensor& a, const Tensor& b) {
    if (a.rows != b.rows || a.cols != b.cols) return false;
    for (size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] != b.data[i]) return false;
    return true;
}

// C = A * B, cache-friendly ikj order.
inline void matmul_into(const Tensor& a, const Tensor& b, Tensor& c) {
    if (a.cols != b.rows) throw ShapeError("matmul: " + a.shape_str() + " * " + b.shape_str());
    c.rows = a.rows;
    c.cols = b.cols;
    c.data.assign(static_cast<size_t>(a.rows) * b.cols, 0.0);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i) * a.cols];
        double* crow = &c.data[static_cast<size_t>(i) * b.cols];
        for (int k = 0; k < a.cols; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(k) * b.cols];
            for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace dakd
