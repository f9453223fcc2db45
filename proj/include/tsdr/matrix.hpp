#pragma once

// Row-major dense matrix of doubles. The only tensor shape in the project;
// vectors are 1xN or Nx1, scalars 1x1.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsdr {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> d)
        : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols)
            throw std::invalid_argument("Matrix: data size does not match shape");
    }

    static Matrix scalar(double x) { return Matrix(1, 1, std::vector<double>{x}); }

    std::size_t size() const { return rows * cols; }
    bool empty() const { return data.empty(); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }
};

} // namespace tsdr
