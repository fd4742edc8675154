#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "partialfl/errors.hpp"

namespace partialfl {

// Dense row-major array of doubles. Everything in the simulator is rank 1 or 2,
// so the shape is kept as a plain vector and 2-d access helpers are provided.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims)
        : shape(std::move(dims)), data(numel_of(shape), 0.0) {}

    Tensor(std::size_t rows, std::size_t cols)
        : shape{rows, cols}, data(rows * cols, 0.0) {}

    // 2-d tensor from nested braces, for tests and small fixtures.
    Tensor(std::initializer_list<std::initializer_list<double>> rows_init) {
        shape = {rows_init.size(), rows_init.size() ? rows_init.begin()->size() : 0};
        data.reserve(shape[0] * shape[1]);
        for (const auto& row : rows_init) {
            if (row.size() != shape[1])
                throw ShapeError("Tensor: ragged initializer rows");
            data.insert(data.end(), row.begin(), row.end());
        }
    }

    static std::size_t numel_of(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const {
        require_rank2("rows");
        return shape[0];
    }
    std::size_t cols() const {
        require_rank2("cols");
        return shape[1];
    }

    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    double* row_ptr(std::size_t i) { return data.data() + i * shape[1]; }
    const double* row_ptr(std::size_t i) const { return data.data() + i * shape[1]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += " x ";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

private:
    void require_rank2(const char* op) const {
        if (shape.size() != 2)
            throw ShapeError(std::string("Tensor::") + op + ": tensor is not rank 2, shape " +
                             shape_str());
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

}  // namespace partialfl
