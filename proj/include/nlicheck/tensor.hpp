#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nlicheck/errors.hpp"
#include "nlicheck/rng.hpp"

namespace nli {

// Dense row-major tensor. T is float for training/inference and double for
// gradient checking.
template <class T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(count(), T(0));
    }

    Tensor(std::vector<std::size_t> s, std::vector<T> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != count()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str());
        }
    }

    std::size_t count() const {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    std::size_t rank() const { return shape.size(); }

    std::size_t dim(std::size_t i) const { return shape.at(i); }

    T& at(std::size_t i) { return data[i]; }
    T at(std::size_t i) const { return data[i]; }

    T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    T at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    T& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    T at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    void fill_uniform(SeededRng& rng, T lo, T hi) {
        for (T& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << 'x';
            os << shape[i];
        }
        os << ']';
        return os.str();
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i)
            out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <class T>
struct Parameter {
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    Parameter() = default;
    explicit Parameter(std::vector<std::size_t> shape, bool train = true)
        : value(shape), grad(std::move(shape)), trainable(train) {}

    std::size_t count() const { return value.data.size(); }
    void zero_grad() { grad.fill(T(0)); }
};

inline void check_same_shape(const std::vector<std::size_t>& a,
                             const std::vector<std::size_t>& b,
                             const char* what) {
    if (a != b) {
        Tensor<float> ta(a), tb(b);
        throw ShapeError(std::string(what) + ": shape mismatch " + ta.shape_str() +
                         " vs " + tb.shape_str());
    }
}

}  // namespace nli
