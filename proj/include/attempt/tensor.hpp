#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "attempt/util.hpp"

namespace attempt {

// Dense row-major tensor. Rank 1 and 2 cover everything in this project.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), T(0));
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) fail("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const { return rank() >= 1 ? shape[0] : 1; }
    int cols() const { return rank() >= 2 ? shape[1] : 1; }

    T& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
    const T& at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape[i]);
        return s + ")";
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

}  // namespace attempt
