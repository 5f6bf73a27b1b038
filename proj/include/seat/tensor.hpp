#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace seat {

// Flat dense array with a shape. Row-major for 2-D.
template <typename T>
struct TensorT {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<std::size_t> s) : shape(std::move(s)) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        data.assign(n, T{});
    }

    std::size_t size() const { return data.size(); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    // Row pointer for 2-D tensors.
    T* row(std::size_t r) { return data.data() + r * shape[1]; }
    const T* row(std::size_t r) const { return data.data() + r * shape[1]; }
};

// 2-D activation matrix used for hidden states, logits, projections.
template <typename T>
struct MatT {
    std::size_t rows = 0, cols = 0;
    std::vector<T> data;

    MatT() = default;
    MatT(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T{}) {}

    T* row(std::size_t r) { return data.data() + r * cols; }
    const T* row(std::size_t r) const { return data.data() + r * cols; }
    T& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

using Mat = MatT<float>;

template <typename T>
bool all_finite(std::span<const T> xs) {
    for (T x : xs) {
        if (!std::isfinite(static_cast<double>(x))) {
            return false;
        }
    }
    return true;
}

}  // namespace seat
