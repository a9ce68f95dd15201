#pragma once

#include <array>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace edrs {

// Dense row-major tensor of up to 4 extents. The scalar type is a template
// parameter: double for oracle/test precision, float for run mode.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        if (shape.empty() || shape.size() > 4)
            throw std::invalid_argument("Tensor: rank must be 1..4");
        for (int e : shape)
            if (e <= 0) throw std::invalid_argument("Tensor: extents must be positive");
        data.assign(count(), T(0));
    }

    std::size_t count() const {
        std::size_t n = 1;
        for (int e : shape) n *= static_cast<std::size_t>(e);
        return n;
    }

    int rank() const { return static_cast<int>(shape.size()); }

    bool shape_equals(const Tensor& other) const { return shape == other.shape; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // 4-d accessor; lower-rank tensors index with leading zeros.
    T& at(int a, int b, int c, int d) { return data[offset(a, b, c, d)]; }
    const T& at(int a, int b, int c, int d) const { return data[offset(a, b, c, d)]; }

    std::size_t offset(int a, int b, int c, int d) const {
        switch (shape.size()) {
            case 1: return static_cast<std::size_t>(d);
            case 2: return static_cast<std::size_t>(c) * shape[1] + d;
            case 3: return (static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + d;
            default:
                return ((static_cast<std::size_t>(a) * shape[1] + b) * static_cast<std::size_t>(shape[2]) + c) *
                           static_cast<std::size_t>(shape[3]) +
                       d;
        }
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

// Binary mask with tensor shape semantics; stored as bytes so bit-for-bit
// preservation is trivial to check.
struct Mask {
    std::vector<int> shape;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    explicit Mask(std::vector<int> s, std::uint8_t v = 1) : shape(std::move(s)) {
        std::size_t n = 1;
        for (int e : shape) n *= static_cast<std::size_t>(e);
        bits.assign(n, v);
    }

    std::size_t count_ones() const {
        std::size_t n = 0;
        for (std::uint8_t b : bits) n += b;
        return n;
    }

    std::uint8_t& operator[](std::size_t i) { return bits[i]; }
    std::uint8_t operator[](std::size_t i) const { return bits[i]; }

    bool operator==(const Mask& o) const { return shape == o.shape && bits == o.bits; }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace edrs
