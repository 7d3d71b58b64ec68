#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "pcodec/errors.hpp"

namespace pcodec {

// Dense row-major double tensor. Shapes are small (desk-scale models), so
// everything is value-semantic and heap-backed.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(size_t(numel_of(shape)), 0.0) {}
    Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (int64_t(data.size()) != numel_of(shape)) throw ShapeError("tensor data does not match shape");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor full(std::vector<int64_t> s, double v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    int64_t numel() const { return int64_t(data.size()); }
    int64_t dim(size_t i) const { return shape[i]; }
    size_t ndim() const { return shape.size(); }

    double& at(int64_t i) { return data[size_t(i)]; }
    double at(int64_t i) const { return data[size_t(i)]; }
    double& at(int64_t i, int64_t j) { return data[size_t(i * shape[1] + j)]; }
    double at(int64_t i, int64_t j) const { return data[size_t(i * shape[1] + j)]; }
    double& at(int64_t i, int64_t j, int64_t k) { return data[size_t((i * shape[1] + j) * shape[2] + k)]; }
    double at(int64_t i, int64_t j, int64_t k) const { return data[size_t((i * shape[1] + j) * shape[2] + k)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// FNV-1a over the raw little-endian bytes of a double buffer. Used for
// parameter hashing in tests and logs.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t hash_tensor(const Tensor& t, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(t.data.data(), t.data.size() * sizeof(double), h);
}

}  // namespace pcodec
