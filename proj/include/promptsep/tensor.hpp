// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace promptsep {

/// Dense row-major tensor of rank 0..4. Rank-0 tensors (shape {}) are not
/// used; scalars are stored as shape {1}.
template <typename T>
struct TensorData {
    std::vector<std::int64_t> shape;
    std::vector<T> v;

    TensorData() = default;
    explicit TensorData(std::vector<std::int64_t> s) : shape(std::move(s)) {
        v.assign(static_cast<std::size_t>(numel()), T(0));
    }
    TensorData(std::vector<std::int64_t> s, std::vector<T> data)
        : shape(std::move(s)), v(std::move(data)) {
        if (static_cast<std::int64_t>(v.size()) != numel())
            throw std::invalid_argument("tensor data does not match shape");
    }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

    static TensorData zeros(std::vector<std::int64_t> s) { return TensorData(std::move(s)); }
    static TensorData full(std::vector<std::int64_t> s, T value) {
        TensorData t(std::move(s));
        for (auto& x : t.v) x = value;
        return t;
    }
    static TensorData scalar(T value) { return TensorData({1}, {value}); }

    T item() const {
        if (numel() != 1) throw std::logic_error("item() on non-scalar tensor");
        return v[0];
    }

    bool same_shape(const TensorData& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const T& x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << "]";
        return os.str();
    }

    template <typename U>
    TensorData<U> cast() const {
        TensorData<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

inline std::int64_t checked_index(std::int64_t i, std::int64_t n, const char* what) {
    if (i < 0 || i >= n) throw std::out_of_range(std::string(what) + ": index out of range");
    return i;
}

}  // namespace promptsep
