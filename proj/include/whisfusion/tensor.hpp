// Copyright 2026 The Whisfusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <initializer_list>
#include <new>
#include <string>
#include <vector>

#include "whisfusion/common.hpp"

namespace whisfusion {

// 64-byte-aligned storage. SIMD reductions can order partial sums by where a
// buffer landed on the heap; pinning every tensor allocation to one alignment
// makes forward results a function of shape alone, so the training tape and
// the inference engines agree bit for bit.
template <class T>
struct AlignedAlloc {
    using value_type = T;
    static constexpr std::size_t kAlign = 64;

    AlignedAlloc() = default;
    template <class U>
    AlignedAlloc(const AlignedAlloc<U>&) {}

    T* allocate(std::size_t n) {
        const std::size_t bytes =
            n ? (n * sizeof(T) + kAlign - 1) / kAlign * kAlign : kAlign;
        void* p = std::aligned_alloc(kAlign, bytes);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) noexcept { std::free(p); }

    template <class U>
    struct rebind {
        using other = AlignedAlloc<U>;
    };
    friend bool operator==(const AlignedAlloc&, const AlignedAlloc&) { return true; }
    friend bool operator!=(const AlignedAlloc&, const AlignedAlloc&) { return false; }
};

template <class T>
using AlignedVec = std::vector<T, AlignedAlloc<T>>;

// Dense row-major tensor. Rank 0 (scalar), 1, and 2 cover everything this
// project needs; attention heads are handled by explicit column slicing.
template <class T>
struct TensorT {
    std::vector<int> shape;
    AlignedVec<T> data;

    TensorT() = default;

    static TensorT zeros(std::vector<int> shp) {
        TensorT t;
        int64_t n = 1;
        for (int d : shp) {
            if (d < 0) throw ArgumentError("tensor: negative dimension");
            n *= d;
        }
        t.shape = std::move(shp);
        t.data.assign(static_cast<size_t>(n), T(0));
        return t;
    }

    static TensorT scalar(T v) {
        TensorT t;
        t.shape = {};
        t.data.assign(1, v);
        return t;
    }

    static TensorT from(std::vector<int> shp, const std::vector<T>& values) {
        TensorT t = zeros(std::move(shp));
        if (values.size() != t.data.size())
            throw ArgumentError("tensor: value count does not match shape");
        t.data.assign(values.begin(), values.end());
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }

    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    // 2-D accessors.
    int rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? shape[0] : 1); }
    int cols() const { return rank() == 2 ? shape[1] : 1; }

    T* row_ptr(int r) { return data.data() + static_cast<int64_t>(r) * cols(); }
    const T* row_ptr(int r) const { return data.data() + static_cast<int64_t>(r) * cols(); }

    T& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    const T& at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    T& at(int i) { return data[static_cast<size_t>(i)]; }
    const T& at(int i) const { return data[static_cast<size_t>(i)]; }

    T item() const {
        if (data.size() != 1) throw ArgumentError("item: tensor is not a scalar");
        return data[0];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> r;
        r.shape = shape;
        r.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) r.data[i] = static_cast<U>(data[i]);
        return r;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

using Tensor = TensorT<float>;

}  // namespace whisfusion
