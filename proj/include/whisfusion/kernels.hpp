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

#include <Eigen/Core>
#include <cmath>
#include <cstdint>

#include "whisfusion/common.hpp"

// Low-level compute kernels on raw row-major buffers. Both the training tape
// and the inference engines call these same functions, which is what makes
// the two forward paths bit-identical.

namespace whisfusion::kern {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<EMat<T>>;
template <class T>
using CMap = Eigen::Map<const EMat<T>>;

// C[m,n] = A[m,k] * B[k,n]
template <class T>
inline void gemm_nn(const T* A, int m, int k, const T* B, int n, T* C) {
    Map<T>(C, m, n).noalias() = CMap<T>(A, m, k) * CMap<T>(B, k, n);
}

template <class T>
inline void gemm_nn_acc(const T* A, int m, int k, const T* B, int n, T* C) {
    Map<T>(C, m, n).noalias() += CMap<T>(A, m, k) * CMap<T>(B, k, n);
}

// C[m,n] = A[m,k] * B[n,k]^T
template <class T>
inline void gemm_nt(const T* A, int m, int k, const T* B, int n, T* C) {
    Map<T>(C, m, n).noalias() = CMap<T>(A, m, k) * CMap<T>(B, n, k).transpose();
}

template <class T>
inline void gemm_nt_acc(const T* A, int m, int k, const T* B, int n, T* C) {
    Map<T>(C, m, n).noalias() += CMap<T>(A, m, k) * CMap<T>(B, n, k).transpose();
}

// C[m,n] = A[k,m]^T * B[k,n]
template <class T>
inline void gemm_tn(const T* A, int k, int m, const T* B, int n, T* C) {
    Map<T>(C, m, n).noalias() = CMap<T>(A, k, m).transpose() * CMap<T>(B, k, n);
}

template <class T>
inline void gemm_tn_acc(const T* A, int k, int m, const T* B, int n, T* C) {
    Map<T>(C, m, n).noalias() += CMap<T>(A, k, m).transpose() * CMap<T>(B, k, n);
}

template <class T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;

template <class T>
inline void add_bias_rows(T* X, int m, int n, const T* b) {
    Map<T>(X, m, n).rowwise() += CVecMap<T>(b, n);
}

template <class T>
inline void add_inplace(T* X, const T* Y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) X[i] += Y[i];
}

template <class T>
inline void scale_inplace(T* X, int64_t n, T s) {
    for (int64_t i = 0; i < n; ++i) X[i] *= s;
}

// In-place row softmax. `valid(r)` gives the number of leading columns that
// participate in row r; the rest are forced to zero probability. A causal
// square matrix passes valid(r) = r + 1, full attention passes valid(r) = n.
template <class T, class ValidFn>
inline void softmax_rows_valid(T* X, int m, int n, ValidFn valid) {
    for (int r = 0; r < m; ++r) {
        T* row = X + static_cast<int64_t>(r) * n;
        const int v = valid(r);
        VecMap<T> live(row, v);
        const T mx = live.maxCoeff();
        live = (live.array() - mx).exp();
        live *= T(1) / live.sum();
        for (int c = v; c < n; ++c) row[c] = T(0);
    }
}

// Full-attention case: whole-matrix passes amortize per-row overhead.
template <class T>
inline void softmax_rows(T* X, int m, int n) {
    Map<T> M(X, m, n);
    using Col = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    const Col mx = M.rowwise().maxCoeff();
    M.array().colwise() -= mx.array();
    M.array() = M.array().exp();
    const Col s = M.rowwise().sum();
    M.array().colwise() /= s.array();
}

template <class T>
inline void softmax_rows_causal(T* X, int m, int n) {
    softmax_rows_valid(X, m, n, [](int r) { return r + 1; });
}

// dX += (dY - rowdot(dY, Y)) .* Y ; masked-out columns have Y = 0 so the same
// formula covers the causal case. Accumulating, like all backward kernels.
template <class T>
inline void softmax_backward_rows(const T* Y, const T* dY, int m, int n, T* dX) {
    for (int r = 0; r < m; ++r) {
        CVecMap<T> y(Y + static_cast<int64_t>(r) * n, n);
        CVecMap<T> dy(dY + static_cast<int64_t>(r) * n, n);
        VecMap<T> dx(dX + static_cast<int64_t>(r) * n, n);
        const T dot = y.dot(dy);
        dx.array() += (dy.array() - dot) * y.array();
    }
}

// Row layer norm with learned gain/bias. Saves rstd and normalized rows for
// the backward pass when the caller provides buffers. Reduction order (and
// with it the low bits) depends on buffer alignment, so callers must pass
// identically aligned buffers for reproducible results; tensor storage is
// 64-byte aligned for exactly this reason.
template <class T>
inline void layer_norm_rows(const T* X, int m, int n, const T* gain, const T* bias,
                            T* Y, T* xhat_out, T* rstd_out, T eps) {
    CMap<T> Xm(X, m, n);
    Map<T> Ym(Y, m, n);
    CVecMap<T> g(gain, n), b(bias, n);
    using Col = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    const Col mean = Xm.rowwise().mean();
    Ym = Xm;
    Ym.array().colwise() -= mean.array();
    const Col var = Ym.cwiseAbs2().rowwise().mean();
    const Col rstd = (var.array() + eps).sqrt().inverse();
    if (rstd_out) VecMap<T>(rstd_out, m) = rstd.transpose();
    Ym.array().colwise() *= rstd.array();
    if (xhat_out) Map<T>(xhat_out, m, n) = Ym;
    Ym.array().rowwise() *= g.array();
    Ym.array().rowwise() += b.array();
}

template <class T>
inline void layer_norm_backward(const T* xhat, const T* rstd, const T* gain,
                                const T* dY, int m, int n, T* dX, T* dgain,
                                T* dbias) {
    CVecMap<T> g(gain, n);
    for (int r = 0; r < m; ++r) {
        CVecMap<T> xh(xhat + static_cast<int64_t>(r) * n, n);
        CVecMap<T> dy(dY + static_cast<int64_t>(r) * n, n);
        VecMap<T> dx(dX + static_cast<int64_t>(r) * n, n);
        const T sum_g = (dy.array() * g.array()).sum();
        const T sum_gx = (dy.array() * g.array() * xh.array()).sum();
        if (dgain) VecMap<T>(dgain, n).array() += dy.array() * xh.array();
        if (dbias) VecMap<T>(dbias, n) += dy;
        const T inv_n = T(1) / T(n);
        dx.array() +=
            (dy.array() * g.array() - inv_n * (sum_g + xh.array() * sum_gx)) *
            rstd[r];
    }
}

// tanh-form GELU.
template <class T>
inline void gelu_rows(const T* X, int64_t n, T* Y) {
    const T k = T(0.7978845608028654);  // sqrt(2/pi)
    CVecMap<T> x(X, n);
    VecMap<T> y(Y, n);
    y.array() =
        T(0.5) * x.array() *
        (T(1) + (k * (x.array() + T(0.044715) * x.array().cube())).tanh());
}

template <class T>
inline void gelu_backward(const T* X, const T* dY, int64_t n, T* dX) {
    const T k = T(0.7978845608028654);
    CVecMap<T> x(X, n);
    CVecMap<T> dy(dY, n);
    VecMap<T> dx(dX, n);
    const auto th = (k * (x.array() + T(0.044715) * x.array().cube())).tanh();
    dx.array() += dy.array() * (T(0.5) * (T(1) + th) +
                                T(0.5) * x.array() * (T(1) - th.square()) * k *
                                    (T(1) + T(3) * T(0.044715) * x.array().square()));
}

}  // namespace whisfusion::kern
