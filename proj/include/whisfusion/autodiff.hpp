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

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "whisfusion/kernels.hpp"
#include "whisfusion/optim.hpp"
#include "whisfusion/tensor.hpp"

namespace whisfusion {

// Reverse-mode tape. Build a graph forward with the op methods, then call
// backward(loss) once; gradients for parameter leaves accumulate directly
// into the ParamStore (in node order, so accumulation is deterministic),
// gradients for other nodes accumulate into per-node buffers.
//
// Parameters whose needs_grad flag is off still participate in the forward
// pass and pass gradients through to their co-inputs, but no dW is computed
// for them. The tape is single-use: one forward build, one backward sweep.
template <class T>
class TapeT {
  public:
    using Val = int;

    // ------------------------------------------------------------------ leaves

    Val leaf(TensorT<T> v, bool requires_grad = false) {
        Node n;
        n.owned = std::move(v);
        n.rg = requires_grad;
        nodes_.push_back(std::move(n));
        return last();
    }

    Val param(ParamStoreT<T>& store, int pidx) {
        if (pidx < 0 || pidx >= store.size()) throw ArgumentError("tape: bad param index");
        Node n;
        n.store = &store;
        n.pidx = pidx;
        n.rg = store.at(pidx).needs_grad;
        nodes_.push_back(std::move(n));
        return last();
    }

    Val param(ParamStoreT<T>& store, const std::string& name) {
        const int i = store.find(name);
        if (i < 0) throw SchemaError("tape: unknown parameter " + name);
        return param(store, i);
    }

    // ------------------------------------------------------------------- views

    const TensorT<T>& value(Val v) const {
        const Node& n = node(v);
        return n.store ? n.store->at(n.pidx).value : n.owned;
    }

    // Gradient buffer of a node (zeros if backward never touched it).
    // For parameter leaves this is the store's grad tensor.
    const TensorT<T>& grad_of(Val v) {
        Node& n = node_mut(v);
        if (n.store) return n.store->at(n.pidx).grad;
        if (n.grad.data.empty()) n.grad = TensorT<T>::zeros(value(v).shape);
        return n.grad;
    }

    int size() const { return static_cast<int>(nodes_.size()); }

    // -------------------------------------------------------------------- ops

    // [m,k] x [k,n] -> [m,n]
    Val matmul(Val a, Val b) {
        const auto& A = value(a);
        const auto& B = value(b);
        require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0), "matmul shapes");
        const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
        TensorT<T> C = TensorT<T>::zeros({m, n});
        kern::gemm_nn(A.data.data(), m, k, B.data.data(), n, C.data.data());
        const Val out = result(std::move(C), {a, b});
        if (node(out).rg)
            node_mut(out).back = [this, a, b, out, m, k, n] {
                const TensorT<T>& dC = grad_of(out);
                if (wants_grad(a))
                    kern::gemm_nt_acc(dC.data.data(), m, n, value(b).data.data(), k,
                                      grad_buf(a).data.data());
                if (wants_grad(b))
                    kern::gemm_tn_acc(value(a).data.data(), m, k, dC.data.data(), n,
                                      grad_buf(b).data.data());
            };
        return out;
    }

    // [m,k] x [n,k]^T -> [m,n]
    Val matmul_nt(Val a, Val b) {
        const auto& A = value(a);
        const auto& B = value(b);
        require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(1), "matmul_nt shapes");
        const int m = A.dim(0), k = A.dim(1), n = B.dim(0);
        TensorT<T> C = TensorT<T>::zeros({m, n});
        kern::gemm_nt(A.data.data(), m, k, B.data.data(), n, C.data.data());
        const Val out = result(std::move(C), {a, b});
        if (node(out).rg)
            node_mut(out).back = [this, a, b, out, m, k, n] {
                const TensorT<T>& dC = grad_of(out);
                if (wants_grad(a))
                    kern::gemm_nn_acc(dC.data.data(), m, n, value(b).data.data(), k,
                                      grad_buf(a).data.data());
                if (wants_grad(b))
                    kern::gemm_tn_acc(dC.data.data(), m, n, value(a).data.data(), k,
                                      grad_buf(b).data.data());
            };
        return out;
    }

    Val add(Val a, Val b) {
        const auto& A = value(a);
        const auto& B = value(b);
        require(A.same_shape(B), "add shapes");
        TensorT<T> C = A;
        kern::add_inplace(C.data.data(), B.data.data(), C.numel());
        const Val out = result(std::move(C), {a, b});
        if (node(out).rg)
            node_mut(out).back = [this, a, b, out] {
                const TensorT<T>& dC = grad_of(out);
                if (wants_grad(a))
                    kern::add_inplace(grad_buf(a).data.data(), dC.data.data(), dC.numel());
                if (wants_grad(b))
                    kern::add_inplace(grad_buf(b).data.data(), dC.data.data(), dC.numel());
            };
        return out;
    }

    // [m,n] + broadcast [n]
    Val add_bias(Val x, Val b) {
        const auto& X = value(x);
        const auto& B = value(b);
        require(X.rank() == 2 && B.rank() == 1 && X.dim(1) == B.dim(0), "add_bias shapes");
        TensorT<T> C = X;
        kern::add_bias_rows(C.data.data(), C.dim(0), C.dim(1), B.data.data());
        const Val out = result(std::move(C), {x, b});
        if (node(out).rg)
            node_mut(out).back = [this, x, b, out] {
                const TensorT<T>& dC = grad_of(out);
                const int m = dC.dim(0), n = dC.dim(1);
                if (wants_grad(x))
                    kern::add_inplace(grad_buf(x).data.data(), dC.data.data(), dC.numel());
                if (wants_grad(b)) {
                    T* db = grad_buf(b).data.data();
                    for (int r = 0; r < m; ++r)
                        for (int c = 0; c < n; ++c) db[c] += dC.at(r, c);
                }
            };
        return out;
    }

    Val scale(Val x, T s) {
        TensorT<T> C = value(x);
        kern::scale_inplace(C.data.data(), C.numel(), s);
        const Val out = result(std::move(C), {x});
        if (node(out).rg)
            node_mut(out).back = [this, x, out, s] {
                if (!wants_grad(x)) return;
                const TensorT<T>& dC = grad_of(out);
                TensorT<T>& dX = grad_buf(x);
                for (int64_t i = 0; i < dC.numel(); ++i) dX.data[i] += s * dC.data[i];
            };
        return out;
    }

    Val softmax_rows(Val x, bool causal = false) {
        const auto& X = value(x);
        require(X.rank() == 2, "softmax input rank");
        if (causal) require(X.dim(0) == X.dim(1), "causal softmax needs square scores");
        TensorT<T> Y = X;
        if (causal)
            kern::softmax_rows_causal(Y.data.data(), Y.dim(0), Y.dim(1));
        else
            kern::softmax_rows(Y.data.data(), Y.dim(0), Y.dim(1));
        const Val out = result(std::move(Y), {x});
        if (node(out).rg)
            node_mut(out).back = [this, x, out] {
                if (!wants_grad(x)) return;
                const TensorT<T>& Yv = value(out);
                const TensorT<T>& dY = grad_of(out);
                kern::softmax_backward_rows(Yv.data.data(), dY.data.data(), Yv.dim(0),
                                            Yv.dim(1), grad_buf(x).data.data());
            };
        return out;
    }

    Val layer_norm(Val x, Val gain, Val bias, T eps = T(1e-5)) {
        const auto& X = value(x);
        const auto& G = value(gain);
        const auto& Bb = value(bias);
        require(X.rank() == 2 && G.rank() == 1 && Bb.rank() == 1 && X.dim(1) == G.dim(0) &&
                    G.dim(0) == Bb.dim(0),
                "layer_norm shapes");
        const int m = X.dim(0), n = X.dim(1);
        TensorT<T> Y = TensorT<T>::zeros({m, n});
        auto xhat = std::make_shared<TensorT<T>>(TensorT<T>::zeros({m, n}));
        auto rstd = std::make_shared<TensorT<T>>(TensorT<T>::zeros({m}));
        kern::layer_norm_rows(X.data.data(), m, n, G.data.data(), Bb.data.data(),
                              Y.data.data(), xhat->data.data(), rstd->data.data(), eps);
        const Val out = result(std::move(Y), {x, gain, bias});
        if (node(out).rg)
            node_mut(out).back = [this, x, gain, bias, out, xhat, rstd, m, n] {
                const TensorT<T>& dY = grad_of(out);
                // dgain/dbias accumulate inside the kernel, so grab buffers
                // only for inputs that want gradients.
                TensorT<T> dummy;
                T* dx = wants_grad(x) ? grad_buf(x).data.data() : nullptr;
                T* dg = wants_grad(gain) ? grad_buf(gain).data.data() : nullptr;
                T* db = wants_grad(bias) ? grad_buf(bias).data.data() : nullptr;
                TensorT<T> scratch;
                if (!dx) {
                    scratch = TensorT<T>::zeros({m, n});
                    dx = scratch.data.data();
                }
                kern::layer_norm_backward(xhat->data.data(), rstd->data.data(),
                                          value(gain).data.data(), dY.data.data(), m, n,
                                          dx, dg, db);
            };
        return out;
    }

    Val gelu(Val x) {
        const auto& X = value(x);
        TensorT<T> Y = TensorT<T>::zeros(X.shape);
        kern::gelu_rows(X.data.data(), X.numel(), Y.data.data());
        const Val out = result(std::move(Y), {x});
        if (node(out).rg)
            node_mut(out).back = [this, x, out] {
                if (!wants_grad(x)) return;
                const TensorT<T>& dY = grad_of(out);
                kern::gelu_backward(value(x).data.data(), dY.data.data(), dY.numel(),
                                    grad_buf(x).data.data());
            };
        return out;
    }

    // Copy of columns [start, start+width) -> [m, width].
    Val slice_cols(Val x, int start, int width) {
        const auto& X = value(x);
        require(X.rank() == 2 && start >= 0 && width > 0 && start + width <= X.dim(1),
                "slice_cols range");
        const int m = X.dim(0), n = X.dim(1);
        TensorT<T> Y = TensorT<T>::zeros({m, width});
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < width; ++c) Y.at(r, c) = X.at(r, start + c);
        const Val out = result(std::move(Y), {x});
        if (node(out).rg)
            node_mut(out).back = [this, x, out, start, width, m] {
                if (!wants_grad(x)) return;
                const TensorT<T>& dY = grad_of(out);
                TensorT<T>& dX = grad_buf(x);
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < width; ++c) dX.at(r, start + c) += dY.at(r, c);
            };
        return out;
    }

    Val concat_cols(const std::vector<Val>& xs) {
        require(!xs.empty(), "concat_cols needs inputs");
        const int m = value(xs[0]).dim(0);
        int total = 0;
        for (Val v : xs) {
            require(value(v).rank() == 2 && value(v).dim(0) == m, "concat_cols shapes");
            total += value(v).dim(1);
        }
        TensorT<T> Y = TensorT<T>::zeros({m, total});
        int off = 0;
        for (Val v : xs) {
            const auto& X = value(v);
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < X.dim(1); ++c) Y.at(r, off + c) = X.at(r, c);
            off += X.dim(1);
        }
        const Val out = result(std::move(Y), xs);
        if (node(out).rg)
            node_mut(out).back = [this, xs, out, m] {
                const TensorT<T>& dY = grad_of(out);
                int off2 = 0;
                for (Val v : xs) {
                    const int w = value(v).dim(1);
                    if (wants_grad(v)) {
                        TensorT<T>& dX = grad_buf(v);
                        for (int r = 0; r < m; ++r)
                            for (int c = 0; c < w; ++c) dX.at(r, c) += dY.at(r, off2 + c);
                    }
                    off2 += w;
                }
            };
        return out;
    }

    // Copy of rows [start, start+count).
    Val slice_rows(Val x, int start, int count) {
        const auto& X = value(x);
        require(X.rank() == 2 && start >= 0 && count > 0 && start + count <= X.dim(0),
                "slice_rows range");
        const int n = X.dim(1);
        TensorT<T> Y = TensorT<T>::zeros({count, n});
        for (int r = 0; r < count; ++r)
            for (int c = 0; c < n; ++c) Y.at(r, c) = X.at(start + r, c);
        const Val out = result(std::move(Y), {x});
        if (node(out).rg)
            node_mut(out).back = [this, x, out, start, count, n] {
                if (!wants_grad(x)) return;
                const TensorT<T>& dY = grad_of(out);
                TensorT<T>& dX = grad_buf(x);
                for (int r = 0; r < count; ++r)
                    for (int c = 0; c < n; ++c) dX.at(start + r, c) += dY.at(r, c);
            };
        return out;
    }

    // Row gather: out[i] = table[ids[i]].
    Val embedding(Val table, std::vector<int> ids) {
        const auto& Tb = value(table);
        require(Tb.rank() == 2, "embedding table rank");
        const int n = Tb.dim(1);
        for (int id : ids)
            require(id >= 0 && id < Tb.dim(0), "embedding id out of range");
        TensorT<T> Y = TensorT<T>::zeros({static_cast<int>(ids.size()), n});
        for (size_t r = 0; r < ids.size(); ++r)
            for (int c = 0; c < n; ++c) Y.at(static_cast<int>(r), c) = Tb.at(ids[r], c);
        const Val out = result(std::move(Y), {table});
        if (node(out).rg)
            node_mut(out).back = [this, table, out, ids = std::move(ids), n] {
                if (!wants_grad(table)) return;
                const TensorT<T>& dY = grad_of(out);
                TensorT<T>& dT = grad_buf(table);
                for (size_t r = 0; r < ids.size(); ++r)
                    for (int c = 0; c < n; ++c)
                        dT.at(ids[r], c) += dY.at(static_cast<int>(r), c);
            };
        return out;
    }

    // Scalar sum of -log softmax(logits)[pos, target[pos]] over the given
    // positions. Rows outside `positions` receive exactly zero gradient.
    Val masked_nll(Val logits, const std::vector<int>& targets,
                   std::vector<int> positions) {
        const auto& X = value(logits);
        require(X.rank() == 2, "masked_nll logits rank");
        require(targets.size() == static_cast<size_t>(X.dim(0)), "masked_nll target count");
        const int n = X.dim(1);
        for (int p : positions)
            require(p >= 0 && p < X.dim(0), "masked_nll position out of range");
        auto probs = std::make_shared<TensorT<T>>(
            TensorT<T>::zeros({static_cast<int>(positions.size()), n}));
        T loss = T(0);
        for (size_t i = 0; i < positions.size(); ++i) {
            const int p = positions[i];
            const int tgt = targets[static_cast<size_t>(p)];
            require(tgt >= 0 && tgt < n, "masked_nll target id out of range");
            const T* row = X.row_ptr(p);
            T mx = row[0];
            for (int c = 1; c < n; ++c) mx = row[c] > mx ? row[c] : mx;
            T sum = T(0);
            T* prow = probs->row_ptr(static_cast<int>(i));
            for (int c = 0; c < n; ++c) {
                prow[c] = std::exp(row[c] - mx);
                sum += prow[c];
            }
            const T inv = T(1) / sum;
            for (int c = 0; c < n; ++c) prow[c] *= inv;
            loss += std::log(sum) + mx - row[tgt];
        }
        const Val out = result(TensorT<T>::scalar(loss), {logits});
        if (node(out).rg)
            node_mut(out).back = [this, logits, out, probs,
                                  positions = std::move(positions), targets, n] {
                if (!wants_grad(logits)) return;
                const T g = grad_of(out).item();
                TensorT<T>& dX = grad_buf(logits);
                for (size_t i = 0; i < positions.size(); ++i) {
                    const int p = positions[i];
                    const T* prow = probs->row_ptr(static_cast<int>(i));
                    T* drow = dX.row_ptr(p);
                    for (int c = 0; c < n; ++c) drow[c] += g * prow[c];
                    drow[targets[static_cast<size_t>(p)]] -= g;
                }
            };
        return out;
    }

    // --------------------------------------------------------------- backward

    void backward(Val loss, T seed = T(1)) {
        require(value(loss).numel() == 1, "backward needs a scalar loss");
        if (done_backward_) throw ContractError("tape: backward already ran");
        done_backward_ = true;
        if (!node(loss).rg) return;
        grad_buf(loss).data[0] += seed;
        for (int i = loss; i >= 0; --i) {
            Node& n = node_mut(i);
            if (!n.back) continue;
            // Skip closures whose output never received gradient.
            if (!n.store && n.grad.data.empty()) continue;
            n.back();
        }
    }

  private:
    struct Node {
        TensorT<T> owned;
        ParamStoreT<T>* store = nullptr;
        int pidx = -1;
        TensorT<T> grad;
        bool rg = false;
        std::function<void()> back;
    };

    Val last() const { return static_cast<int>(nodes_.size()) - 1; }

    const Node& node(Val v) const { return nodes_.at(static_cast<size_t>(v)); }
    Node& node_mut(Val v) { return nodes_.at(static_cast<size_t>(v)); }

    bool wants_grad(Val v) const {
        const Node& n = node(v);
        if (n.store) return n.store->at(n.pidx).needs_grad;
        return n.rg;
    }

    TensorT<T>& grad_buf(Val v) {
        Node& n = node_mut(v);
        if (n.store) return n.store->at(n.pidx).grad;
        if (n.grad.data.empty()) n.grad = TensorT<T>::zeros(value(v).shape);
        return n.grad;
    }

    Val result(TensorT<T> v, const std::vector<Val>& inputs) {
        Node n;
        n.owned = std::move(v);
        for (Val in : inputs)
            if (node(in).rg) n.rg = true;
        nodes_.push_back(std::move(n));
        return last();
    }

    static void require(bool ok, const char* what) {
        if (!ok) throw ArgumentError(std::string("tape: ") + what);
    }

    std::vector<Node> nodes_;
    bool done_backward_ = false;
};

using Tape = TapeT<float>;

}  // namespace whisfusion
