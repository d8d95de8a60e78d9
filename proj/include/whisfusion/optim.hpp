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
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "whisfusion/common.hpp"
#include "whisfusion/tensor.hpp"

namespace whisfusion {

template <class T>
struct ParamT {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;         // same shape as value, zero-initialized
    bool trainable = true;   // optimizer may update
    bool needs_grad = true;  // backward accumulates dW (can be off for frozen params)
};

// Flat named parameter store. Iteration order is insertion order, which fixes
// both checkpoint layout and gradient-accumulation order.
template <class T>
class ParamStoreT {
  public:
    int add(const std::string& name, TensorT<T> init) {
        if (index_.count(name)) throw SchemaError("duplicate parameter name: " + name);
        ParamT<T> p;
        p.name = name;
        p.grad = TensorT<T>::zeros(init.shape);
        p.value = std::move(init);
        items_.push_back(std::move(p));
        const int idx = static_cast<int>(items_.size()) - 1;
        index_[name] = idx;
        return idx;
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    ParamT<T>& at(int idx) { return items_.at(static_cast<size_t>(idx)); }
    const ParamT<T>& at(int idx) const { return items_.at(static_cast<size_t>(idx)); }

    ParamT<T>& by_name(const std::string& name) {
        const int i = find(name);
        if (i < 0) throw SchemaError("unknown parameter name: " + name);
        return items_[static_cast<size_t>(i)];
    }

    const ParamT<T>& by_name(const std::string& name) const {
        const int i = find(name);
        if (i < 0) throw SchemaError("unknown parameter name: " + name);
        return items_[static_cast<size_t>(i)];
    }

    int size() const { return static_cast<int>(items_.size()); }

    void zero_grads() {
        for (auto& p : items_) p.grad.fill(T(0));
    }

    void set_all_needs_grad(bool v) {
        for (auto& p : items_) p.needs_grad = v;
    }

    int64_t count_values() const {
        int64_t n = 0;
        for (const auto& p : items_) n += p.value.numel();
        return n;
    }

    // Order- and byte-sensitive hash of a subset of parameter values; used to
    // prove that frozen groups did not move during a training stage.
    uint64_t hash_values(const std::vector<int>& idxs) const {
        uint64_t h = 1469598103934665603ULL;
        for (int i : idxs) {
            const auto& p = at(i);
            h = fnv1a64(p.name.data(), p.name.size(), h);
            h = fnv1a64(p.value.data.data(), p.value.data.size() * sizeof(T), h);
        }
        return h;
    }

    uint64_t hash_all() const {
        std::vector<int> idxs(items_.size());
        for (size_t i = 0; i < items_.size(); ++i) idxs[i] = static_cast<int>(i);
        return hash_values(idxs);
    }

    template <class U>
    ParamStoreT<U> cast() const {
        ParamStoreT<U> out;
        for (const auto& p : items_) {
            const int i = out.add(p.name, p.value.template cast<U>());
            out.at(i).trainable = p.trainable;
            out.at(i).needs_grad = p.needs_grad;
        }
        return out;
    }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

  private:
    std::vector<ParamT<T>> items_;
    std::unordered_map<std::string, int> index_;
};

using ParamStore = ParamStoreT<float>;

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay.

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class AdamW {
  public:
    explicit AdamW(const AdamWConfig& cfg = {}) : cfg_(cfg) {
        if (!(cfg_.beta1 >= 0 && cfg_.beta1 < 1) || !(cfg_.beta2 >= 0 && cfg_.beta2 < 1))
            throw ArgumentError("adamw: betas must be in [0,1)");
        if (!(cfg_.eps > 0)) throw ArgumentError("adamw: eps must be positive");
        if (cfg_.weight_decay < 0) throw ArgumentError("adamw: negative weight decay");
    }

    int64_t step_count() const { return step_; }

    // One update over all trainable parameters. `lr_for` maps parameter index
    // to its effective learning rate so per-group scaling stays external.
    // Throws NumericFault (before mutating anything) if any trainable
    // gradient is non-finite.
    void step(ParamStore& params, const std::function<double(int)>& lr_for) {
        for (int i = 0; i < params.size(); ++i) {
            const auto& p = params.at(i);
            if (p.trainable && !p.grad.finite())
                throw NumericFault("adamw: non-finite gradient in " + p.name);
        }
        ensure_state(params);
        ++step_;
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
        for (int i = 0; i < params.size(); ++i) {
            auto& p = params.at(i);
            if (!p.trainable) continue;
            const double lr = lr_for(i);
            auto& m = m_[static_cast<size_t>(i)];
            auto& v = v_[static_cast<size_t>(i)];
            float* w = p.value.data.data();
            const float* g = p.grad.data.data();
            const int64_t n = p.value.numel();
            for (int64_t j = 0; j < n; ++j) {
                const double gj = static_cast<double>(g[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                double wj = static_cast<double>(w[j]);
                wj -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * wj);
                w[j] = static_cast<float>(wj);
            }
        }
    }

    void step(ParamStore& params, double lr) {
        step(params, [lr](int) { return lr; });
    }

  private:
    void ensure_state(const ParamStore& params) {
        if (!m_.empty()) {
            if (static_cast<int>(m_.size()) != params.size())
                throw ContractError("adamw: parameter count changed under optimizer");
            return;
        }
        m_.resize(static_cast<size_t>(params.size()));
        v_.resize(static_cast<size_t>(params.size()));
        for (int i = 0; i < params.size(); ++i) {
            m_[static_cast<size_t>(i)].assign(static_cast<size_t>(params.at(i).value.numel()), 0.0);
            v_[static_cast<size_t>(i)].assign(static_cast<size_t>(params.at(i).value.numel()), 0.0);
        }
    }

    AdamWConfig cfg_;
    int64_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Warmup + cosine decay schedule with named per-group multipliers.

struct LrPlan {
    double base_lr = 1e-4;
    double warmup_ratio = 0.0;  // fraction of total_steps spent in linear warmup
    int64_t total_steps = 1;
    std::map<std::string, double> per_group_scale;  // multiplier per group name

    void validate() const {
        if (!(base_lr > 0)) throw ArgumentError("lr plan: base_lr must be positive");
        if (warmup_ratio < 0 || warmup_ratio >= 1)
            throw ArgumentError("lr plan: warmup_ratio must be in [0,1)");
        if (total_steps < 1) throw ArgumentError("lr plan: total_steps must be >= 1");
        for (const auto& [k, v] : per_group_scale)
            if (!(v > 0)) throw ArgumentError("lr plan: non-positive scale for group " + k);
    }
};

// Base learning rate at `step` in [0, total_steps]: linear warmup to base_lr,
// then cosine decay to zero. Continuous at the warmup/decay boundary.
inline double lr_at(const LrPlan& plan, int64_t step) {
    plan.validate();
    if (step < 0 || step > plan.total_steps)
        throw ArgumentError("lr_at: step outside [0, total_steps]");
    const double warm = plan.warmup_ratio * static_cast<double>(plan.total_steps);
    const double s = static_cast<double>(step);
    if (s < warm) return plan.base_lr * (s / warm);
    const double denom = static_cast<double>(plan.total_steps) - warm;
    const double progress = denom > 0 ? (s - warm) / denom : 1.0;
    return plan.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

inline double lr_at(const LrPlan& plan, int64_t step, const std::string& group) {
    const double base = lr_at(plan, step);
    auto it = plan.per_group_scale.find(group);
    if (it == plan.per_group_scale.end())
        throw ArgumentError("lr_at: unknown group " + group);
    return base * it->second;
}

// Layer-discriminated multipliers: layer l (1-based) of L gets gamma^(L - l),
// so the top layer trains at the base rate and lower layers progressively
// slower.
inline std::vector<double> llrd_scales(int n_layers, double gamma) {
    if (n_layers < 1) throw ArgumentError("llrd: need at least one layer");
    if (!(gamma > 0)) throw ArgumentError("llrd: gamma must be positive");
    std::vector<double> s(static_cast<size_t>(n_layers));
    for (int l = 1; l <= n_layers; ++l)
        s[static_cast<size_t>(l - 1)] = std::pow(gamma, static_cast<double>(n_layers - l));
    return s;
}

}  // namespace whisfusion
