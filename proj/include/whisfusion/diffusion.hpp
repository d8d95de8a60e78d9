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
#include <vector>

#include "whisfusion/autodiff.hpp"
#include "whisfusion/rng.hpp"

namespace whisfusion {

// A corrupted canvas plus the bookkeeping the loss needs.
struct MaskedSequence {
    std::vector<int> canvas;          // y_t: original ids with masked slots = mask_id
    std::vector<int> mask_positions;  // ascending indices of masked slots
    double origin_ratio = 0.0;        // the t that produced this corruption
};

// Masking-ratio draw for the two curriculum stages: stage 1 uses the full
// range, stage 2 concentrates on heavy corruption.
inline double sample_t(int stage, RngStream& rng) {
    if (stage == 1) return rng.uniform(0.0, 1.0);
    if (stage == 2) return rng.uniform(0.7, 1.0);
    throw ArgumentError("sample_t: stage must be 1 or 2");
}

// Independent per-position masking with probability t. Draws exactly one
// uniform per position so corruption is reproducible from the stream alone.
inline MaskedSequence corrupt_bernoulli(const std::vector<int>& y0, double t,
                                        int mask_id, RngStream& rng) {
    if (!(t > 0.0) || t > 1.0)
        throw ArgumentError("corrupt_bernoulli: t must be in (0, 1]");
    MaskedSequence m;
    m.canvas = y0;
    m.origin_ratio = t;
    for (size_t i = 0; i < y0.size(); ++i) {
        const bool masked = rng.next_double() < t;
        if (masked) {
            m.canvas[i] = mask_id;
            m.mask_positions.push_back(static_cast<int>(i));
        }
    }
    return m;
}

// Masks exactly round(rho * L) positions chosen uniformly without
// replacement (partial Fisher-Yates on the index set).
inline MaskedSequence corrupt_fraction(const std::vector<int>& y, double rho,
                                       int mask_id, RngStream& rng) {
    if (!(rho > 0.0) || rho > 1.0)
        throw ArgumentError("corrupt_fraction: rho must be in (0, 1]");
    const int L = static_cast<int>(y.size());
    const int n_mask = static_cast<int>(std::lround(rho * L));
    MaskedSequence m;
    m.canvas = y;
    m.origin_ratio = rho;
    std::vector<int> idx(static_cast<size_t>(L));
    for (int i = 0; i < L; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = 0; i < n_mask; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<uint32_t>(L - i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    m.mask_positions.assign(idx.begin(), idx.begin() + n_mask);
    std::sort(m.mask_positions.begin(), m.mask_positions.end());
    for (int p : m.mask_positions) m.canvas[static_cast<size_t>(p)] = mask_id;
    return m;
}

// Masked-diffusion objective for one sample: (1/t) * sum over masked
// positions of -log p(y0[i] | y_t, C). Gradient reaches only masked rows of
// the logits.
template <class T>
typename TapeT<T>::Val mdm_loss_tape(TapeT<T>& tape, typename TapeT<T>::Val logits,
                                     const std::vector<int>& y0,
                                     const MaskedSequence& masked) {
    if (masked.mask_positions.empty())
        throw ContractError("mdm_loss: empty mask set");
    if (!(masked.origin_ratio > 0.0) || masked.origin_ratio > 1.0)
        throw ContractError("mdm_loss: origin_ratio must be in (0, 1]");
    const auto nll = tape.masked_nll(logits, y0, masked.mask_positions);
    return tape.scale(nll, static_cast<T>(1.0 / masked.origin_ratio));
}

// Value-only convenience for validation loops.
double mdm_loss_value(const Tensor& logits, const std::vector<int>& y0,
                      const MaskedSequence& masked);

// Mean of per-sample losses over a batch (sample count, not token count).
double mdm_loss_batch_value(const std::vector<Tensor>& logits,
                            const std::vector<std::vector<int>>& y0,
                            const std::vector<MaskedSequence>& masked);

}  // namespace whisfusion
