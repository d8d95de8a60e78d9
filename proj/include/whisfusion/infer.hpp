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

#include <atomic>
#include <cstdint>
#include <vector>

#include "whisfusion/model.hpp"
#include "whisfusion/tensor.hpp"

namespace whisfusion {

// Per-utterance cross-attention material: encoder output plus the decoder's
// pre-projected K/V per block, so refinement steps never re-touch the frames.
struct CtxCache {
    Tensor ctx;              // [n_frames, d_model]
    std::vector<Tensor> k;   // per decoder block, [n_frames, d_model]
    std::vector<Tensor> v;   // per decoder block, [n_frames, d_model]
    int n_frames = 0;
};

// Value-only forward passes for the diffusion model. Calls the same kernels
// in the same order as the tape builders, so logits are bit-identical to the
// training path.
class InferenceEngine {
  public:
    explicit InferenceEngine(const WhisfusionModel& m);

    // frames [n, d_feat] -> context [n, d_model]
    Tensor encode(const Tensor& frames) const;

    CtxCache prepare_ctx(const Tensor& ctx) const;

    // One batched decoder call over k canvases (the unit the call counter
    // counts). Each canvas must have length max_canvas_len.
    std::vector<Tensor> decoder_call(const std::vector<std::vector<int>>& canvases,
                                     const CtxCache* ctx, Conditioning cond) const;

    uint64_t decoder_calls() const { return calls_.load(); }
    void reset_calls() const { calls_.store(0); }

    const WhisfusionModel& model() const { return m_; }

  private:
    // Decoder block weights resolved once at construction; the refinement loop
    // calls the decoder every step and must not pay name lookups per call.
    struct BlockRefs {
        const Tensor *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
        const Tensor *cln_g, *cln_b, *cwq, *cbq, *cwo, *cbo;
        const Tensor *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
    };

    Tensor forward_one(const std::vector<int>& canvas, const CtxCache* ctx,
                       Conditioning cond) const;

    const WhisfusionModel& m_;
    std::vector<BlockRefs> blocks_;
    const Tensor *tok_, *pos_, *lnf_g_, *lnf_b_, *head_w_, *head_b_;
    mutable std::atomic<uint64_t> calls_{0};
};

}  // namespace whisfusion
