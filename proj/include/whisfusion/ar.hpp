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
#include <memory>
#include <vector>

#include "whisfusion/infer.hpp"
#include "whisfusion/model.hpp"

namespace whisfusion {

// Autoregressive baseline decoder: same dimensions, same cross-attention into
// the same frozen encoder, causal self-attention, one token per forward pass.
// The beginning-of-sequence token reuses the mask embedding slot.

template <class T>
ParamStoreT<T> build_ar_params(const ModelConfig& cfg, RngStream init) {
    cfg.validate();
    ParamStoreT<T> ps;
    const int d = cfg.d_model;
    auto normal_tensor = [&](const std::string& name, std::vector<int> shape, double std) {
        RngStream s = init.child(name);
        TensorT<T> t = TensorT<T>::zeros(shape);
        for (auto& v : t.data) v = static_cast<T>(s.normal() * std);
        ps.add(name, std::move(t));
    };
    normal_tensor("ar.tok", {cfg.vocab_size, d}, 0.02);
    normal_tensor("ar.pos", {cfg.max_canvas_len, d}, 0.01);
    for (int i = 0; i < cfg.n_dec_layers; ++i) {
        const std::string b = "ar.b" + std::to_string(i);
        add_ln_params(ps, b + ".ln1", d);
        add_attn_params(ps, b + ".attn", d, d, init, 0.02);
        add_ln_params(ps, b + ".cross_attn.ln", d);
        add_attn_params(ps, b + ".cross_attn", d, d, init, 0.02);
        add_ln_params(ps, b + ".ln2", d);
        add_ffn_params(ps, b + ".ffn", d, cfg.ffn_mult, init);
    }
    add_ln_params(ps, "ar.lnf", d);
    normal_tensor("ar.head.w", {d, cfg.vocab_size}, 0.002);
    ps.add("ar.head.b", TensorT<T>::zeros({cfg.vocab_size}));
    return ps;
}

template <class T>
struct ArModelT {
    ModelConfig cfg;
    ParamStoreT<T> params;

    int bos_id() const { return cfg.mask_id; }

    ArModelT(const ModelConfig& c, RngStream init)
        : cfg(c), params(build_ar_params<T>(c, init)) {}
};

using ArModel = ArModelT<float>;

// Teacher-forced causal forward over input ids (bos + shifted targets):
// logits [S, vocab].
template <class T>
typename TapeT<T>::Val ar_forward_tape(TapeT<T>& t, ArModelT<T>& m,
                                       const std::vector<int>& input_ids,
                                       typename TapeT<T>::Val ctx) {
    auto& ps = m.params;
    const auto& cfg = m.cfg;
    const int S = static_cast<int>(input_ids.size());
    if (S < 1 || S > cfg.max_canvas_len)
        throw ArgumentError("ar_forward: input length outside [1, max_canvas_len]");
    for (int id : input_ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw ArgumentError("ar_forward: input id outside vocab");

    auto x = t.add(t.embedding(t.param(ps, "ar.tok"), input_ids),
                   t.slice_rows(t.param(ps, "ar.pos"), 0, S));
    for (int i = 0; i < cfg.n_dec_layers; ++i) {
        const std::string b = "ar.b" + std::to_string(i);
        {
            const auto h = ln_tape(t, ps, b + ".ln1", x);
            x = t.add(x, attn_tape(t, ps, b + ".attn", h, h, cfg.n_heads, true));
        }
        {
            const auto h = ln_tape(t, ps, b + ".cross_attn.ln", x);
            x = t.add(x, attn_tape(t, ps, b + ".cross_attn", h, ctx, cfg.n_heads, false));
        }
        x = t.add(x, ffn_tape(t, ps, b + ".ffn", ln_tape(t, ps, b + ".ln2", x)));
    }
    x = ln_tape(t, ps, "ar.lnf", x);
    return t.add_bias(t.matmul(x, t.param(ps, "ar.head.w")), t.param(ps, "ar.head.b"));
}

// KV-cached greedy decoding.
struct ArCtxCache {
    Tensor ctx;
    std::vector<Tensor> k, v;  // cross K/V per block
    int n_frames = 0;
};

struct ArGreedyResult {
    std::vector<int> tokens;  // emitted tokens, eos excluded
    bool hit_eos = false;
    uint64_t calls = 0;  // decoder forward passes (one per emitted token + eos)
};

class ArEngine {
  public:
    explicit ArEngine(const ArModel& m);

    ArCtxCache prepare_ctx(const Tensor& ctx) const;

    ArGreedyResult greedy_decode(const ArCtxCache& ctx, int max_len) const;

    // One cached step; exposed for the causality test.
    // `state` must come from new_state(); position advances internally.
    struct State;
    std::unique_ptr<State> new_state(int max_len) const;
    Tensor step(State& state, const ArCtxCache& ctx, int token_id) const;

    uint64_t decoder_calls() const { return calls_; }
    void reset_calls() const { calls_ = 0; }

    const ArModel& model() const { return m_; }

    struct State {
        int pos = 0;
        std::vector<Tensor> k_self, v_self;  // per block, [max_len, d]
    };

  private:
    // Block weights resolved once; a greedy decode pays one step per token and
    // must not spend it on name lookups.
    struct BlockRefs {
        const Tensor *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
        const Tensor *cln_g, *cln_b, *cwq, *cbq, *cwo, *cbo;
        const Tensor *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
    };

    const ArModel& m_;
    std::vector<BlockRefs> blocks_;
    const Tensor *tok_, *pos_, *lnf_g_, *lnf_b_, *head_w_, *head_b_;
    mutable std::atomic<uint64_t> calls_{0};
};

}  // namespace whisfusion
