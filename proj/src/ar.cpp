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

#include "whisfusion/ar.hpp"

#include "whisfusion/kernels.hpp"

namespace whisfusion {

namespace {

Tensor linear_rows(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = Tensor::zeros({x.dim(0), w.dim(1)});
    kern::gemm_nn(x.data.data(), x.dim(0), x.dim(1), w.data.data(), w.dim(1),
                  y.data.data());
    kern::add_bias_rows(y.data.data(), y.dim(0), y.dim(1), b.data.data());
    return y;
}

void ensure(Tensor& t, int r, int c) {
    if (t.rank() != 2 || t.dim(0) != r || t.dim(1) != c)
        t = Tensor::zeros({r, c});
}

void linear_row_into(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
    ensure(y, 1, w.dim(1));
    kern::gemm_nn(x.data.data(), 1, x.dim(1), w.data.data(), w.dim(1), y.data.data());
    kern::add_bias_rows(y.data.data(), 1, y.dim(1), b.data.data());
}

void layer_norm_row_into(const Tensor& x, const Tensor& g, const Tensor& b, Tensor& y) {
    ensure(y, x.dim(0), x.dim(1));
    kern::layer_norm_rows(x.data.data(), x.dim(0), x.dim(1), g.data.data(),
                          b.data.data(), y.data.data(), static_cast<float*>(nullptr),
                          static_cast<float*>(nullptr), 1e-5f);
}

struct StepScratch {
    Tensor x, h, q, k, v, cat, scores, f, g;
};

}  // namespace

ArEngine::ArEngine(const ArModel& m) : m_(m) {
    const auto& ps = m_.params;
    blocks_.reserve(static_cast<size_t>(m_.cfg.n_dec_layers));
    for (int i = 0; i < m_.cfg.n_dec_layers; ++i) {
        const std::string b = "ar.b" + std::to_string(i);
        const std::string p = b + ".cross_attn";
        BlockRefs r;
        r.ln1_g = &ps.by_name(b + ".ln1.g").value;
        r.ln1_b = &ps.by_name(b + ".ln1.b").value;
        r.wq = &ps.by_name(b + ".attn.wq").value;
        r.bq = &ps.by_name(b + ".attn.bq").value;
        r.wk = &ps.by_name(b + ".attn.wk").value;
        r.bk = &ps.by_name(b + ".attn.bk").value;
        r.wv = &ps.by_name(b + ".attn.wv").value;
        r.bv = &ps.by_name(b + ".attn.bv").value;
        r.wo = &ps.by_name(b + ".attn.wo").value;
        r.bo = &ps.by_name(b + ".attn.bo").value;
        r.cln_g = &ps.by_name(p + ".ln.g").value;
        r.cln_b = &ps.by_name(p + ".ln.b").value;
        r.cwq = &ps.by_name(p + ".wq").value;
        r.cbq = &ps.by_name(p + ".bq").value;
        r.cwo = &ps.by_name(p + ".wo").value;
        r.cbo = &ps.by_name(p + ".bo").value;
        r.ln2_g = &ps.by_name(b + ".ln2.g").value;
        r.ln2_b = &ps.by_name(b + ".ln2.b").value;
        r.w1 = &ps.by_name(b + ".ffn.w1").value;
        r.b1 = &ps.by_name(b + ".ffn.b1").value;
        r.w2 = &ps.by_name(b + ".ffn.w2").value;
        r.b2 = &ps.by_name(b + ".ffn.b2").value;
        blocks_.push_back(r);
    }
    tok_ = &ps.by_name("ar.tok").value;
    pos_ = &ps.by_name("ar.pos").value;
    lnf_g_ = &ps.by_name("ar.lnf.g").value;
    lnf_b_ = &ps.by_name("ar.lnf.b").value;
    head_w_ = &ps.by_name("ar.head.w").value;
    head_b_ = &ps.by_name("ar.head.b").value;
}

ArCtxCache ArEngine::prepare_ctx(const Tensor& ctx) const {
    const auto& cfg = m_.cfg;
    if (ctx.rank() != 2 || ctx.dim(1) != cfg.d_model)
        throw ArgumentError("ar prepare_ctx: ctx must be [n, d_model]");
    ArCtxCache cache;
    cache.ctx = ctx;
    cache.n_frames = ctx.dim(0);
    for (int i = 0; i < cfg.n_dec_layers; ++i) {
        const std::string p = "ar.b" + std::to_string(i) + ".cross_attn";
        cache.k.push_back(linear_rows(ctx, m_.params.by_name(p + ".wk").value,
                                      m_.params.by_name(p + ".bk").value));
        cache.v.push_back(linear_rows(ctx, m_.params.by_name(p + ".wv").value,
                                      m_.params.by_name(p + ".bv").value));
    }
    return cache;
}

std::unique_ptr<ArEngine::State> ArEngine::new_state(int max_len) const {
    auto st = std::make_unique<State>();
    st->pos = 0;
    const int d = m_.cfg.d_model;
    for (int i = 0; i < m_.cfg.n_dec_layers; ++i) {
        st->k_self.push_back(Tensor::zeros({max_len, d}));
        st->v_self.push_back(Tensor::zeros({max_len, d}));
    }
    return st;
}

Tensor ArEngine::step(State& st, const ArCtxCache& ctx, int token_id) const {
    const auto& cfg = m_.cfg;
    const int d = cfg.d_model;
    const int dh = d / cfg.n_heads;
    if (token_id < 0 || token_id >= cfg.vocab_size)
        throw ArgumentError("ar step: token id outside vocab");
    if (st.pos >= st.k_self[0].dim(0))
        throw CapacityError("ar step: cache exhausted");
    calls_.fetch_add(1);

    Tensor x = Tensor::zeros({1, d});
    for (int c = 0; c < d; ++c) x.at(0, c) = tok_->at(token_id, c) + pos_->at(st.pos, c);

    const int t_len = st.pos + 1;  // visible history after appending this token
    thread_local StepScratch ws;
    auto attend_cached = [&](const Tensor& q, const Tensor& K, const Tensor& V,
                             int rows) {
        ensure(ws.cat, 1, d);
        ensure(ws.scores, 1, rows);
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            for (int j = 0; j < rows; ++j) {
                float dot = 0;
                for (int c = 0; c < dh; ++c)
                    dot += q.at(0, hd * dh + c) * K.at(j, hd * dh + c);
                ws.scores.at(0, j) = dot * attn_scale<float>(dh);
            }
            kern::softmax_rows(ws.scores.data.data(), 1, rows);
            for (int c = 0; c < dh; ++c) {
                float acc = 0;
                for (int j = 0; j < rows; ++j)
                    acc += ws.scores.at(0, j) * V.at(j, hd * dh + c);
                ws.cat.at(0, hd * dh + c) = acc;
            }
        }
    };

    for (int i = 0; i < cfg.n_dec_layers; ++i) {
        const BlockRefs& B = blocks_[static_cast<size_t>(i)];
        {
            layer_norm_row_into(x, *B.ln1_g, *B.ln1_b, ws.h);
            linear_row_into(ws.h, *B.wq, *B.bq, ws.q);
            linear_row_into(ws.h, *B.wk, *B.bk, ws.k);
            linear_row_into(ws.h, *B.wv, *B.bv, ws.v);
            auto& K = st.k_self[static_cast<size_t>(i)];
            auto& V = st.v_self[static_cast<size_t>(i)];
            for (int c = 0; c < d; ++c) {
                K.at(st.pos, c) = ws.k.at(0, c);
                V.at(st.pos, c) = ws.v.at(0, c);
            }
            attend_cached(ws.q, K, V, t_len);
            linear_row_into(ws.cat, *B.wo, *B.bo, ws.h);
            kern::add_inplace(x.data.data(), ws.h.data.data(), x.numel());
        }
        {
            layer_norm_row_into(x, *B.cln_g, *B.cln_b, ws.h);
            linear_row_into(ws.h, *B.cwq, *B.cbq, ws.q);
            attend_cached(ws.q, ctx.k[static_cast<size_t>(i)],
                          ctx.v[static_cast<size_t>(i)], ctx.n_frames);
            linear_row_into(ws.cat, *B.cwo, *B.cbo, ws.h);
            kern::add_inplace(x.data.data(), ws.h.data.data(), x.numel());
        }
        {
            layer_norm_row_into(x, *B.ln2_g, *B.ln2_b, ws.h);
            linear_row_into(ws.h, *B.w1, *B.b1, ws.f);
            ensure(ws.g, 1, ws.f.dim(1));
            kern::gelu_rows(ws.f.data.data(), ws.f.numel(), ws.g.data.data());
            linear_row_into(ws.g, *B.w2, *B.b2, ws.h);
            kern::add_inplace(x.data.data(), ws.h.data.data(), x.numel());
        }
    }
    layer_norm_row_into(x, *lnf_g_, *lnf_b_, ws.h);
    Tensor logits = Tensor::zeros({1, cfg.vocab_size});
    kern::gemm_nn(ws.h.data.data(), 1, d, head_w_->data.data(), head_w_->dim(1),
                  logits.data.data());
    kern::add_bias_rows(logits.data.data(), 1, cfg.vocab_size, head_b_->data.data());
    st.pos += 1;
    return logits;
}

ArGreedyResult ArEngine::greedy_decode(const ArCtxCache& ctx, int max_len) const {
    if (max_len < 1 || max_len > m_.cfg.max_canvas_len)
        throw ArgumentError("greedy_decode: max_len outside [1, max_canvas_len]");
    ArGreedyResult out;
    auto st = new_state(max_len);
    int prev = m_.bos_id();
    for (int t = 0; t < max_len; ++t) {
        const Tensor logits = step(*st, ctx, prev);
        ++out.calls;
        int best = 0;
        for (int c = 1; c < m_.cfg.vocab_size; ++c)
            if (logits.at(0, c) > logits.at(0, best)) best = c;
        if (best == m_.cfg.eos_id) {
            out.hit_eos = true;
            break;
        }
        out.tokens.push_back(best);
        prev = best;
    }
    return out;
}

}  // namespace whisfusion
