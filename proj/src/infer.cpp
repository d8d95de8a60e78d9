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

#include "whisfusion/infer.hpp"

#include "whisfusion/kernels.hpp"
#include "whisfusion/threadpool.hpp"

namespace whisfusion {

namespace {

// Column-block copy helpers mirroring the tape's slice_cols/concat_cols.
// Copies keep the per-head GEMM inputs contiguous, so the engine reproduces
// the tape forward bit for bit.
void slice_cols(const Tensor& x, int start, int width, Tensor& out) {
    if (out.rank() != 2 || out.dim(0) != x.dim(0) || out.dim(1) != width)
        out = Tensor::zeros({x.dim(0), width});
    kern::Map<float>(out.data.data(), x.dim(0), width) =
        kern::CMap<float>(x.data.data(), x.dim(0), x.dim(1))
            .middleCols(start, width);
}

void put_cols(const Tensor& x, int start, Tensor& out) {
    kern::Map<float>(out.data.data(), out.dim(0), out.dim(1))
        .middleCols(start, x.dim(1)) =
        kern::CMap<float>(x.data.data(), x.dim(0), x.dim(1));
}

struct LinearRef {
    const Tensor* w;
    const Tensor* b;
};

LinearRef linear_ref(const ParamStore& ps, const std::string& wname,
                     const std::string& bname) {
    return {&ps.by_name(wname).value,
            &ps.by_name(bname).value};
}

Tensor linear(const Tensor& x, const LinearRef& l) {
    Tensor y = Tensor::zeros({x.dim(0), l.w->dim(1)});
    kern::gemm_nn(x.data.data(), x.dim(0), x.dim(1), l.w->data.data(), l.w->dim(1),
                  y.data.data());
    kern::add_bias_rows(y.data.data(), y.dim(0), y.dim(1), l.b->data.data());
    return y;
}

Tensor layer_norm(const Tensor& x, const ParamStore& ps, const std::string& prefix) {
    const auto& g = ps.by_name(prefix + ".g").value;
    const auto& b = ps.by_name(prefix + ".b").value;
    Tensor y = Tensor::zeros(x.shape);
    kern::layer_norm_rows(x.data.data(), x.dim(0), x.dim(1), g.data.data(),
                          b.data.data(), y.data.data(), static_cast<float*>(nullptr),
                          static_cast<float*>(nullptr), 1e-5f);
    return y;
}

// Multi-head attention with precomputed K/V (cross) or K/V derived from the
// same input (self). Mirrors attn_tape op for op.
Tensor attend(const Tensor& q_full, const Tensor& k_full, const Tensor& v_full,
              int n_heads, const LinearRef& out_proj) {
    const int d = q_full.dim(1);
    const int dh = d / n_heads;
    Tensor cat = Tensor::zeros({q_full.dim(0), d});
    Tensor qi, ki, vi;
    Tensor scores = Tensor::zeros({q_full.dim(0), k_full.dim(0)});
    Tensor ctx = Tensor::zeros({q_full.dim(0), dh});
    for (int h = 0; h < n_heads; ++h) {
        slice_cols(q_full, h * dh, dh, qi);
        slice_cols(k_full, h * dh, dh, ki);
        slice_cols(v_full, h * dh, dh, vi);
        kern::gemm_nt(qi.data.data(), qi.dim(0), dh, ki.data.data(), ki.dim(0),
                      scores.data.data());
        kern::scale_inplace(scores.data.data(), scores.numel(), attn_scale<float>(dh));
        kern::softmax_rows(scores.data.data(), scores.dim(0), scores.dim(1));
        kern::gemm_nn(scores.data.data(), scores.dim(0), scores.dim(1), vi.data.data(),
                      dh, ctx.data.data());
        put_cols(ctx, h * dh, cat);
    }
    return linear(cat, out_proj);
}

Tensor self_attention(const Tensor& x_normed, const ParamStore& ps,
                      const std::string& prefix, int n_heads) {
    const Tensor q = linear(x_normed, linear_ref(ps, prefix + ".wq", prefix + ".bq"));
    const Tensor k = linear(x_normed, linear_ref(ps, prefix + ".wk", prefix + ".bk"));
    const Tensor v = linear(x_normed, linear_ref(ps, prefix + ".wv", prefix + ".bv"));
    return attend(q, k, v, n_heads, linear_ref(ps, prefix + ".wo", prefix + ".bo"));
}

Tensor ffn(const Tensor& x_normed, const ParamStore& ps, const std::string& prefix) {
    Tensor h = linear(x_normed, linear_ref(ps, prefix + ".w1", prefix + ".b1"));
    Tensor g = Tensor::zeros(h.shape);
    kern::gelu_rows(h.data.data(), h.numel(), g.data.data());
    return linear(g, linear_ref(ps, prefix + ".w2", prefix + ".b2"));
}

void add_to(Tensor& x, const Tensor& y) {
    kern::add_inplace(x.data.data(), y.data.data(), x.numel());
}

// --- allocation-free building blocks for the per-step decoder call ---------

void ensure(Tensor& t, int r, int c) {
    if (t.rank() != 2 || t.dim(0) != r || t.dim(1) != c)
        t = Tensor::zeros({r, c});
}

// Scratch reused across calls on one thread. Every buffer is fully written
// before it is read, so stale contents never leak into results.
struct Scratch {
    Tensor x, h, q, k, v, cat, scores, hctx, f, g, qi, ki, vi;
};

void linear_into(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
    ensure(y, x.dim(0), w.dim(1));
    kern::gemm_nn(x.data.data(), x.dim(0), x.dim(1), w.data.data(), w.dim(1),
                  y.data.data());
    kern::add_bias_rows(y.data.data(), y.dim(0), y.dim(1), b.data.data());
}

void layer_norm_into(const Tensor& x, const Tensor& g, const Tensor& b, Tensor& y) {
    ensure(y, x.dim(0), x.dim(1));
    kern::layer_norm_rows(x.data.data(), x.dim(0), x.dim(1), g.data.data(),
                          b.data.data(), y.data.data(), static_cast<float*>(nullptr),
                          static_cast<float*>(nullptr), 1e-5f);
}

// Multi-head attention into ws.cat. Head slices are copied to contiguous
// buffers so the per-head products see exactly the operands the tape op sees;
// strided views would change Eigen's product path and break the bit-for-bit
// match with the training forward.
void attend_into(const Tensor& q_full, const Tensor& k_full, const Tensor& v_full,
                 int n_heads, Scratch& ws) {
    const int d = q_full.dim(1);
    const int dh = d / n_heads;
    ensure(ws.cat, q_full.dim(0), d);
    ensure(ws.scores, q_full.dim(0), k_full.dim(0));
    ensure(ws.hctx, q_full.dim(0), dh);
    for (int h = 0; h < n_heads; ++h) {
        slice_cols(q_full, h * dh, dh, ws.qi);
        slice_cols(k_full, h * dh, dh, ws.ki);
        slice_cols(v_full, h * dh, dh, ws.vi);
        kern::gemm_nt(ws.qi.data.data(), ws.qi.dim(0), dh, ws.ki.data.data(),
                      ws.ki.dim(0), ws.scores.data.data());
        kern::scale_inplace(ws.scores.data.data(), ws.scores.numel(),
                            attn_scale<float>(dh));
        kern::softmax_rows(ws.scores.data.data(), ws.scores.dim(0), ws.scores.dim(1));
        kern::gemm_nn(ws.scores.data.data(), ws.scores.dim(0), ws.scores.dim(1),
                      ws.vi.data.data(), dh, ws.hctx.data.data());
        put_cols(ws.hctx, h * dh, ws.cat);
    }
}

}  // namespace

InferenceEngine::InferenceEngine(const WhisfusionModel& m) : m_(m) {
    const auto& ps = m_.params;
    blocks_.reserve(static_cast<size_t>(m_.cfg.n_dec_layers));
    for (int i = 0; i < m_.cfg.n_dec_layers; ++i) {
        const std::string b = "decoder.b" + std::to_string(i);
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
    tok_ = &ps.by_name("decoder.tok").value;
    pos_ = &ps.by_name("decoder.pos").value;
    lnf_g_ = &ps.by_name("decoder.lnf.g").value;
    lnf_b_ = &ps.by_name("decoder.lnf.b").value;
    head_w_ = &ps.by_name("decoder.head.w").value;
    head_b_ = &ps.by_name("decoder.head.b").value;
}

Tensor InferenceEngine::encode(const Tensor& frames) const {
    const auto& cfg = m_.cfg;
    const auto& ps = m_.params;
    if (frames.rank() != 2 || frames.dim(1) != cfg.d_feat)
        throw ArgumentError("encode: frames must be [n, d_feat]");
    const int n = frames.dim(0);
    if (n < 1) throw ArgumentError("encode: need at least one frame");
    if (n > cfg.max_frames) throw CapacityError("encode: frame count exceeds max_frames");

    Tensor x = linear(frames, linear_ref(ps, "encoder.in_proj.w", "encoder.in_proj.b"));
    const auto& pos = ps.by_name("encoder.pos").value;
    kern::Map<float>(x.data.data(), n, cfg.d_model) +=
        kern::CMap<float>(pos.data.data(), pos.dim(0), pos.dim(1)).topRows(n);
    for (int i = 0; i < cfg.n_enc_layers; ++i) {
        const std::string b = "encoder.b" + std::to_string(i);
        add_to(x, self_attention(layer_norm(x, ps, b + ".ln1"), ps, b + ".attn",
                                 cfg.n_heads));
        add_to(x, ffn(layer_norm(x, ps, b + ".ln2"), ps, b + ".ffn"));
    }
    return layer_norm(x, ps, "encoder.lnf");
}

CtxCache InferenceEngine::prepare_ctx(const Tensor& ctx) const {
    const auto& cfg = m_.cfg;
    if (ctx.rank() != 2 || ctx.dim(1) != cfg.d_model)
        throw ArgumentError("prepare_ctx: ctx must be [n, d_model]");
    CtxCache cache;
    cache.ctx = ctx;
    cache.n_frames = ctx.dim(0);
    cache.k.reserve(static_cast<size_t>(cfg.n_dec_layers));
    cache.v.reserve(static_cast<size_t>(cfg.n_dec_layers));
    for (int i = 0; i < cfg.n_dec_layers; ++i) {
        const std::string p = "decoder.b" + std::to_string(i) + ".cross_attn";
        cache.k.push_back(linear(ctx, linear_ref(m_.params, p + ".wk", p + ".bk")));
        cache.v.push_back(linear(ctx, linear_ref(m_.params, p + ".wv", p + ".bv")));
    }
    return cache;
}

Tensor InferenceEngine::forward_one(const std::vector<int>& canvas, const CtxCache* ctx,
                                    Conditioning cond) const {
    const auto& cfg = m_.cfg;
    if (static_cast<int>(canvas.size()) != cfg.max_canvas_len)
        throw ArgumentError("decoder_call: canvas must have length max_canvas_len");
    for (int id : canvas)
        if (id < 0 || id >= cfg.vocab_size)
            throw ArgumentError("decoder_call: canvas id outside vocab");
    if (cond == Conditioning::kOn && (!ctx || ctx->n_frames < 1))
        throw ArgumentError("decoder_call: conditioning requires a context cache");

    const int L = cfg.max_canvas_len;
    const int d = cfg.d_model;
    thread_local Scratch ws;
    ensure(ws.x, L, d);
    for (int r = 0; r < L; ++r) {
        kern::VecMap<float>(ws.x.row_ptr(r), d) =
            kern::CVecMap<float>(tok_->row_ptr(canvas[r]), d) +
            kern::CVecMap<float>(pos_->row_ptr(r), d);
    }

    for (int i = 0; i < cfg.n_dec_layers; ++i) {
        const BlockRefs& B = blocks_[static_cast<size_t>(i)];
        layer_norm_into(ws.x, *B.ln1_g, *B.ln1_b, ws.h);
        linear_into(ws.h, *B.wq, *B.bq, ws.q);
        linear_into(ws.h, *B.wk, *B.bk, ws.k);
        linear_into(ws.h, *B.wv, *B.bv, ws.v);
        attend_into(ws.q, ws.k, ws.v, cfg.n_heads, ws);
        linear_into(ws.cat, *B.wo, *B.bo, ws.h);
        add_to(ws.x, ws.h);
        if (cond == Conditioning::kOn) {
            layer_norm_into(ws.x, *B.cln_g, *B.cln_b, ws.h);
            linear_into(ws.h, *B.cwq, *B.cbq, ws.q);
            attend_into(ws.q, ctx->k[static_cast<size_t>(i)],
                        ctx->v[static_cast<size_t>(i)], cfg.n_heads, ws);
            linear_into(ws.cat, *B.cwo, *B.cbo, ws.h);
            add_to(ws.x, ws.h);
        }
        layer_norm_into(ws.x, *B.ln2_g, *B.ln2_b, ws.h);
        linear_into(ws.h, *B.w1, *B.b1, ws.f);
        ensure(ws.g, ws.f.dim(0), ws.f.dim(1));
        kern::gelu_rows(ws.f.data.data(), ws.f.numel(), ws.g.data.data());
        linear_into(ws.g, *B.w2, *B.b2, ws.h);
        add_to(ws.x, ws.h);
    }
    layer_norm_into(ws.x, *lnf_g_, *lnf_b_, ws.h);
    Tensor logits = Tensor::zeros({L, cfg.vocab_size});
    kern::gemm_nn(ws.h.data.data(), L, d, head_w_->data.data(), head_w_->dim(1),
                  logits.data.data());
    kern::add_bias_rows(logits.data.data(), L, cfg.vocab_size, head_b_->data.data());
    return logits;
}

std::vector<Tensor> InferenceEngine::decoder_call(
    const std::vector<std::vector<int>>& canvases, const CtxCache* ctx,
    Conditioning cond) const {
    if (canvases.empty()) throw ArgumentError("decoder_call: need at least one canvas");
    calls_.fetch_add(1);
    std::vector<Tensor> out(canvases.size());
    auto& pool = ThreadPool::global();
    pool.parallel_for(static_cast<int>(canvases.size()), [&](int i) {
        out[static_cast<size_t>(i)] =
            forward_one(canvases[static_cast<size_t>(i)], ctx, cond);
    });
    return out;
}

}  // namespace whisfusion
