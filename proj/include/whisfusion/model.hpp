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
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "whisfusion/autodiff.hpp"
#include "whisfusion/rng.hpp"

namespace whisfusion {

// ---------------------------------------------------------------------------
// Configuration

struct ModelConfig {
    int vocab_size = 35;  // 32 character slots + mask + pad + eos
    int d_model = 128;
    int n_heads = 4;
    int n_enc_layers = 2;
    int n_dec_layers = 6;
    int ffn_mult = 4;
    int max_canvas_len = 64;
    int max_frames = 256;
    int d_feat = 32;
    int mask_id = 32;
    int pad_id = 33;
    int eos_id = 34;

    void validate() const {
        if (vocab_size < 4) throw ArgumentError("config: vocab_size too small");
        if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
            throw ArgumentError("config: d_model must be divisible by n_heads");
        if (n_enc_layers < 1 || n_dec_layers < 1)
            throw ArgumentError("config: need at least one layer per stack");
        if (ffn_mult < 1) throw ArgumentError("config: ffn_mult must be >= 1");
        if (max_canvas_len < 1 || max_frames < 1 || d_feat < 1)
            throw ArgumentError("config: sizes must be positive");
        auto in_vocab = [this](int id) { return id >= 0 && id < vocab_size; };
        if (!in_vocab(mask_id) || !in_vocab(pad_id) || !in_vocab(eos_id))
            throw ArgumentError("config: special token ids must lie inside the vocab");
        if (mask_id == pad_id || mask_id == eos_id || pad_id == eos_id)
            throw ArgumentError("config: special token ids must be distinct");
    }

    std::string serialize() const {
        std::ostringstream s;
        s << "d_feat=" << d_feat << "\nd_model=" << d_model << "\neos_id=" << eos_id
          << "\nffn_mult=" << ffn_mult << "\nmask_id=" << mask_id
          << "\nmax_canvas_len=" << max_canvas_len << "\nmax_frames=" << max_frames
          << "\nn_dec_layers=" << n_dec_layers << "\nn_enc_layers=" << n_enc_layers
          << "\nn_heads=" << n_heads << "\npad_id=" << pad_id
          << "\nvocab_size=" << vocab_size << "\n";
        return s.str();
    }

    uint64_t hash() const { return fnv1a64(serialize()); }
};

enum class Conditioning { kOn, kAblated };

// ---------------------------------------------------------------------------
// Parameter layout

// Shared attention-block parameter registration; `prefix` ends before ".wq".
template <class T>
void add_attn_params(ParamStoreT<T>& ps, const std::string& prefix, int d_in, int d,
                     RngStream init, double wo_std) {
    auto normal_tensor = [&](const std::string& name, std::vector<int> shape, double std) {
        RngStream s = init.child(name);
        TensorT<T> t = TensorT<T>::zeros(shape);
        for (auto& v : t.data) v = static_cast<T>(s.normal() * std);
        ps.add(name, std::move(t));
    };
    const double w_std = 0.02;
    normal_tensor(prefix + ".wq", {d_in, d}, w_std);
    ps.add(prefix + ".bq", TensorT<T>::zeros({d}));
    normal_tensor(prefix + ".wk", {d_in, d}, w_std);
    ps.add(prefix + ".bk", TensorT<T>::zeros({d}));
    normal_tensor(prefix + ".wv", {d_in, d}, w_std);
    ps.add(prefix + ".bv", TensorT<T>::zeros({d}));
    normal_tensor(prefix + ".wo", {d, d}, wo_std);
    ps.add(prefix + ".bo", TensorT<T>::zeros({d}));
}

template <class T>
void add_ln_params(ParamStoreT<T>& ps, const std::string& prefix, int d) {
    TensorT<T> g = TensorT<T>::zeros({d});
    g.fill(T(1));
    ps.add(prefix + ".g", std::move(g));
    ps.add(prefix + ".b", TensorT<T>::zeros({d}));
}

template <class T>
void add_ffn_params(ParamStoreT<T>& ps, const std::string& prefix, int d, int mult,
                    RngStream init) {
    auto normal_tensor = [&](const std::string& name, std::vector<int> shape) {
        RngStream s = init.child(name);
        TensorT<T> t = TensorT<T>::zeros(shape);
        for (auto& v : t.data) v = static_cast<T>(s.normal() * 0.02);
        ps.add(name, std::move(t));
    };
    normal_tensor(prefix + ".w1", {d, d * mult});
    ps.add(prefix + ".b1", TensorT<T>::zeros({d * mult}));
    normal_tensor(prefix + ".w2", {d * mult, d});
    ps.add(prefix + ".b2", TensorT<T>::zeros({d}));
}

// Builds the full parameter set: acoustic encoder + masked-diffusion decoder
// with per-block cross-attention adapters. Adapter output projections start
// near zero so a fresh model is approximately an unconditioned decoder.
template <class T>
ParamStoreT<T> build_whisfusion_params(const ModelConfig& cfg, RngStream init) {
    cfg.validate();
    ParamStoreT<T> ps;
    const int d = cfg.d_model;
    auto normal_tensor = [&](const std::string& name, std::vector<int> shape, double std) {
        RngStream s = init.child(name);
        TensorT<T> t = TensorT<T>::zeros(shape);
        for (auto& v : t.data) v = static_cast<T>(s.normal() * std);
        ps.add(name, std::move(t));
    };

    normal_tensor("encoder.in_proj.w", {cfg.d_feat, d}, 0.02);
    ps.add("encoder.in_proj.b", TensorT<T>::zeros({d}));
    normal_tensor("encoder.pos", {cfg.max_frames, d}, 0.01);
    for (int i = 0; i < cfg.n_enc_layers; ++i) {
        const std::string b = "encoder.b" + std::to_string(i);
        add_ln_params(ps, b + ".ln1", d);
        add_attn_params(ps, b + ".attn", d, d, init, 0.02);
        add_ln_params(ps, b + ".ln2", d);
        add_ffn_params(ps, b + ".ffn", d, cfg.ffn_mult, init);
    }
    add_ln_params(ps, "encoder.lnf", d);

    normal_tensor("decoder.tok", {cfg.vocab_size, d}, 0.02);
    normal_tensor("decoder.pos", {cfg.max_canvas_len, d}, 0.01);
    for (int i = 0; i < cfg.n_dec_layers; ++i) {
        const std::string b = "decoder.b" + std::to_string(i);
        add_ln_params(ps, b + ".ln1", d);
        add_attn_params(ps, b + ".attn", d, d, init, 0.02);
        add_ln_params(ps, b + ".cross_attn.ln", d);
        add_attn_params(ps, b + ".cross_attn", d, d, init, 0.002);
        add_ln_params(ps, b + ".ln2", d);
        add_ffn_params(ps, b + ".ffn", d, cfg.ffn_mult, init);
    }
    add_ln_params(ps, "decoder.lnf", d);
    normal_tensor("decoder.head.w", {d, cfg.vocab_size}, 0.002);
    ps.add("decoder.head.b", TensorT<T>::zeros({cfg.vocab_size}));
    return ps;
}

template <class T>
struct WhisfusionModelT {
    ModelConfig cfg;
    ParamStoreT<T> params;

    WhisfusionModelT(const ModelConfig& c, RngStream init)
        : cfg(c), params(build_whisfusion_params<T>(c, init)) {}

    WhisfusionModelT(const ModelConfig& c, ParamStoreT<T> ps)
        : cfg(c), params(std::move(ps)) {}
};

using WhisfusionModel = WhisfusionModelT<float>;

// ---------------------------------------------------------------------------
// Tape forward passes

template <class T>
T attn_scale(int head_dim) {
    return static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
}

// Multi-head attention sublayer on the tape. `q_in` provides queries, `kv_in`
// provides keys/values (the same node for self-attention).
template <class T>
typename TapeT<T>::Val attn_tape(TapeT<T>& t, ParamStoreT<T>& ps, const std::string& prefix,
                                 typename TapeT<T>::Val q_in, typename TapeT<T>::Val kv_in,
                                 int n_heads, bool causal) {
    const auto q = t.add_bias(t.matmul(q_in, t.param(ps, prefix + ".wq")),
                              t.param(ps, prefix + ".bq"));
    const auto k = t.add_bias(t.matmul(kv_in, t.param(ps, prefix + ".wk")),
                              t.param(ps, prefix + ".bk"));
    const auto v = t.add_bias(t.matmul(kv_in, t.param(ps, prefix + ".wv")),
                              t.param(ps, prefix + ".bv"));
    const int d = t.value(q).dim(1);
    const int dh = d / n_heads;
    std::vector<typename TapeT<T>::Val> heads;
    heads.reserve(static_cast<size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        const auto qi = t.slice_cols(q, h * dh, dh);
        const auto ki = t.slice_cols(k, h * dh, dh);
        const auto vi = t.slice_cols(v, h * dh, dh);
        const auto scores = t.scale(t.matmul_nt(qi, ki), attn_scale<T>(dh));
        const auto p = t.softmax_rows(scores, causal);
        heads.push_back(t.matmul(p, vi));
    }
    const auto cat = t.concat_cols(heads);
    return t.add_bias(t.matmul(cat, t.param(ps, prefix + ".wo")),
                      t.param(ps, prefix + ".bo"));
}

template <class T>
typename TapeT<T>::Val ffn_tape(TapeT<T>& t, ParamStoreT<T>& ps, const std::string& prefix,
                                typename TapeT<T>::Val x) {
    const auto h = t.gelu(t.add_bias(t.matmul(x, t.param(ps, prefix + ".w1")),
                                     t.param(ps, prefix + ".b1")));
    return t.add_bias(t.matmul(h, t.param(ps, prefix + ".w2")),
                      t.param(ps, prefix + ".b2"));
}

template <class T>
typename TapeT<T>::Val ln_tape(TapeT<T>& t, ParamStoreT<T>& ps, const std::string& prefix,
                               typename TapeT<T>::Val x) {
    return t.layer_norm(x, t.param(ps, prefix + ".g"), t.param(ps, prefix + ".b"),
                        T(1e-5));
}

// Acoustic encoder: frames [n_frames, d_feat] -> context [n_frames, d_model].
template <class T>
typename TapeT<T>::Val encode_tape(TapeT<T>& t, WhisfusionModelT<T>& m,
                                   typename TapeT<T>::Val frames) {
    auto& ps = m.params;
    const auto& F = t.value(frames);
    if (F.rank() != 2 || F.dim(1) != m.cfg.d_feat)
        throw ArgumentError("encode: frames must be [n, d_feat]");
    const int n = F.dim(0);
    if (n < 1) throw ArgumentError("encode: need at least one frame");
    if (n > m.cfg.max_frames) throw CapacityError("encode: frame count exceeds max_frames");

    auto x = t.add_bias(t.matmul(frames, t.param(ps, "encoder.in_proj.w")),
                        t.param(ps, "encoder.in_proj.b"));
    x = t.add(x, t.slice_rows(t.param(ps, "encoder.pos"), 0, n));
    for (int i = 0; i < m.cfg.n_enc_layers; ++i) {
        const std::string b = "encoder.b" + std::to_string(i);
        const auto h = ln_tape(t, ps, b + ".ln1", x);
        x = t.add(x, attn_tape(t, ps, b + ".attn", h, h, m.cfg.n_heads, false));
        x = t.add(x, ffn_tape(t, ps, b + ".ffn", ln_tape(t, ps, b + ".ln2", x)));
    }
    return ln_tape(t, ps, "encoder.lnf", x);
}

// Masked-diffusion decoder: full-length canvas -> per-position logits [L, V].
template <class T>
typename TapeT<T>::Val decoder_forward_tape(TapeT<T>& t, WhisfusionModelT<T>& m,
                                            const std::vector<int>& canvas,
                                            typename TapeT<T>::Val ctx,
                                            Conditioning conditioning) {
    auto& ps = m.params;
    const auto& cfg = m.cfg;
    if (static_cast<int>(canvas.size()) != cfg.max_canvas_len)
        throw ArgumentError("decoder_forward: canvas must have length max_canvas_len");
    for (int id : canvas)
        if (id < 0 || id >= cfg.vocab_size)
            throw ArgumentError("decoder_forward: canvas id outside vocab");
    if (conditioning == Conditioning::kOn) {
        const auto& C = t.value(ctx);
        if (C.rank() != 2 || C.dim(1) != cfg.d_model)
            throw ArgumentError("decoder_forward: ctx must be [n, d_model]");
    }

    const int L = cfg.max_canvas_len;
    auto x = t.add(t.embedding(t.param(ps, "decoder.tok"), canvas),
                   t.slice_rows(t.param(ps, "decoder.pos"), 0, L));
    for (int i = 0; i < cfg.n_dec_layers; ++i) {
        const std::string b = "decoder.b" + std::to_string(i);
        {
            const auto h = ln_tape(t, ps, b + ".ln1", x);
            x = t.add(x, attn_tape(t, ps, b + ".attn", h, h, cfg.n_heads, false));
        }
        if (conditioning == Conditioning::kOn) {
            const auto h = ln_tape(t, ps, b + ".cross_attn.ln", x);
            x = t.add(x, attn_tape(t, ps, b + ".cross_attn", h, ctx, cfg.n_heads, false));
        }
        x = t.add(x, ffn_tape(t, ps, b + ".ffn", ln_tape(t, ps, b + ".ln2", x)));
    }
    x = ln_tape(t, ps, "decoder.lnf", x);
    return t.add_bias(t.matmul(x, t.param(ps, "decoder.head.w")),
                      t.param(ps, "decoder.head.b"));
}

// ---------------------------------------------------------------------------
// Parameter partition: encoder (phi), per-layer adapters (psi), per-layer
// decoder body (theta).

enum class ParamRole { kEncoder, kAdapter, kDecoderBody };

struct ParamPartition {
    int n_dec_layers = 0;
    std::vector<int> encoder;                      // phi
    std::vector<std::vector<int>> adapter;         // psi, one list per layer (1-based-1)
    std::vector<std::vector<int>> decoder_body;    // theta, one list per layer

    std::vector<int> adapter_all() const {
        std::vector<int> all;
        for (const auto& v : adapter) all.insert(all.end(), v.begin(), v.end());
        return all;
    }
    std::vector<int> decoder_body_all() const {
        std::vector<int> all;
        for (const auto& v : decoder_body) all.insert(all.end(), v.begin(), v.end());
        return all;
    }
};

// Classifies every parameter by name. Embeddings fold into the first decoder
// layer, final norm and head into the last, so layer-discriminated rates
// cover every decoder-body parameter.
template <class T>
ParamPartition partition_params(const ParamStoreT<T>& ps, const ModelConfig& cfg) {
    ParamPartition part;
    part.n_dec_layers = cfg.n_dec_layers;
    part.adapter.resize(static_cast<size_t>(cfg.n_dec_layers));
    part.decoder_body.resize(static_cast<size_t>(cfg.n_dec_layers));
    for (int i = 0; i < ps.size(); ++i) {
        const std::string& name = ps.at(i).name;
        if (name.rfind("encoder.", 0) == 0) {
            part.encoder.push_back(i);
            continue;
        }
        if (name.rfind("decoder.", 0) != 0)
            throw SchemaError("partition: unclassifiable parameter " + name);
        if (name == "decoder.tok" || name == "decoder.pos") {
            part.decoder_body[0].push_back(i);
            continue;
        }
        if (name.rfind("decoder.lnf", 0) == 0 || name.rfind("decoder.head", 0) == 0) {
            part.decoder_body[static_cast<size_t>(cfg.n_dec_layers - 1)].push_back(i);
            continue;
        }
        if (name.rfind("decoder.b", 0) != 0)
            throw SchemaError("partition: unclassifiable parameter " + name);
        const size_t dot = name.find('.', 9);
        if (dot == std::string::npos)
            throw SchemaError("partition: unclassifiable parameter " + name);
        const int block = std::stoi(name.substr(9, dot - 9));
        if (block < 0 || block >= cfg.n_dec_layers)
            throw SchemaError("partition: block index out of range in " + name);
        if (name.find(".cross_attn.") != std::string::npos)
            part.adapter[static_cast<size_t>(block)].push_back(i);
        else
            part.decoder_body[static_cast<size_t>(block)].push_back(i);
    }
    return part;
}

// Sets trainable/needs_grad so only the listed roles receive updates.
template <class T>
void set_trainable(ParamStoreT<T>& ps, const ParamPartition& part,
                   const std::set<ParamRole>& roles) {
    auto apply = [&](const std::vector<int>& idxs, bool on) {
        for (int i : idxs) {
            ps.at(i).trainable = on;
            ps.at(i).needs_grad = on;
        }
    };
    apply(part.encoder, roles.count(ParamRole::kEncoder) > 0);
    apply(part.adapter_all(), roles.count(ParamRole::kAdapter) > 0);
    apply(part.decoder_body_all(), roles.count(ParamRole::kDecoderBody) > 0);
}

}  // namespace whisfusion
