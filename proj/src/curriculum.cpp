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

#include "whisfusion/curriculum.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <nlohmann/json.hpp>
#include <set>
#include <unordered_map>

#include "whisfusion/autodiff.hpp"
#include "whisfusion/diffusion.hpp"
#include "whisfusion/eval.hpp"
#include "whisfusion/infer.hpp"
#include "whisfusion/kernels.hpp"
#include "whisfusion/pdd.hpp"

namespace whisfusion {

void StageConfig::validate() const {
    if (stage.empty()) throw ArgumentError("stage config: empty stage name");
    if (max_epochs < 1) throw ArgumentError("stage config: max_epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("stage config: batch_size must be >= 1");
    if (!(base_lr > 0)) throw ArgumentError("stage config: base_lr must be positive");
    if (weight_decay < 0) throw ArgumentError("stage config: negative weight_decay");
    if (warmup_ratio < 0 || warmup_ratio >= 1)
        throw ArgumentError("stage config: warmup_ratio must be in [0,1)");
    if (patience < 0) throw ArgumentError("stage config: negative patience");
    if (min_delta < 0) throw ArgumentError("stage config: negative min_delta");
    if (!(llrd_gamma > 0)) throw ArgumentError("stage config: llrd_gamma must be positive");
    if (val_decode_n < 0) throw ArgumentError("stage config: negative val_decode_n");
}

StageConfig default_stage_config(const std::string& stage) {
    StageConfig c;
    c.stage = stage;
    if (stage == "0e") {
        c.max_epochs = 12;
        c.base_lr = 1e-3;
        c.warmup_ratio = 0.02;
        c.weight_decay = 0.01;
        c.patience = 4;
        c.val_decode_n = 0;
    } else if (stage == "0d") {
        c.max_epochs = 18;
        c.base_lr = 3e-4;
        c.warmup_ratio = 0.02;
        c.weight_decay = 0.01;
        c.patience = 6;
        c.val_decode_n = 0;
    } else if (stage == "1") {
        c.max_epochs = 36;
        c.base_lr = 1e-4;
        c.warmup_ratio = 0.02;
        c.weight_decay = 0.01;
        c.patience = 8;
    } else if (stage == "2") {
        c.max_epochs = 20;
        c.base_lr = 1e-5;
        c.warmup_ratio = 0.10;
        c.weight_decay = 0.005;
        c.patience = 5;
        c.llrd_gamma = 0.9;
    } else if (stage == "ar") {
        c.max_epochs = 30;
        c.base_lr = 3e-4;
        c.warmup_ratio = 0.02;
        c.weight_decay = 0.01;
        c.patience = 8;
    } else {
        throw ArgumentError("unknown training stage: " + stage);
    }
    return c;
}

std::string TrainLog::to_jsonl() const {
    std::string out;
    for (const auto& e : epochs) {
        nlohmann::json j{{"stage", stage},        {"epoch", e.epoch},
                         {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                         {"lr_last", e.lr_last},  {"seconds", e.seconds},
                         {"is_best", e.is_best}};
        if (e.val_wer >= 0) j["val_wer"] = e.val_wer;
        if (e.val_cer >= 0) j["val_cer"] = e.val_cer;
        out += j.dump();
        out += '\n';
    }
    nlohmann::json tail{{"stage", stage},
                        {"summary", true},
                        {"best_epoch", best_epoch},
                        {"best_val_loss", best_val_loss},
                        {"optimizer_steps", optimizer_steps}};
    out += tail.dump();
    out += '\n';
    return out;
}

namespace {

std::vector<int> split_indices(const Corpus& corpus, const std::string& split) {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(corpus.utts.size()); ++i)
        if (corpus.utts[static_cast<size_t>(i)].split == split) idx.push_back(i);
    return idx;
}

// Character ids followed by eos, no padding: the AR target sequence.
std::vector<int> chars_plus_eos(const std::string& transcript, const ModelConfig& cfg) {
    const auto full = tokenize(transcript, cfg.max_canvas_len, cfg);
    std::vector<int> out;
    for (int id : full) {
        out.push_back(id);
        if (id == cfg.eos_id) break;
    }
    return out;
}

// Everything one stage needs beyond its StageConfig. The loop runner owns
// shuffling, batching, gradient averaging, the LR schedule, early stopping,
// and best-weight restoration; stages provide the loss and the probes.
struct LoopHooks {
    ParamStore* params = nullptr;
    std::vector<int> train_items;
    // Builds one sample's scalar loss on a fresh tape; returns -1 to skip the
    // sample (e.g. a corruption draw that masked nothing).
    std::function<Tape::Val(Tape&, int item, RngStream)> sample_loss;
    std::function<double()> val_loss;
    std::function<void(EpochRecord&)> decode_probe;  // optional
    std::function<void()> check_invariants;          // optional, runs every epoch
    std::function<double(int)> lr_scale;             // optional per-param multiplier
};

TrainLog run_loop(const StageConfig& cfg, LoopHooks& hooks, RngStream rng) {
    cfg.validate();
    if (hooks.params == nullptr) throw ArgumentError("train: null parameter store");
    if (hooks.train_items.empty()) throw ArgumentError("train: empty training split");
    ParamStore& ps = *hooks.params;

    const int n_train = static_cast<int>(hooks.train_items.size());
    const int64_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    LrPlan plan;
    plan.base_lr = cfg.base_lr;
    plan.warmup_ratio = cfg.warmup_ratio;
    plan.total_steps = steps_per_epoch * cfg.max_epochs;
    plan.validate();

    AdamWConfig ocfg;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW opt(ocfg);
    const auto lr_scale = hooks.lr_scale ? hooks.lr_scale : [](int) { return 1.0; };

    auto snapshot = [&ps] {
        std::vector<AlignedVec<float>> s;
        s.reserve(static_cast<size_t>(ps.size()));
        for (const auto& p : ps) s.push_back(p.value.data);
        return s;
    };
    auto restore = [&ps](const std::vector<AlignedVec<float>>& s) {
        int i = 0;
        for (auto& p : ps) p.value.data = s[static_cast<size_t>(i++)];
    };

    TrainLog log;
    log.stage = cfg.stage;
    std::vector<AlignedVec<float>> best_weights;
    int epochs_since_best = 0;
    int64_t gstep = 0;
    double last_lr = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<int> order = hooks.train_items;
        auto shuffle_rng = rng.child("shuffle").child(static_cast<uint64_t>(epoch));
        for (int i = n_train - 1; i > 0; --i) {
            const int j = static_cast<int>(shuffle_rng.below(static_cast<uint32_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }

        double loss_sum = 0;
        int64_t loss_count = 0;
        for (int start = 0; start < n_train; start += cfg.batch_size) {
            const int end = std::min(start + cfg.batch_size, n_train);
            ps.zero_grads();
            int valid = 0;
            for (int b = start; b < end; ++b) {
                Tape tape;
                auto sample_rng = rng.child("sample")
                                      .child(static_cast<uint64_t>(epoch))
                                      .child(static_cast<uint64_t>(b));
                const Tape::Val lv =
                    hooks.sample_loss(tape, order[static_cast<size_t>(b)], sample_rng);
                if (lv < 0) continue;
                const double lval = static_cast<double>(tape.value(lv).item());
                if (!std::isfinite(lval)) throw NumericFault("train: non-finite sample loss");
                tape.backward(lv);
                loss_sum += lval;
                ++loss_count;
                ++valid;
            }
            if (valid == 0) continue;
            const float inv = 1.0f / static_cast<float>(valid);
            for (auto& p : ps)
                if (p.trainable) kern::scale_inplace(p.grad.data.data(), p.grad.numel(), inv);
            const double lr = lr_at(plan, gstep);
            opt.step(ps, [&](int i) { return lr * lr_scale(i); });
            last_lr = lr;
            ++gstep;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
        rec.val_loss = hooks.val_loss();
        if (!std::isfinite(rec.val_loss)) throw NumericFault("train: non-finite validation loss");
        if (hooks.decode_probe) hooks.decode_probe(rec);
        if (hooks.check_invariants) hooks.check_invariants();
        rec.lr_last = last_lr;
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (log.best_epoch < 0 || rec.val_loss < log.best_val_loss - cfg.min_delta) {
            log.best_epoch = epoch;
            log.best_val_loss = rec.val_loss;
            best_weights = snapshot();
            epochs_since_best = 0;
            rec.is_best = true;
        } else {
            ++epochs_since_best;
        }
        log.epochs.push_back(rec);
        if (epochs_since_best > cfg.patience) break;
    }

    log.optimizer_steps = gstep;
    if (!best_weights.empty()) restore(best_weights);
    return log;
}

// Feature cache: the encoder input is deterministic in (utterance, spec), so
// regeneration cost is paid once per utterance.
class FeatureCache {
  public:
    FeatureCache(const Corpus& corpus, const ModelConfig& cfg) : corpus_(corpus), cfg_(cfg) {}

    const FrameFeatures& get(int item) {
        auto it = cache_.find(item);
        if (it != cache_.end()) return it->second;
        const auto& u = corpus_.utts.at(static_cast<size_t>(item));
        auto [pos, ok] = cache_.emplace(item, features_for(u, corpus_.spec, cfg_.max_frames));
        (void)ok;
        return pos->second;
    }

  private:
    const Corpus& corpus_;
    const ModelConfig& cfg_;
    std::unordered_map<int, FrameFeatures> cache_;
};

// Encoded-context cache for stages that keep the encoder frozen.
class CtxValueCache {
  public:
    CtxValueCache(const InferenceEngine& engine, FeatureCache& feats)
        : engine_(engine), feats_(feats) {}

    const Tensor& get(int item) {
        auto it = cache_.find(item);
        if (it != cache_.end()) return it->second;
        auto [pos, ok] = cache_.emplace(item, engine_.encode(feats_.get(item).frames));
        (void)ok;
        return pos->second;
    }

  private:
    const InferenceEngine& engine_;
    FeatureCache& feats_;
    std::unordered_map<int, Tensor> cache_;
};

// Mean validation loss of the masked-infill objective with per-utterance
// fixed corruption draws, so the number is comparable across epochs.
double mdm_val_loss(WhisfusionModel& model, const Corpus& corpus,
                    const std::vector<int>& items, RngStream val_rng, Conditioning cond,
                    CtxValueCache* ctx_cache) {
    double sum = 0;
    int64_t count = 0;
    for (size_t j = 0; j < items.size(); ++j) {
        const auto& u = corpus.utts.at(static_cast<size_t>(items[j]));
        auto vs = val_rng.child(static_cast<uint64_t>(j));
        const auto y0 = tokenize(u.transcript, model.cfg.max_canvas_len, model.cfg);
        const double t_ratio = sample_t(1, vs);
        const auto masked = corrupt_bernoulli(y0, t_ratio, model.cfg.mask_id, vs);
        if (masked.mask_positions.empty()) continue;
        Tape tape;
        Tape::Val ctx = 0;
        if (cond == Conditioning::kOn)
            ctx = tape.leaf(ctx_cache->get(items[j]), false);
        const auto logits = decoder_forward_tape(tape, model, masked.canvas, ctx, cond);
        const auto loss = mdm_loss_tape(tape, logits, y0, masked);
        sum += static_cast<double>(tape.value(loss).item());
        ++count;
    }
    if (count == 0) throw ContractError("val: every sample drew an empty mask set");
    return sum / static_cast<double>(count);
}

// Per-epoch decode probe: single-candidate decodes on a dev subset.
void decode_probe_impl(const InferenceEngine& engine, const Corpus& corpus,
                       CtxValueCache& ctx_cache, const std::vector<int>& items, int n_probe,
                       EpochRecord& rec) {
    const int n = std::min<int>(n_probe, static_cast<int>(items.size()));
    if (n == 0) return;
    const std::vector<double> schedule{1.0, 0.9, 0.85, 0.8};
    double wer_sum = 0, cer_sum = 0;
    for (int j = 0; j < n; ++j) {
        const auto& u = corpus.utts.at(static_cast<size_t>(items[static_cast<size_t>(j)]));
        const CtxCache cache = engine.prepare_ctx(ctx_cache.get(items[static_cast<size_t>(j)]));
        const auto res = decode_single(engine, &cache, schedule, RngStream(0));
        wer_sum += wer(res.transcript, u.transcript);
        cer_sum += cer(res.transcript, u.transcript);
    }
    rec.val_wer = wer_sum / n;
    rec.val_cer = cer_sum / n;
}

uint64_t group_hash(const ParamStore& ps, const std::vector<int>& idxs) {
    return ps.hash_values(idxs);
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage 0e: encoder warm-up. Trains encoder + linear frame classifier on the
// per-frame character labels, then copies the encoder weights back.

TrainLog train_stage0_encoder(WhisfusionModel& model, const Corpus& corpus,
                              const StageConfig& cfg, RngStream rng) {
    const auto train_items = split_indices(corpus, "train");
    const auto dev_items = split_indices(corpus, "dev");
    if (dev_items.empty()) throw ArgumentError("train 0e: empty dev split");

    // Joint store: copies of the encoder parameters plus the probe head.
    ParamStore joint;
    for (const auto& p : model.params)
        if (p.name.rfind("encoder.", 0) == 0) joint.add(p.name, p.value);
    auto probe_rng = rng.child("probe_init");
    Tensor pw = Tensor::zeros({model.cfg.d_model, kNumCharSlots});
    for (auto& x : pw.data) x = static_cast<float>(probe_rng.normal() * 0.02);
    joint.add("probe.w", std::move(pw));
    joint.add("probe.b", Tensor::zeros({kNumCharSlots}));
    WhisfusionModel joint_model(model.cfg, std::move(joint));

    FeatureCache feats(corpus, model.cfg);
    auto frame_loss = [&](Tape& tape, int item) {
        const auto& f = feats.get(item);
        const int n = f.frames.dim(0);
        const auto frames = tape.leaf(f.frames, false);
        const auto enc = encode_tape(tape, joint_model, frames);
        const auto logits = tape.add_bias(tape.matmul(enc, tape.param(joint_model.params, "probe.w")),
                                          tape.param(joint_model.params, "probe.b"));
        std::vector<int> positions(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;
        const auto nll = tape.masked_nll(logits, f.char_labels, positions);
        return tape.scale(nll, 1.0f / static_cast<float>(n));
    };

    LoopHooks hooks;
    hooks.params = &joint_model.params;
    hooks.train_items = train_items;
    hooks.sample_loss = [&](Tape& tape, int item, RngStream) { return frame_loss(tape, item); };
    hooks.val_loss = [&] {
        double sum = 0;
        for (int item : dev_items) {
            Tape tape;
            sum += static_cast<double>(tape.value(frame_loss(tape, item)).item());
        }
        return sum / static_cast<double>(dev_items.size());
    };

    TrainLog log = run_loop(cfg, hooks, rng);
    for (const auto& p : joint_model.params)
        if (p.name.rfind("encoder.", 0) == 0) model.params.by_name(p.name).value = p.value;
    return log;
}

// ---------------------------------------------------------------------------
// Stage 0d: unconditional decoder warm-up. Masked-infill training of the
// decoder body with conditioning ablated; encoder and adapters must not move.

TrainLog train_stage0_decoder(WhisfusionModel& model, const Corpus& corpus,
                              const StageConfig& cfg, RngStream rng) {
    const auto train_items = split_indices(corpus, "train");
    const auto dev_items = split_indices(corpus, "dev");
    if (dev_items.empty()) throw ArgumentError("train 0d: empty dev split");

    const auto part = partition_params(model.params, model.cfg);
    set_trainable(model.params, part, {ParamRole::kDecoderBody});
    const uint64_t enc_hash = group_hash(model.params, part.encoder);
    const uint64_t adapter_hash = group_hash(model.params, part.adapter_all());

    LoopHooks hooks;
    hooks.params = &model.params;
    hooks.train_items = train_items;
    hooks.sample_loss = [&](Tape& tape, int item, RngStream srng) -> Tape::Val {
        const auto& u = corpus.utts.at(static_cast<size_t>(item));
        const auto y0 = tokenize(u.transcript, model.cfg.max_canvas_len, model.cfg);
        const double t_ratio = sample_t(1, srng);
        const auto masked = corrupt_bernoulli(y0, t_ratio, model.cfg.mask_id, srng);
        if (masked.mask_positions.empty()) return -1;
        const auto logits =
            decoder_forward_tape(tape, model, masked.canvas, 0, Conditioning::kAblated);
        return mdm_loss_tape(tape, logits, y0, masked);
    };
    auto val_rng = rng.child("val");
    hooks.val_loss = [&] {
        return mdm_val_loss(model, corpus, dev_items, val_rng, Conditioning::kAblated, nullptr);
    };
    hooks.check_invariants = [&] {
        if (group_hash(model.params, part.encoder) != enc_hash)
            throw ContractError("stage 0d: encoder parameters moved");
        if (group_hash(model.params, part.adapter_all()) != adapter_hash)
            throw ContractError("stage 0d: adapter parameters moved");
    };
    return run_loop(cfg, hooks, rng);
}

// ---------------------------------------------------------------------------
// Stage 1: adapters only, full masking range, conditioning on.

TrainLog train_stage1(WhisfusionModel& model, const Corpus& corpus, const StageConfig& cfg,
                      RngStream rng) {
    const auto train_items = split_indices(corpus, "train");
    const auto dev_items = split_indices(corpus, "dev");
    if (dev_items.empty()) throw ArgumentError("train 1: empty dev split");

    const auto part = partition_params(model.params, model.cfg);
    set_trainable(model.params, part, {ParamRole::kAdapter});
    const uint64_t enc_hash = group_hash(model.params, part.encoder);
    const uint64_t body_hash = group_hash(model.params, part.decoder_body_all());

    InferenceEngine engine(model);
    FeatureCache feats(corpus, model.cfg);
    CtxValueCache ctx_cache(engine, feats);

    LoopHooks hooks;
    hooks.params = &model.params;
    hooks.train_items = train_items;
    hooks.sample_loss = [&](Tape& tape, int item, RngStream srng) -> Tape::Val {
        const auto& u = corpus.utts.at(static_cast<size_t>(item));
        const auto y0 = tokenize(u.transcript, model.cfg.max_canvas_len, model.cfg);
        const double t_ratio = sample_t(1, srng);
        const auto masked = corrupt_bernoulli(y0, t_ratio, model.cfg.mask_id, srng);
        if (masked.mask_positions.empty()) return -1;
        const auto ctx = tape.leaf(ctx_cache.get(item), false);
        const auto logits = decoder_forward_tape(tape, model, masked.canvas, ctx, Conditioning::kOn);
        return mdm_loss_tape(tape, logits, y0, masked);
    };
    auto val_rng = rng.child("val");
    hooks.val_loss = [&] {
        return mdm_val_loss(model, corpus, dev_items, val_rng, Conditioning::kOn, &ctx_cache);
    };
    hooks.decode_probe = [&](EpochRecord& rec) {
        decode_probe_impl(engine, corpus, ctx_cache, dev_items, cfg.val_decode_n, rec);
    };
    hooks.check_invariants = [&] {
        if (group_hash(model.params, part.encoder) != enc_hash)
            throw ContractError("stage 1: encoder parameters moved");
        if (group_hash(model.params, part.decoder_body_all()) != body_hash)
            throw ContractError("stage 1: decoder-body parameters moved");
    };
    return run_loop(cfg, hooks, rng);
}

// ---------------------------------------------------------------------------
// Stage 2: adapters + decoder body, heavy masking, layer-discriminated rates.

std::vector<double> stage2_lr_scales(const ParamStore& ps, const ModelConfig& cfg,
                                     double gamma) {
    const auto part = partition_params(ps, cfg);
    const auto by_layer = llrd_scales(cfg.n_dec_layers, gamma);
    std::vector<double> scale(static_cast<size_t>(ps.size()), 1.0);
    for (int l = 0; l < cfg.n_dec_layers; ++l) {
        for (int i : part.adapter[static_cast<size_t>(l)])
            scale[static_cast<size_t>(i)] = by_layer[static_cast<size_t>(l)];
        for (int i : part.decoder_body[static_cast<size_t>(l)])
            scale[static_cast<size_t>(i)] = by_layer[static_cast<size_t>(l)];
    }
    return scale;
}

TrainLog train_stage2(WhisfusionModel& model, const Corpus& corpus, const StageConfig& cfg,
                      RngStream rng) {
    const auto train_items = split_indices(corpus, "train");
    const auto dev_items = split_indices(corpus, "dev");
    if (dev_items.empty()) throw ArgumentError("train 2: empty dev split");

    const auto part = partition_params(model.params, model.cfg);
    set_trainable(model.params, part, {ParamRole::kAdapter, ParamRole::kDecoderBody});
    const uint64_t enc_hash = group_hash(model.params, part.encoder);
    const auto scale = stage2_lr_scales(model.params, model.cfg, cfg.llrd_gamma);

    InferenceEngine engine(model);
    FeatureCache feats(corpus, model.cfg);
    CtxValueCache ctx_cache(engine, feats);

    LoopHooks hooks;
    hooks.params = &model.params;
    hooks.train_items = train_items;
    hooks.lr_scale = [&scale](int i) { return scale[static_cast<size_t>(i)]; };
    hooks.sample_loss = [&](Tape& tape, int item, RngStream srng) -> Tape::Val {
        const auto& u = corpus.utts.at(static_cast<size_t>(item));
        const auto y0 = tokenize(u.transcript, model.cfg.max_canvas_len, model.cfg);
        const double t_ratio = sample_t(2, srng);
        const auto masked = corrupt_bernoulli(y0, t_ratio, model.cfg.mask_id, srng);
        if (masked.mask_positions.empty()) return -1;
        const auto ctx = tape.leaf(ctx_cache.get(item), false);
        const auto logits = decoder_forward_tape(tape, model, masked.canvas, ctx, Conditioning::kOn);
        return mdm_loss_tape(tape, logits, y0, masked);
    };
    auto val_rng = rng.child("val");
    hooks.val_loss = [&] {
        return mdm_val_loss(model, corpus, dev_items, val_rng, Conditioning::kOn, &ctx_cache);
    };
    hooks.decode_probe = [&](EpochRecord& rec) {
        decode_probe_impl(engine, corpus, ctx_cache, dev_items, cfg.val_decode_n, rec);
    };
    hooks.check_invariants = [&] {
        if (group_hash(model.params, part.encoder) != enc_hash)
            throw ContractError("stage 2: encoder parameters moved");
    };
    return run_loop(cfg, hooks, rng);
}

// ---------------------------------------------------------------------------
// AR baseline: teacher-forced next-token training under the frozen encoder.

TrainLog train_ar_stage(ArModel& ar, const WhisfusionModel& encoder_source,
                        const Corpus& corpus, const StageConfig& cfg, RngStream rng) {
    const auto train_items = split_indices(corpus, "train");
    const auto dev_items = split_indices(corpus, "dev");
    if (dev_items.empty()) throw ArgumentError("train ar: empty dev split");

    for (auto& p : ar.params) {
        p.trainable = true;
        p.needs_grad = true;
    }
    InferenceEngine encoder(encoder_source);
    FeatureCache feats(corpus, ar.cfg);
    CtxValueCache ctx_cache(encoder, feats);

    auto teacher_forced_loss = [&](Tape& tape, int item) {
        const auto& u = corpus.utts.at(static_cast<size_t>(item));
        const auto targets = chars_plus_eos(u.transcript, ar.cfg);
        const int n = static_cast<int>(targets.size());
        std::vector<int> input(static_cast<size_t>(n));
        input[0] = ar.bos_id();
        for (int i = 1; i < n; ++i) input[static_cast<size_t>(i)] = targets[static_cast<size_t>(i - 1)];
        const auto ctx = tape.leaf(ctx_cache.get(item), false);
        const auto logits = ar_forward_tape(tape, ar, input, ctx);
        std::vector<int> positions(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;
        const auto nll = tape.masked_nll(logits, targets, positions);
        return tape.scale(nll, 1.0f / static_cast<float>(n));
    };

    LoopHooks hooks;
    hooks.params = &ar.params;
    hooks.train_items = train_items;
    hooks.sample_loss = [&](Tape& tape, int item, RngStream) { return teacher_forced_loss(tape, item); };
    hooks.val_loss = [&] {
        double sum = 0;
        for (int item : dev_items) {
            Tape tape;
            sum += static_cast<double>(tape.value(teacher_forced_loss(tape, item)).item());
        }
        return sum / static_cast<double>(dev_items.size());
    };
    hooks.decode_probe = [&](EpochRecord& rec) {
        const int n = std::min<int>(cfg.val_decode_n, static_cast<int>(dev_items.size()));
        if (n == 0) return;
        ArEngine engine(ar);
        double wer_sum = 0, cer_sum = 0;
        for (int j = 0; j < n; ++j) {
            const auto& u = corpus.utts.at(static_cast<size_t>(dev_items[static_cast<size_t>(j)]));
            const auto cache = engine.prepare_ctx(ctx_cache.get(dev_items[static_cast<size_t>(j)]));
            const auto res = engine.greedy_decode(cache, ar.cfg.max_canvas_len);
            const std::string hyp = detokenize(res.tokens, ar.cfg);
            wer_sum += wer(hyp, u.transcript);
            cer_sum += cer(hyp, u.transcript);
        }
        rec.val_wer = wer_sum / n;
        rec.val_cer = cer_sum / n;
    };
    return run_loop(cfg, hooks, rng);
}

// ---------------------------------------------------------------------------
// Probes

double encoder_probe_accuracy(const WhisfusionModel& model, const Corpus& corpus,
                              RngStream rng, bool shuffle_labels, int max_train_utts,
                              int max_eval_utts) {
    InferenceEngine engine(model);
    const auto gather = [&](const std::string& split, int cap, Tensor& x, std::vector<int>& y) {
        const auto items = split_indices(corpus, split);
        const int n_utts = std::min<int>(cap, static_cast<int>(items.size()));
        if (n_utts == 0) throw ArgumentError("probe: empty split " + split);
        std::vector<Tensor> encoded;
        int64_t rows = 0;
        for (int j = 0; j < n_utts; ++j) {
            const auto& u = corpus.utts.at(static_cast<size_t>(items[static_cast<size_t>(j)]));
            const auto f = features_for(u, corpus.spec, model.cfg.max_frames);
            encoded.push_back(engine.encode(f.frames));
            y.insert(y.end(), f.char_labels.begin(), f.char_labels.end());
            rows += f.frames.dim(0);
        }
        x = Tensor::zeros({static_cast<int>(rows), model.cfg.d_model});
        int64_t r = 0;
        for (const auto& e : encoded) {
            std::copy(e.data.begin(), e.data.end(), x.data.begin() + r * model.cfg.d_model);
            r += e.dim(0);
        }
    };

    Tensor x_train, x_eval;
    std::vector<int> y_train, y_eval;
    gather("train", max_train_utts, x_train, y_train);
    gather("test", max_eval_utts, x_eval, y_eval);

    if (shuffle_labels) {
        auto srng = rng.child("shuffle");
        for (size_t i = y_train.size() - 1; i > 0; --i) {
            const size_t j = srng.below(static_cast<uint32_t>(i + 1));
            std::swap(y_train[i], y_train[j]);
        }
    }

    ParamStore probe;
    auto init_rng = rng.child("init");
    Tensor pw = Tensor::zeros({model.cfg.d_model, kNumCharSlots});
    for (auto& v : pw.data) v = static_cast<float>(init_rng.normal() * 0.02);
    probe.add("probe.w", std::move(pw));
    probe.add("probe.b", Tensor::zeros({kNumCharSlots}));

    const int n_rows = static_cast<int>(x_train.dim(0));
    std::vector<int> all_rows(static_cast<size_t>(n_rows));
    for (int i = 0; i < n_rows; ++i) all_rows[static_cast<size_t>(i)] = i;
    AdamW opt;
    const int steps = 250;
    for (int s = 0; s < steps; ++s) {
        probe.zero_grads();
        Tape tape;
        const auto x = tape.leaf(x_train, false);
        const auto logits = tape.add_bias(tape.matmul(x, tape.param(probe, "probe.w")),
                                          tape.param(probe, "probe.b"));
        const auto nll = tape.masked_nll(logits, y_train, all_rows);
        const auto loss = tape.scale(nll, 1.0f / static_cast<float>(n_rows));
        tape.backward(loss);
        opt.step(probe, 0.05);
    }

    // Accuracy on held-out frames.
    const auto& w = probe.by_name("probe.w").value;
    const auto& b = probe.by_name("probe.b").value;
    Tensor logits = Tensor::zeros({x_eval.dim(0), kNumCharSlots});
    kern::gemm_nn(x_eval.data.data(), x_eval.dim(0), x_eval.dim(1), w.data.data(),
                  kNumCharSlots, logits.data.data());
    kern::add_bias_rows(logits.data.data(), logits.dim(0), logits.dim(1), b.data.data());
    int64_t hits = 0;
    for (int r = 0; r < logits.dim(0); ++r) {
        const float* row = logits.row_ptr(r);
        int best = 0;
        for (int c = 1; c < kNumCharSlots; ++c)
            if (row[c] > row[best]) best = c;
        if (best == y_eval[static_cast<size_t>(r)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.dim(0));
}

double masked_recovery_rate(const WhisfusionModel& model, const Corpus& corpus,
                            const std::string& split, double ratio, RngStream rng,
                            Conditioning cond, int max_utts) {
    const auto items = split_indices(corpus, split);
    const int n = std::min<int>(max_utts, static_cast<int>(items.size()));
    if (n == 0) throw ArgumentError("recovery: empty split " + split);
    InferenceEngine engine(model);
    FeatureCache feats(corpus, model.cfg);
    int64_t hits = 0, total = 0;
    for (int j = 0; j < n; ++j) {
        const int item = items[static_cast<size_t>(j)];
        const auto& u = corpus.utts.at(static_cast<size_t>(item));
        const auto y0 = tokenize(u.transcript, model.cfg.max_canvas_len, model.cfg);
        auto crng = rng.child(static_cast<uint64_t>(j));
        const auto masked = corrupt_fraction(y0, ratio, model.cfg.mask_id, crng);
        CtxCache cache;
        const CtxCache* cache_ptr = nullptr;
        if (cond == Conditioning::kOn) {
            cache = engine.prepare_ctx(engine.encode(feats.get(item).frames));
            cache_ptr = &cache;
        }
        const auto logits = engine.decoder_call({masked.canvas}, cache_ptr, cond).at(0);
        for (int p : masked.mask_positions) {
            const float* row = logits.row_ptr(p);
            int best = 0;
            for (int c = 1; c < model.cfg.vocab_size; ++c) {
                if (c == model.cfg.mask_id) continue;
                if (row[c] > row[best]) best = c;
            }
            if (best == y0[static_cast<size_t>(p)]) ++hits;
            ++total;
        }
    }
    if (total == 0) throw ContractError("recovery: no positions were masked");
    return static_cast<double>(hits) / static_cast<double>(total);
}

double ar_teacher_forced_accuracy(ArModel& ar, const WhisfusionModel& encoder_source,
                                  const Corpus& corpus, const std::string& split,
                                  int max_utts) {
    const auto items = split_indices(corpus, split);
    const int n = std::min<int>(max_utts, static_cast<int>(items.size()));
    if (n == 0) throw ArgumentError("accuracy: empty split " + split);
    InferenceEngine encoder(encoder_source);
    FeatureCache feats(corpus, ar.cfg);
    ArEngine engine(ar);
    int64_t hits = 0, total = 0;
    for (int j = 0; j < n; ++j) {
        const int item = items[static_cast<size_t>(j)];
        const auto& u = corpus.utts.at(static_cast<size_t>(item));
        const auto targets = chars_plus_eos(u.transcript, ar.cfg);
        const auto cache = engine.prepare_ctx(encoder.encode(feats.get(item).frames));
        auto state = engine.new_state(ar.cfg.max_canvas_len);
        int prev = ar.bos_id();
        for (int tok : targets) {
            const Tensor row = engine.step(*state, cache, prev);
            int best = 0;
            for (int c = 1; c < ar.cfg.vocab_size; ++c)
                if (row.at(c) > row.at(best)) best = c;
            if (best == tok) ++hits;
            ++total;
            prev = tok;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace whisfusion
