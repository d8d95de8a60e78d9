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

#include "whisfusion/pdd.hpp"

#include <algorithm>
#include <cmath>

#include "whisfusion/data.hpp"
#include "whisfusion/diffusion.hpp"
#include "whisfusion/eval.hpp"

namespace whisfusion {

namespace {

// Model distribution over one logits row with the mask token suppressed.
// Writes untempered probabilities into `probs` (size vocab).
void row_softmax_no_mask(const float* logits, int vocab, int mask_id, double* probs) {
    double mx = -1e30;
    for (int c = 0; c < vocab; ++c)
        if (c != mask_id && logits[c] > mx) mx = logits[c];
    double sum = 0;
    for (int c = 0; c < vocab; ++c) {
        probs[c] = c == mask_id ? 0.0 : std::exp(static_cast<double>(logits[c]) - mx);
        sum += probs[c];
    }
    for (int c = 0; c < vocab; ++c) probs[c] /= sum;
}

int row_argmax_no_mask(const float* logits, int vocab, int mask_id) {
    int best = mask_id == 0 ? 1 : 0;
    for (int c = 0; c < vocab; ++c)
        if (c != mask_id && logits[c] > logits[best]) best = c;
    return best;
}

// Temperature sample over a logits row (mask suppressed); returns the token
// and stores the untempered model probability of that token.
int sample_row(const float* logits, int vocab, int mask_id, double temperature,
               RngStream& stream, float* model_prob) {
    double mx = -1e30;
    for (int c = 0; c < vocab; ++c)
        if (c != mask_id && logits[c] > mx) mx = logits[c];
    std::vector<double> w(static_cast<size_t>(vocab));
    double sum = 0;
    for (int c = 0; c < vocab; ++c) {
        w[static_cast<size_t>(c)] =
            c == mask_id
                ? 0.0
                : std::exp((static_cast<double>(logits[c]) - mx) / temperature);
        sum += w[static_cast<size_t>(c)];
    }
    const double u = stream.next_double() * sum;
    double acc = 0;
    int tok = -1;
    for (int c = 0; c < vocab; ++c) {
        acc += w[static_cast<size_t>(c)];
        if (u < acc) {
            tok = c;
            break;
        }
    }
    if (tok < 0) tok = row_argmax_no_mask(logits, vocab, mask_id);

    std::vector<double> p(static_cast<size_t>(vocab));
    row_softmax_no_mask(logits, vocab, mask_id, p.data());
    *model_prob = static_cast<float>(p[static_cast<size_t>(tok)]);
    return tok;
}

RngStream candidate_stream(const RngStream& utt_stream, int candidate) {
    return utt_stream.child("cand").child(static_cast<uint64_t>(candidate));
}

}  // namespace

void PddConfig::validate() const {
    if (k < 1) throw ArgumentError("pdd: k must be >= 1");
    if (schedule.empty()) throw ArgumentError("pdd: schedule must not be empty");
    if (schedule[0] != 1.0)
        throw ArgumentError("pdd: schedule must start at 1.0 (full generation)");
    for (double rho : schedule)
        if (!(rho > 0.0) || rho > 1.0)
            throw ArgumentError("pdd: every schedule fraction must be in (0, 1]");
    if (temperature < 0) throw ArgumentError("pdd: negative temperature");
}

double candidate_confidence(const Candidate& c, const ModelConfig& cfg) {
    double sum = 0;
    int n = 0;
    for (size_t i = 0; i < c.canvas.size(); ++i) {
        if (c.canvas[i] == cfg.pad_id) continue;
        sum += c.probs[i];
        ++n;
    }
    if (n == 0) {
        for (float p : c.probs) sum += p;
        n = static_cast<int>(c.probs.size());
    }
    return n > 0 ? sum / n : 0.0;
}

std::vector<Candidate> batch_generate(const InferenceEngine& engine,
                                      const CtxCache* ctx, const PddConfig& cfg,
                                      int k, double temperature, RngStream utt_stream) {
    if (k < 1) throw ArgumentError("batch_generate: k must be >= 1");
    if (temperature <= 0)
        throw ArgumentError("batch_generate: temperature must be positive");
    const auto& mc = engine.model().cfg;
    const std::vector<int> masked(static_cast<size_t>(mc.max_canvas_len), mc.mask_id);
    const auto logits = engine.decoder_call({masked}, ctx, cfg.conditioning);
    const Tensor& l = logits[0];

    std::vector<Candidate> cands(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) {
        RngStream cs = candidate_stream(utt_stream, c).child(static_cast<uint64_t>(1));
        Candidate& cand = cands[static_cast<size_t>(c)];
        cand.canvas.resize(static_cast<size_t>(mc.max_canvas_len));
        cand.probs.resize(static_cast<size_t>(mc.max_canvas_len));
        for (int i = 0; i < mc.max_canvas_len; ++i) {
            float prob;
            cand.canvas[static_cast<size_t>(i)] =
                sample_row(l.row_ptr(i), mc.vocab_size, mc.mask_id, temperature, cs,
                           &prob);
            cand.probs[static_cast<size_t>(i)] = prob;
        }
        cand.confidence = candidate_confidence(cand, mc);
    }
    return cands;
}

namespace {

// Argmax variant of the generation step, used in the temperature -> 0 limit.
std::vector<Candidate> batch_generate_argmax(const InferenceEngine& engine,
                                             const CtxCache* ctx, const PddConfig& cfg,
                                             int k) {
    const auto& mc = engine.model().cfg;
    const std::vector<int> masked(static_cast<size_t>(mc.max_canvas_len), mc.mask_id);
    const auto logits = engine.decoder_call({masked}, ctx, cfg.conditioning);
    const Tensor& l = logits[0];
    Candidate base;
    base.canvas.resize(static_cast<size_t>(mc.max_canvas_len));
    base.probs.resize(static_cast<size_t>(mc.max_canvas_len));
    std::vector<double> p(static_cast<size_t>(mc.vocab_size));
    for (int i = 0; i < mc.max_canvas_len; ++i) {
        const int tok = row_argmax_no_mask(l.row_ptr(i), mc.vocab_size, mc.mask_id);
        row_softmax_no_mask(l.row_ptr(i), mc.vocab_size, mc.mask_id, p.data());
        base.canvas[static_cast<size_t>(i)] = tok;
        base.probs[static_cast<size_t>(i)] = static_cast<float>(p[static_cast<size_t>(tok)]);
    }
    base.confidence = candidate_confidence(base, mc);
    return std::vector<Candidate>(static_cast<size_t>(k), base);
}

}  // namespace

void refine_step(const InferenceEngine& engine, const CtxCache* ctx,
                 const PddConfig& cfg, std::vector<Candidate>& cands, double rho,
                 int step_index, RngStream utt_stream) {
    const auto& mc = engine.model().cfg;
    std::vector<std::vector<int>> masked_canvases(cands.size());
    std::vector<std::vector<int>> masked_positions(cands.size());
    for (size_t c = 0; c < cands.size(); ++c) {
        RngStream cs = candidate_stream(utt_stream, static_cast<int>(c))
                           .child(static_cast<uint64_t>(step_index));
        const MaskedSequence m =
            corrupt_fraction(cands[c].canvas, rho, mc.mask_id, cs);
        masked_canvases[c] = m.canvas;
        masked_positions[c] = m.mask_positions;
    }
    const auto logits = engine.decoder_call(masked_canvases, ctx, cfg.conditioning);
    std::vector<double> p(static_cast<size_t>(mc.vocab_size));
    for (size_t c = 0; c < cands.size(); ++c) {
        for (int pos : masked_positions[c]) {
            const float* row = logits[c].row_ptr(pos);
            const int tok = row_argmax_no_mask(row, mc.vocab_size, mc.mask_id);
            row_softmax_no_mask(row, mc.vocab_size, mc.mask_id, p.data());
            cands[c].canvas[static_cast<size_t>(pos)] = tok;
            cands[c].probs[static_cast<size_t>(pos)] =
                static_cast<float>(p[static_cast<size_t>(tok)]);
        }
        cands[c].confidence = candidate_confidence(cands[c], mc);
    }
}

int select_candidate(const std::vector<Candidate>& cands) {
    if (cands.empty()) throw ArgumentError("select_candidate: no candidates");
    int best = 0;
    for (int i = 1; i < static_cast<int>(cands.size()); ++i)
        if (cands[static_cast<size_t>(i)].confidence >
            cands[static_cast<size_t>(best)].confidence)
            best = i;
    return best;
}

std::pair<int, double> oracle_candidate(const std::vector<Candidate>& cands,
                                        const ModelConfig& cfg,
                                        const std::string& reference) {
    if (cands.empty()) throw ArgumentError("oracle_candidate: no candidates");
    int best = 0;
    double best_wer = wer(detokenize(cands[0].canvas, cfg), reference);
    for (int i = 1; i < static_cast<int>(cands.size()); ++i) {
        const double w = wer(detokenize(cands[static_cast<size_t>(i)].canvas, cfg),
                             reference);
        if (w < best_wer) {
            best = i;
            best_wer = w;
        }
    }
    return {best, best_wer};
}

namespace {

StepTraceEntry trace_entry(const std::vector<Candidate>& cands,
                           const std::vector<std::vector<int>>& prev_canvases,
                           const ModelConfig& mc, int step, double rho,
                           const std::string* reference) {
    StepTraceEntry e;
    e.step = step;
    e.rho = rho;
    const double L = static_cast<double>(mc.max_canvas_len);
    for (size_t c = 0; c < cands.size(); ++c) {
        e.mean_confidence += cands[c].confidence;
        int changed = 0;
        if (!prev_canvases.empty()) {
            for (size_t i = 0; i < cands[c].canvas.size(); ++i)
                if (cands[c].canvas[i] != prev_canvases[c][i]) ++changed;
        } else {
            changed = mc.max_canvas_len;  // everything was mask before step 1
        }
        e.mean_changed += static_cast<double>(changed) / L;
        if (reference)
            e.per_candidate_wer.push_back(
                wer(detokenize(cands[c].canvas, mc), *reference));
    }
    e.mean_confidence /= static_cast<double>(cands.size());
    e.mean_changed /= static_cast<double>(cands.size());
    return e;
}

}  // namespace

DecodeResult decode_pdd(const InferenceEngine& engine, const CtxCache* ctx,
                        const PddConfig& cfg, RngStream utt_stream,
                        const std::string* reference) {
    cfg.validate();
    const auto& mc = engine.model().cfg;
    const uint64_t calls_before = engine.decoder_calls();

    DecodeResult out;
    std::vector<Candidate> cands =
        cfg.temperature == 0.0
            ? batch_generate_argmax(engine, ctx, cfg, cfg.k)
            : batch_generate(engine, ctx, cfg, cfg.k, cfg.temperature, utt_stream);
    out.trace.push_back(trace_entry(cands, {}, mc, 1, cfg.schedule[0], reference));

    for (int s = 1; s < cfg.n_steps(); ++s) {
        std::vector<std::vector<int>> prev(cands.size());
        for (size_t c = 0; c < cands.size(); ++c) prev[c] = cands[c].canvas;
        refine_step(engine, ctx, cfg, cands, cfg.schedule[static_cast<size_t>(s)], s + 1,
                    utt_stream);
        out.trace.push_back(trace_entry(cands, prev, mc, s + 1,
                                        cfg.schedule[static_cast<size_t>(s)], reference));
    }

    out.selected = select_candidate(cands);
    out.selected_confidence = cands[static_cast<size_t>(out.selected)].confidence;
    out.transcript = detokenize(cands[static_cast<size_t>(out.selected)].canvas, mc);
    out.candidates = std::move(cands);
    out.decoder_calls = engine.decoder_calls() - calls_before;
    return out;
}

DecodeResult decode_single(const InferenceEngine& engine, const CtxCache* ctx,
                           const std::vector<double>& schedule, RngStream utt_stream,
                           Conditioning cond, const std::string* reference) {
    PddConfig cfg;
    cfg.k = 1;
    cfg.schedule = schedule;
    cfg.temperature = 0.0;
    cfg.conditioning = cond;
    return decode_pdd(engine, ctx, cfg, utt_stream, reference);
}

}  // namespace whisfusion
