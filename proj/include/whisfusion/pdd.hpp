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

#include <optional>
#include <string>
#include <vector>

#include "whisfusion/infer.hpp"
#include "whisfusion/rng.hpp"

namespace whisfusion {

// Batch-parallel diffusion decoding: one generation pass on a fully masked
// canvas fans out k stochastic candidates; each refinement step re-masks the
// schedule's fraction of every candidate and re-predicts with argmax; the
// candidate with the highest mean confidence wins.
struct PddConfig {
    int k = 15;
    std::vector<double> schedule = {1.0, 0.9, 0.85, 0.8};  // re-mask fraction per step
    double temperature = 0.7;  // 0 = argmax generation (the low-temperature limit)
    Conditioning conditioning = Conditioning::kOn;

    int n_steps() const { return static_cast<int>(schedule.size()); }
    void validate() const;
};

struct Candidate {
    std::vector<int> canvas;
    std::vector<float> probs;  // model probability of each position's token
    double confidence = 0;     // mean prob over non-pad positions
};

struct StepTraceEntry {
    int step = 0;          // 1-based; step 1 is the generation step
    double rho = 0;        // re-mask fraction applied at this step
    double mean_confidence = 0;
    double mean_changed = 0;  // fraction of canvas positions that changed
    std::vector<double> per_candidate_wer;  // only when a reference is given
};

struct DecodeResult {
    std::string transcript;
    int selected = -1;
    double selected_confidence = 0;
    std::vector<Candidate> candidates;
    std::vector<StepTraceEntry> trace;
    uint64_t decoder_calls = 0;
};

// Mean model probability over non-pad positions (all positions when the
// canvas is entirely pad).
double candidate_confidence(const Candidate& c, const ModelConfig& cfg);

// Step 1 of the refinement loop: one decoder call on the fully masked canvas,
// then k tempered samples. ArgumentError on temperature <= 0; the argmax
// limit is reached through PddConfig::temperature == 0, which routes decoding
// through the same call with greedy sampling.
std::vector<Candidate> batch_generate(const InferenceEngine& engine,
                                      const CtxCache* ctx, const PddConfig& cfg,
                                      int k, double temperature, RngStream utt_stream);

// One refinement step over every candidate: re-mask `rho` of the canvas,
// one batched decoder call, argmax re-prediction at masked slots only.
void refine_step(const InferenceEngine& engine, const CtxCache* ctx,
                 const PddConfig& cfg, std::vector<Candidate>& cands, double rho,
                 int step_index, RngStream utt_stream);

// Highest mean confidence wins; ties resolve to the lowest index.
int select_candidate(const std::vector<Candidate>& cands);

DecodeResult decode_pdd(const InferenceEngine& engine, const CtxCache* ctx,
                        const PddConfig& cfg, RngStream utt_stream,
                        const std::string* reference = nullptr);

// k = 1 in the temperature -> 0 limit: deterministic single-sequence decode.
DecodeResult decode_single(const InferenceEngine& engine, const CtxCache* ctx,
                           const std::vector<double>& schedule, RngStream utt_stream,
                           Conditioning cond = Conditioning::kOn,
                           const std::string* reference = nullptr);

// Index and WER of the best candidate against the reference.
std::pair<int, double> oracle_candidate(const std::vector<Candidate>& cands,
                                        const ModelConfig& cfg,
                                        const std::string& reference);

}  // namespace whisfusion
