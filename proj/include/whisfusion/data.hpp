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

#include <map>
#include <string>
#include <vector>

#include "whisfusion/model.hpp"
#include "whisfusion/rng.hpp"
#include "whisfusion/tensor.hpp"

namespace whisfusion {

// ---------------------------------------------------------------------------
// Character tokenizer. 32 character slots (26 letters, space, apostrophe,
// 4 reserved) + mask + pad + eos = vocab of 35.

inline constexpr int kNumCharSlots = 32;
inline constexpr int kSpaceId = 26;
inline constexpr int kApostropheId = 27;
inline constexpr double kFrameSeconds = 0.01;  // nominal 10 ms per frame

// -1 when the character has no slot.
int char_to_id(char c);
char id_to_char(int id);  // '\0' for non-character ids

// Full-length canvas: characters, then eos, then pad up to max_len.
// Throws CapacityError when the transcript needs more than max_len - 1 slots
// and ArgumentError on unknown characters.
std::vector<int> tokenize(const std::string& transcript, int max_len,
                          const ModelConfig& cfg);

// Characters before the first eos; pads and non-character ids are dropped.
std::string detokenize(const std::vector<int>& ids, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Synthetic speech-like features: per character a codebook vector repeated
// for a jittered number of frames, plus white noise.

struct SynthSpec {
    int frames_per_char_min = 2;
    int frames_per_char_max = 4;
    int d_feat = 32;
    double noise_sigma = 0.5;
    uint64_t codebook_seed = 7;

    void validate() const;
    uint64_t hash() const;
};

struct FrameFeatures {
    Tensor frames;                 // [n_frames, d_feat]
    std::vector<int> char_labels;  // source char slot per frame
};

// Deterministic in (transcript, spec, stream). Throws CapacityError when the
// frame budget would exceed max_frames.
FrameFeatures synth_features(const std::string& transcript, const SynthSpec& spec,
                             RngStream stream, int max_frames);

// ---------------------------------------------------------------------------
// Corpus

struct Utterance {
    std::string id;
    std::string transcript;
    std::string split;      // train / dev / test
    int n_frames = 0;
    uint64_t feature_seed = 0;

    double audio_seconds() const { return n_frames * kFrameSeconds; }
};

struct Corpus {
    std::vector<Utterance> utts;
    SynthSpec spec;

    std::vector<const Utterance*> split(const std::string& name) const;
};

struct GenConfig {
    int n_utts = 2000;
    int len_min = 20;          // transcript characters
    int len_max = 60;
    double dev_frac = 0.10;
    double test_frac = 0.10;
    int source_words = 30000;  // word-salad source text length

    void validate() const;
};

// Word-salad source text from the embedded word list.
std::string build_source_text(int n_words, RngStream stream);

// Cuts contiguous word spans out of disjoint source-text regions (one region
// per split) and rejects any span that appears verbatim in another split's
// region, so split leakage is impossible by construction.
Corpus gen_corpus(const GenConfig& gen, const SynthSpec& spec, const ModelConfig& cfg,
                  RngStream stream);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path, const SynthSpec& expected_spec);

// Regenerate features for one utterance.
FrameFeatures features_for(const Utterance& u, const SynthSpec& spec, int max_frames);

struct CorpusStats {
    std::map<std::string, int> split_sizes;
    double len_p10 = 0, len_p50 = 0, len_p90 = 0;   // transcript chars
    double dur_p10 = 0, dur_p50 = 0, dur_p90 = 0;   // nominal seconds
    std::vector<int> duration_histogram;            // 0.5 s bins
    int leaked_spans = 0;                           // cross-split substring hits
};

CorpusStats corpus_stats(const Corpus& corpus);
std::string stats_to_text(const CorpusStats& s);
std::string stats_to_json(const CorpusStats& s);

}  // namespace whisfusion
