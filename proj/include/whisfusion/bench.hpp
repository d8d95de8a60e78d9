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

#include <string>
#include <vector>

#include "whisfusion/ar.hpp"
#include "whisfusion/data.hpp"
#include "whisfusion/infer.hpp"
#include "whisfusion/pdd.hpp"

namespace whisfusion {

// One timed decode of one utterance. dec_ms/enc_ms are minima over the
// repeat loop (the usual latency-microbenchmark convention); raw_total_ms is
// the first, cold pass.
struct TimingRecord {
    std::string engine;  // "pdd" or "ar"
    std::string utt_id;
    double audio_s = 0;
    double enc_ms = 0;    // encode + context preparation
    double dec_ms = 0;    // decoding loop only
    double total_ms = 0;  // enc_ms + dec_ms
    double raw_total_ms = 0;
    int emitted_tokens = 0;
    uint64_t decoder_calls = 0;
    bool timer_warning = false;  // span too close to timer resolution
    std::string transcript;
};

// Smallest observable steady_clock increment, measured once.
double timer_resolution_ms();

TimingRecord time_pdd_decode(const InferenceEngine& engine, const Utterance& utt,
                             const FrameFeatures& feats, const PddConfig& cfg,
                             RngStream utt_stream, int repeats);

TimingRecord time_ar_decode(const ArEngine& ar, const InferenceEngine& encoder,
                            const Utterance& utt, const FrameFeatures& feats,
                            int repeats);

// Decode-time throughput and real-time factor. MeasurementError when the
// measured span is not positive.
double tokens_per_second(const TimingRecord& rec);
double rtf(const TimingRecord& rec);

// Records bucketed by audio length (quantile edges over the observed range).
struct BucketStat {
    double lo_s = 0;  // inclusive
    double hi_s = 0;  // exclusive (last bucket inclusive)
    int count = 0;
    double mean_audio_s = 0;
    double mean_dec_ms = 0;
    double mean_total_ms = 0;
    double mean_tokens_per_s = 0;
    double mean_rtf = 0;
};

// Quantile-bucketed latency curve. ArgumentError when n_buckets < 3;
// MeasurementError when any bucket holds fewer than min_count records.
std::vector<BucketStat> scaling_curve(const std::vector<TimingRecord>& recs,
                                      int n_buckets = 3, int min_count = 10);

std::string records_to_csv(const std::vector<TimingRecord>& recs);
std::string curve_to_csv(const std::vector<BucketStat>& buckets);

}  // namespace whisfusion
