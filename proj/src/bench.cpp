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

#include "whisfusion/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace whisfusion {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

// Flags spans that are within two orders of magnitude of the tick size;
// below that, per-utterance numbers are mostly timer noise.
bool span_too_small(double span_ms) { return span_ms < 100.0 * timer_resolution_ms(); }

}  // namespace

double timer_resolution_ms() {
    static const double res = [] {
        double best = 1e9;
        for (int i = 0; i < 16; ++i) {
            const auto t0 = Clock::now();
            auto t1 = Clock::now();
            while (t1 == t0) t1 = Clock::now();
            best = std::min(best, ms_between(t0, t1));
        }
        return best;
    }();
    return res;
}

TimingRecord time_pdd_decode(const InferenceEngine& engine, const Utterance& utt,
                             const FrameFeatures& feats, const PddConfig& cfg,
                             RngStream utt_stream, int repeats) {
    if (repeats < 1) throw ArgumentError("bench: repeats must be >= 1");
    cfg.validate();

    TimingRecord rec;
    rec.engine = "pdd";
    rec.utt_id = utt.id;
    rec.audio_s = utt.audio_seconds();

    // Cold pass covers everything once (warms code and caches).
    const auto cold0 = Clock::now();
    CtxCache cache = engine.prepare_ctx(engine.encode(feats.frames));
    DecodeResult res = decode_pdd(engine, &cache, cfg, utt_stream);
    rec.raw_total_ms = ms_between(cold0, Clock::now());
    rec.decoder_calls = res.decoder_calls;
    rec.transcript = res.transcript;
    rec.emitted_tokens = static_cast<int>(res.transcript.size());

    double enc_best = 1e300, dec_best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto e0 = Clock::now();
        CtxCache c = engine.prepare_ctx(engine.encode(feats.frames));
        const auto e1 = Clock::now();
        const DecodeResult d = decode_pdd(engine, &c, cfg, utt_stream);
        const auto e2 = Clock::now();
        if (d.transcript != res.transcript)
            throw ContractError("bench: decode is not deterministic across repeats");
        enc_best = std::min(enc_best, ms_between(e0, e1));
        dec_best = std::min(dec_best, ms_between(e1, e2));
    }
    rec.enc_ms = enc_best;
    rec.dec_ms = dec_best;
    rec.total_ms = enc_best + dec_best;
    rec.timer_warning = span_too_small(dec_best);
    return rec;
}

TimingRecord time_ar_decode(const ArEngine& ar, const InferenceEngine& encoder,
                            const Utterance& utt, const FrameFeatures& feats,
                            int repeats) {
    if (repeats < 1) throw ArgumentError("bench: repeats must be >= 1");

    TimingRecord rec;
    rec.engine = "ar";
    rec.utt_id = utt.id;
    rec.audio_s = utt.audio_seconds();

    const int max_len = ar.model().cfg.max_canvas_len;
    const auto cold0 = Clock::now();
    ArCtxCache cache = ar.prepare_ctx(encoder.encode(feats.frames));
    ArGreedyResult res = ar.greedy_decode(cache, max_len);
    rec.raw_total_ms = ms_between(cold0, Clock::now());
    rec.decoder_calls = res.calls;
    rec.transcript = detokenize(res.tokens, ar.model().cfg);
    rec.emitted_tokens = static_cast<int>(res.tokens.size());

    double enc_best = 1e300, dec_best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto e0 = Clock::now();
        ArCtxCache c = ar.prepare_ctx(encoder.encode(feats.frames));
        const auto e1 = Clock::now();
        const ArGreedyResult d = ar.greedy_decode(c, max_len);
        const auto e2 = Clock::now();
        if (d.tokens != res.tokens)
            throw ContractError("bench: decode is not deterministic across repeats");
        enc_best = std::min(enc_best, ms_between(e0, e1));
        dec_best = std::min(dec_best, ms_between(e1, e2));
    }
    rec.enc_ms = enc_best;
    rec.dec_ms = dec_best;
    rec.total_ms = enc_best + dec_best;
    rec.timer_warning = span_too_small(dec_best);
    return rec;
}

double tokens_per_second(const TimingRecord& rec) {
    if (!(rec.dec_ms > 0)) throw MeasurementError("tokens/s: non-positive decode span");
    return static_cast<double>(rec.emitted_tokens) / (rec.dec_ms / 1000.0);
}

double rtf(const TimingRecord& rec) {
    if (!(rec.audio_s > 0)) throw MeasurementError("rtf: non-positive audio length");
    if (!(rec.total_ms > 0)) throw MeasurementError("rtf: non-positive span");
    return (rec.total_ms / 1000.0) / rec.audio_s;
}

std::vector<BucketStat> scaling_curve(const std::vector<TimingRecord>& recs, int n_buckets,
                                      int min_count) {
    if (n_buckets < 3) throw ArgumentError("scaling: need at least 3 buckets");
    if (min_count < 1) throw ArgumentError("scaling: min_count must be >= 1");
    if (recs.empty()) throw ArgumentError("scaling: no records");

    std::vector<double> lens;
    lens.reserve(recs.size());
    for (const auto& r : recs) lens.push_back(r.audio_s);
    std::sort(lens.begin(), lens.end());

    // Quantile edges over the observed audio lengths.
    std::vector<double> edges(static_cast<size_t>(n_buckets) + 1);
    edges.front() = lens.front();
    edges.back() = lens.back();
    for (int b = 1; b < n_buckets; ++b) {
        const double q = static_cast<double>(b) / n_buckets;
        const auto pos = static_cast<size_t>(q * static_cast<double>(lens.size() - 1));
        edges[static_cast<size_t>(b)] = lens[pos];
    }

    std::vector<BucketStat> buckets(static_cast<size_t>(n_buckets));
    std::vector<double> tps_sum(static_cast<size_t>(n_buckets), 0);
    std::vector<double> rtf_sum(static_cast<size_t>(n_buckets), 0);
    for (int b = 0; b < n_buckets; ++b) {
        buckets[static_cast<size_t>(b)].lo_s = edges[static_cast<size_t>(b)];
        buckets[static_cast<size_t>(b)].hi_s = edges[static_cast<size_t>(b) + 1];
    }
    for (const auto& r : recs) {
        int b = n_buckets - 1;
        for (int i = 0; i < n_buckets - 1; ++i) {
            if (r.audio_s < edges[static_cast<size_t>(i) + 1]) {
                b = i;
                break;
            }
        }
        auto& bucket = buckets[static_cast<size_t>(b)];
        bucket.count += 1;
        bucket.mean_audio_s += r.audio_s;
        bucket.mean_dec_ms += r.dec_ms;
        bucket.mean_total_ms += r.total_ms;
        tps_sum[static_cast<size_t>(b)] += tokens_per_second(r);
        rtf_sum[static_cast<size_t>(b)] += rtf(r);
    }
    for (int b = 0; b < n_buckets; ++b) {
        auto& bucket = buckets[static_cast<size_t>(b)];
        if (bucket.count < min_count)
            throw MeasurementError("scaling: bucket " + std::to_string(b) +
                                   " holds fewer than " + std::to_string(min_count) +
                                   " records");
        bucket.mean_audio_s /= bucket.count;
        bucket.mean_dec_ms /= bucket.count;
        bucket.mean_total_ms /= bucket.count;
        bucket.mean_tokens_per_s = tps_sum[static_cast<size_t>(b)] / bucket.count;
        bucket.mean_rtf = rtf_sum[static_cast<size_t>(b)] / bucket.count;
    }
    return buckets;
}

std::string records_to_csv(const std::vector<TimingRecord>& recs) {
    std::ostringstream s;
    s << "engine,utt_id,audio_s,enc_ms,dec_ms,total_ms,raw_total_ms,emitted_tokens,"
         "decoder_calls,tokens_per_s,rtf,timer_warning\n";
    for (const auto& r : recs) {
        s << r.engine << ',' << r.utt_id << ',' << r.audio_s << ',' << r.enc_ms << ','
          << r.dec_ms << ',' << r.total_ms << ',' << r.raw_total_ms << ','
          << r.emitted_tokens << ',' << r.decoder_calls << ',' << tokens_per_second(r)
          << ',' << rtf(r) << ',' << (r.timer_warning ? 1 : 0) << '\n';
    }
    return s.str();
}

std::string curve_to_csv(const std::vector<BucketStat>& buckets) {
    std::ostringstream s;
    s << "lo_s,hi_s,count,mean_audio_s,mean_dec_ms,mean_total_ms,mean_tokens_per_s,mean_rtf\n";
    for (const auto& b : buckets) {
        s << b.lo_s << ',' << b.hi_s << ',' << b.count << ',' << b.mean_audio_s << ','
          << b.mean_dec_ms << ',' << b.mean_total_ms << ',' << b.mean_tokens_per_s << ','
          << b.mean_rtf << '\n';
    }
    return s.str();
}

}  // namespace whisfusion
