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

#include "whisfusion/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace whisfusion {

namespace {

using nlohmann::json;

// Small everyday-English lexicon; enough variety that word salads do not
// repeat while keeping character statistics natural.
const char* kWordList[] = {
    "the",     "of",      "and",      "a",        "to",       "in",      "is",
    "you",     "that",    "it",       "he",       "was",      "for",     "on",
    "are",     "as",      "with",     "his",      "they",     "at",      "be",
    "this",    "have",    "from",     "or",       "one",      "had",     "by",
    "word",    "but",     "not",      "what",     "all",      "were",    "we",
    "when",    "your",    "can",      "said",     "there",    "use",     "an",
    "each",    "which",   "she",      "do",       "how",      "their",   "if",
    "will",    "up",      "other",    "about",    "out",      "many",    "then",
    "them",    "these",   "so",       "some",     "her",      "would",   "make",
    "like",    "him",     "into",     "time",     "has",      "look",    "two",
    "more",    "write",   "go",       "see",      "number",   "no",      "way",
    "could",   "people",  "my",       "than",     "first",    "water",   "been",
    "call",    "who",     "oil",      "its",      "now",      "find",    "long",
    "down",    "day",     "did",      "get",      "come",     "made",    "may",
    "part",    "over",    "new",      "sound",    "take",     "only",    "little",
    "work",    "know",    "place",    "year",     "live",     "me",      "back",
    "give",    "most",    "very",     "after",    "thing",    "our",     "just",
    "name",    "good",    "sentence", "man",      "think",    "say",     "great",
    "where",   "help",    "through",  "much",     "before",   "line",    "right",
    "too",     "mean",    "old",      "any",      "same",     "tell",    "boy",
    "follow",  "came",    "want",     "show",     "also",     "around",  "form",
    "three",   "small",   "set",      "put",      "end",      "does",    "another",
    "well",    "large",   "must",     "big",      "even",     "such",    "because",
    "turn",    "here",    "why",      "ask",      "went",     "men",     "read",
    "need",    "land",    "different","home",     "us",       "move",    "try",
    "kind",    "hand",    "picture",  "again",    "change",   "off",     "play",
    "spell",   "air",     "away",     "animal",   "house",    "point",   "page",
    "letter",  "mother",  "answer",   "found",    "study",    "still",   "learn",
    "should",  "america", "world",    "high",     "every",    "near",    "add",
    "food",    "between", "own",      "below",    "country",  "plant",   "last",
    "school",  "father",  "keep",     "tree",     "never",    "start",   "city",
    "earth",   "eye",     "light",    "thought",  "head",     "under",   "story",
    "saw",     "left",    "don't",    "few",      "while",    "along",   "might",
    "close",   "something","seem",    "next",     "hard",     "open",    "example",
    "begin",   "life",    "always",   "those",    "both",     "paper",   "together",
    "got",     "group",   "often",    "run",      "important","until",   "children",
    "side",    "feet",    "car",      "mile",     "night",    "walk",    "white",
    "sea",     "began",   "grow",     "took",     "river",    "four",    "carry",
    "state",   "once",    "book",     "hear",     "stop",     "without", "second",
    "later",   "miss",    "idea",     "enough",   "eat",      "face",    "watch",
    "far",     "indian",  "really",   "almost",   "let",      "above",   "girl",
    "sometimes","mountain","cut",     "young",    "talk",     "soon",    "list",
    "song",    "being",   "leave",    "family",   "it's",     "body",    "music",
    "color",   "stand",   "sun",      "question", "fish",     "area",    "mark",
    "dog",     "horse",   "bird",     "problem",  "complete", "room",    "knew",
    "since",   "ever",    "piece",    "told",     "usually",  "didn't",  "friend",
    "easy",    "heard",   "order",    "red",      "door",     "sure",    "become",
    "top",     "ship",    "across",   "today",    "during",   "short",   "better",
    "best",    "however", "low",      "hour",     "happen",   "hundred", "five",
    "remember","step",    "early",    "hold",     "west",     "ground",  "interest",
    "reach",   "fast",    "verb",     "sing",     "listen",   "six",     "table",
    "travel",  "less",    "morning",  "ten",      "simple",   "several", "vowel",
    "toward",  "war",     "lay",      "against",  "pattern",  "slow",    "center",
    "love",    "person",  "money",    "serve",    "appear",   "road",    "map",
    "rain",    "rule",    "govern",   "pull",     "cold",     "notice",  "voice",
    "unit",    "power",   "town",     "fine",     "certain",  "fly",     "fall",
    "lead",    "cry",     "dark",     "machine",  "note",     "wait",    "plan",
    "figure",  "star",    "box",      "noun",     "field",    "rest",    "correct",
    "able",    "pound",   "done",     "beauty",   "drive",    "stood",   "contain",
    "front",   "teach",   "week",     "final",    "gave",     "green",   "oh",
    "quick",   "develop", "ocean",    "warm",     "free",     "minute",  "strong",
    "special", "mind",    "behind",   "clear",    "tail",     "produce", "fact",
    "street",  "inch",    "multiply", "nothing",  "course",   "stay",    "wheel",
    "full",    "force",   "blue",     "object",   "decide",   "surface", "deep",
    "moon",    "island",  "foot",     "system",   "busy",     "test",    "record",
    "boat",    "common",  "gold",     "possible", "plane",    "stead",   "dry",
    "wonder",  "laugh",   "thousand", "ago",      "ran",      "check",   "game",
    "shape",   "equate",  "hot",      "brought",  "heat",     "snow",    "tire",
    "bring",   "yes",     "distant",  "fill",     "east",     "paint",   "language",
    "among",
};

constexpr int kWordCount = static_cast<int>(sizeof(kWordList) / sizeof(kWordList[0]));

std::string join_words(const std::vector<std::string>& words, size_t begin, size_t end) {
    std::string s;
    for (size_t i = begin; i < end; ++i) {
        if (i > begin) s += ' ';
        s += words[i];
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tokenizer

int char_to_id(char c) {
    if (c >= 'a' && c <= 'z') return c - 'a';
    if (c == ' ') return kSpaceId;
    if (c == '\'') return kApostropheId;
    return -1;
}

char id_to_char(int id) {
    if (id >= 0 && id < 26) return static_cast<char>('a' + id);
    if (id == kSpaceId) return ' ';
    if (id == kApostropheId) return '\'';
    return '\0';
}

std::vector<int> tokenize(const std::string& transcript, int max_len,
                          const ModelConfig& cfg) {
    if (static_cast<int>(transcript.size()) + 1 > max_len)
        throw CapacityError("tokenize: transcript too long for canvas");
    std::vector<int> ids;
    ids.reserve(static_cast<size_t>(max_len));
    for (char c : transcript) {
        const int id = char_to_id(c);
        if (id < 0)
            throw ArgumentError(std::string("tokenize: unknown character '") + c + "'");
        ids.push_back(id);
    }
    ids.push_back(cfg.eos_id);
    while (static_cast<int>(ids.size()) < max_len) ids.push_back(cfg.pad_id);
    return ids;
}

std::string detokenize(const std::vector<int>& ids, const ModelConfig& cfg) {
    std::string s;
    for (int id : ids) {
        if (id == cfg.eos_id) break;
        if (id == cfg.pad_id || id == cfg.mask_id) continue;
        const char c = id_to_char(id);
        if (c != '\0') s += c;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Features

void SynthSpec::validate() const {
    if (frames_per_char_min < 1 || frames_per_char_max < frames_per_char_min)
        throw ArgumentError("synth spec: bad frames_per_char range");
    if (d_feat < 1) throw ArgumentError("synth spec: d_feat must be positive");
    if (noise_sigma < 0) throw ArgumentError("synth spec: negative noise_sigma");
}

uint64_t SynthSpec::hash() const {
    std::ostringstream s;
    s << frames_per_char_min << "|" << frames_per_char_max << "|" << d_feat << "|"
      << noise_sigma << "|" << codebook_seed;
    return fnv1a64(s.str());
}

namespace {

Tensor char_codebook(const SynthSpec& spec) {
    RngStream s(spec.codebook_seed);
    Tensor cb = Tensor::zeros({kNumCharSlots, spec.d_feat});
    for (auto& v : cb.data) v = static_cast<float>(s.normal());
    return cb;
}

}  // namespace

FrameFeatures synth_features(const std::string& transcript, const SynthSpec& spec,
                             RngStream stream, int max_frames) {
    spec.validate();
    if (transcript.empty()) throw ArgumentError("synth_features: empty transcript");
    const Tensor cb = char_codebook(spec);

    RngStream jitter = stream.child("jitter");
    RngStream noise = stream.child("noise");

    std::vector<int> labels;
    for (char c : transcript) {
        const int id = char_to_id(c);
        if (id < 0)
            throw ArgumentError("synth_features: unknown character in transcript");
        const int span = spec.frames_per_char_min +
                         static_cast<int>(jitter.below(static_cast<uint32_t>(
                             spec.frames_per_char_max - spec.frames_per_char_min + 1)));
        for (int f = 0; f < span; ++f) labels.push_back(id);
    }
    const int n = static_cast<int>(labels.size());
    if (n > max_frames)
        throw CapacityError("synth_features: frame budget exceeded");

    FrameFeatures out;
    out.char_labels = labels;
    out.frames = Tensor::zeros({n, spec.d_feat});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < spec.d_feat; ++c)
            out.frames.at(r, c) =
                cb.at(labels[static_cast<size_t>(r)], c) +
                static_cast<float>(noise.normal() * spec.noise_sigma);
    return out;
}

FrameFeatures features_for(const Utterance& u, const SynthSpec& spec, int max_frames) {
    FrameFeatures f = synth_features(u.transcript, spec, RngStream(u.feature_seed),
                                     max_frames);
    if (f.frames.dim(0) != u.n_frames)
        throw ContractError("features_for: regenerated frame count mismatch for " + u.id);
    return f;
}

// ---------------------------------------------------------------------------
// Corpus generation

void GenConfig::validate() const {
    if (n_utts < 10) throw ArgumentError("gen: need at least 10 utterances");
    if (len_min < 1 || len_max < len_min)
        throw ArgumentError("gen: bad transcript length range");
    if (dev_frac < 0 || test_frac < 0 || dev_frac + test_frac >= 1.0)
        throw ArgumentError("gen: bad split fractions");
    if (source_words < 100) throw ArgumentError("gen: source text too small");
}

std::string build_source_text(int n_words, RngStream stream) {
    if (n_words < 1) throw ArgumentError("build_source_text: n_words must be positive");
    std::string text;
    for (int i = 0; i < n_words; ++i) {
        if (i) text += ' ';
        text += kWordList[stream.below(kWordCount)];
    }
    return text;
}

std::vector<const Utterance*> Corpus::split(const std::string& name) const {
    std::vector<const Utterance*> out;
    for (const auto& u : utts)
        if (u.split == name) out.push_back(&u);
    return out;
}

Corpus gen_corpus(const GenConfig& gen, const SynthSpec& spec, const ModelConfig& cfg,
                  RngStream stream) {
    gen.validate();
    spec.validate();
    if (gen.len_max + 1 > cfg.max_canvas_len)
        throw ArgumentError("gen: len_max does not fit the canvas with eos");
    if (gen.len_max * spec.frames_per_char_max > cfg.max_frames)
        throw ArgumentError("gen: frame budget cannot hold len_max characters");

    const std::string source = build_source_text(gen.source_words, stream.child("source"));
    std::vector<std::string> words;
    {
        std::istringstream is(source);
        std::string w;
        while (is >> w) words.push_back(w);
    }

    const int n_test = static_cast<int>(std::lround(gen.test_frac * gen.n_utts));
    const int n_dev = static_cast<int>(std::lround(gen.dev_frac * gen.n_utts));
    const int n_train = gen.n_utts - n_dev - n_test;

    // Disjoint word regions sized proportionally to the split sizes.
    const size_t total = words.size();
    const size_t train_end = total * static_cast<size_t>(n_train) / static_cast<size_t>(gen.n_utts);
    const size_t dev_end = train_end + (total - train_end) * static_cast<size_t>(n_dev) /
                                           static_cast<size_t>(n_dev + n_test);
    struct Region {
        std::string name;
        size_t begin, end;
        int target;
        std::string text;
    };
    std::vector<Region> regions = {
        {"train", 0, train_end, n_train, join_words(words, 0, train_end)},
        {"dev", train_end, dev_end, n_dev, join_words(words, train_end, dev_end)},
        {"test", dev_end, total, n_test, join_words(words, dev_end, total)},
    };

    Corpus corpus;
    corpus.spec = spec;
    RngStream pick = stream.child("spans");
    RngStream seeds = stream.child("features");
    int utt_index = 0;
    for (auto& region : regions) {
        const size_t n_region_words = region.end - region.begin;
        if (n_region_words < 16)
            throw ArgumentError("gen: source region too small for split " + region.name);
        int made = 0;
        int attempts = 0;
        while (made < region.target) {
            if (++attempts > region.target * 1000)
                throw ContractError("gen: cannot cut enough spans for " + region.name);
            const size_t start =
                region.begin + pick.below(static_cast<uint32_t>(n_region_words));
            // Per-utterance length target keeps the corpus spread over the
            // whole [len_min, len_max] range instead of packing every span
            // to the cap.
            const int target_len =
                gen.len_min +
                static_cast<int>(pick.below(static_cast<uint32_t>(gen.len_max - gen.len_min + 1)));
            std::string span;
            size_t w = start;
            while (w < region.end) {
                const std::string& next = words[w];
                const size_t extended = span.empty() ? next.size() : span.size() + 1 + next.size();
                if (static_cast<int>(extended) > gen.len_max) break;
                if (span.empty())
                    span = next;
                else
                    span += ' ' + next;
                ++w;
                if (static_cast<int>(span.size()) >= target_len) break;
            }
            if (static_cast<int>(span.size()) < gen.len_min) continue;
            // Reject any span visible in another split's region.
            bool leaked = false;
            for (const auto& other : regions)
                if (other.name != region.name &&
                    other.text.find(span) != std::string::npos) {
                    leaked = true;
                    break;
                }
            if (leaked) continue;

            Utterance u;
            char idbuf[16];
            std::snprintf(idbuf, sizeof(idbuf), "utt%05d", utt_index);
            u.id = idbuf;
            u.transcript = span;
            u.split = region.name;
            u.feature_seed = seeds.child(static_cast<uint64_t>(utt_index)).key();
            const FrameFeatures f =
                synth_features(span, spec, RngStream(u.feature_seed), cfg.max_frames);
            u.n_frames = f.frames.dim(0);
            corpus.utts.push_back(std::move(u));
            ++made;
            ++utt_index;
        }
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Corpus I/O

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("save_corpus: cannot write " + path);
    const std::string spec_hash = hex64(corpus.spec.hash());
    for (const auto& u : corpus.utts) {
        json j{{"id", u.id},
               {"transcript", u.transcript},
               {"split", u.split},
               {"n_frames", u.n_frames},
               {"feature_seed", u.feature_seed},
               {"spec_hash", spec_hash}};
        f << j.dump() << "\n";
    }
}

Corpus load_corpus(const std::string& path, const SynthSpec& expected_spec) {
    std::ifstream f(path);
    if (!f) throw DependencyError("load_corpus: missing corpus file " + path);
    Corpus corpus;
    corpus.spec = expected_spec;
    const std::string want_hash = hex64(expected_spec.hash());
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError("load_corpus: bad json at line " + std::to_string(line_no) +
                              ": " + e.what());
        }
        for (const char* key : {"id", "transcript", "split", "n_frames", "feature_seed",
                                "spec_hash"})
            if (!j.contains(key))
                throw SchemaError(std::string("load_corpus: missing field ") + key);
        if (j["spec_hash"].get<std::string>() != want_hash)
            throw SchemaError("load_corpus: corpus was generated with a different spec");
        Utterance u;
        u.id = j["id"].get<std::string>();
        u.transcript = j["transcript"].get<std::string>();
        u.split = j["split"].get<std::string>();
        u.n_frames = j["n_frames"].get<int>();
        u.feature_seed = j["feature_seed"].get<uint64_t>();
        corpus.utts.push_back(std::move(u));
    }
    if (corpus.utts.empty()) throw SchemaError("load_corpus: empty corpus " + path);
    return corpus;
}

// ---------------------------------------------------------------------------
// Stats

namespace {

double percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    if (v.empty()) return 0;
    const double idx = p * (static_cast<double>(v.size()) - 1);
    const size_t lo = static_cast<size_t>(idx);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return v[lo] * (1 - frac) + v[hi] * frac;
}

}  // namespace

CorpusStats corpus_stats(const Corpus& corpus) {
    CorpusStats s;
    std::vector<double> lens, durs;
    double max_dur = 0;
    for (const auto& u : corpus.utts) {
        s.split_sizes[u.split]++;
        lens.push_back(static_cast<double>(u.transcript.size()));
        durs.push_back(u.audio_seconds());
        max_dur = std::max(max_dur, u.audio_seconds());
    }
    s.len_p10 = percentile(lens, 0.10);
    s.len_p50 = percentile(lens, 0.50);
    s.len_p90 = percentile(lens, 0.90);
    s.dur_p10 = percentile(durs, 0.10);
    s.dur_p50 = percentile(durs, 0.50);
    s.dur_p90 = percentile(durs, 0.90);
    s.duration_histogram.assign(static_cast<size_t>(max_dur / 0.5) + 1, 0);
    for (double d : durs) s.duration_histogram[static_cast<size_t>(d / 0.5)]++;

    // Leakage audit: every non-train transcript vs the train transcripts.
    std::string train_text;
    for (const auto& u : corpus.utts)
        if (u.split == "train") train_text += u.transcript + "\n";
    for (const auto& u : corpus.utts)
        if (u.split != "train" && train_text.find(u.transcript) != std::string::npos)
            s.leaked_spans++;
    return s;
}

std::string stats_to_text(const CorpusStats& s) {
    std::ostringstream o;
    o << "split sizes:";
    for (const auto& [k, v] : s.split_sizes) o << " " << k << "=" << v;
    o << "\ntranscript chars p10/p50/p90: " << s.len_p10 << " / " << s.len_p50 << " / "
      << s.len_p90 << "\n";
    o << "nominal seconds p10/p50/p90: " << s.dur_p10 << " / " << s.dur_p50 << " / "
      << s.dur_p90 << "\n";
    o << "duration histogram (0.5 s bins):";
    for (size_t i = 0; i < s.duration_histogram.size(); ++i)
        o << " [" << 0.5 * static_cast<double>(i) << "," << 0.5 * static_cast<double>(i + 1)
          << ")=" << s.duration_histogram[i];
    o << "\ncross-split leaked transcripts: " << s.leaked_spans << "\n";
    return o.str();
}

std::string stats_to_json(const CorpusStats& s) {
    json j{{"split_sizes", s.split_sizes},
           {"len_p10", s.len_p10},
           {"len_p50", s.len_p50},
           {"len_p90", s.len_p90},
           {"dur_p10", s.dur_p10},
           {"dur_p50", s.dur_p50},
           {"dur_p90", s.dur_p90},
           {"duration_histogram", s.duration_histogram},
           {"leaked_spans", s.leaked_spans}};
    return j.dump(2);
}

}  // namespace whisfusion
