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

#include "whisfusion/common.hpp"

namespace whisfusion {

// Lowercase, keep alphanumerics + apostrophes + spaces, collapse whitespace,
// trim.
std::string normalize_text(const std::string& s);

struct EditCounts {
    int distance = 0;
    int subs = 0;
    int dels = 0;  // tokens present in ref but not hyp
    int ins = 0;   // tokens present in hyp but not ref
};

// Levenshtein between token sequences (hyp vs ref) with an operation
// breakdown from the traceback.
EditCounts edit_counts(const std::vector<std::string>& hyp,
                       const std::vector<std::string>& ref);
EditCounts edit_counts_chars(const std::string& hyp, const std::string& ref);

std::vector<std::string> split_words(const std::string& s);

// Both normalize internally; MetricError when the normalized ref is empty.
// Values may exceed 1 when the hypothesis is longer than the reference.
double wer(const std::string& hyp, const std::string& ref);
double cer(const std::string& hyp, const std::string& ref);

// ---------------------------------------------------------------------------
// Aggregates

struct UttScore {
    std::string id;
    double wer = 0, cer = 0;
    int ref_words = 0, ref_chars = 0;
    int word_edits = 0, char_edits = 0;
    // Candidate-selection info (diffusion decodes only; -1 when absent).
    double confidence = -1;
    int selected = -1;
    int oracle = -1;
    double oracle_wer = -1;
    double selected_wer = -1;
    int ref_len = 0, hyp_len = 0;  // transcript characters
};

struct PooledScores {
    double pooled_wer = 0, pooled_cer = 0;  // total edits / total ref tokens
    double mean_wer = 0, mean_cer = 0;      // unweighted per-utterance means
    int n_utts = 0;
};

PooledScores pool_scores(const std::vector<UttScore>& rows);

struct SelectionStats {
    double accuracy = 0;      // selected == oracle (WER ties count as correct)
    double mean_gap = 0;      // mean (selected WER - oracle WER)
    double within_2pct = 0;   // fraction with gap <= 0.02
    int n = 0;
};

SelectionStats selection_stats(const std::vector<UttScore>& rows);

// Spearman rank correlation with average ranks for ties. ArgumentError on
// size mismatch, fewer than 3 points, or a constant column.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct LengthStats {
    double pearson_r = 0;       // ref length vs hyp length (chars)
    double mean_abs_dlen = 0;   // mean |hyp_len - ref_len|
    // WER binned by |dlen|: [0], [1,2], [3,5], [6,+)
    std::vector<double> wer_by_dlen_bin;
    std::vector<int> bin_counts;
};

LengthStats length_stats(const std::vector<UttScore>& rows);

}  // namespace whisfusion
