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

#include "whisfusion/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

namespace whisfusion {

std::string normalize_text(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char raw : s) {
        const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\'') {
            if (pending_space && !out.empty()) out += ' ';
            pending_space = false;
            out += c;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = true;
        }
        // Everything else is stripped without leaving a separator.
    }
    return out;
}

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : s) {
        if (c == ' ') {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

namespace {

// Generic Levenshtein with traceback over any random-access token sequence.
template <class Seq>
EditCounts levenshtein(const Seq& hyp, const Seq& ref) {
    const int n = static_cast<int>(hyp.size());
    const int m = static_cast<int>(ref.size());
    std::vector<int> dp(static_cast<size_t>((n + 1) * (m + 1)));
    auto at = [&](int i, int j) -> int& { return dp[static_cast<size_t>(i * (m + 1) + j)]; };
    for (int i = 0; i <= n; ++i) at(i, 0) = i;
    for (int j = 0; j <= m; ++j) at(0, j) = j;
    for (int i = 1; i <= n; ++i)
        for (int j = 1; j <= m; ++j) {
            const int sub = at(i - 1, j - 1) + (hyp[static_cast<size_t>(i - 1)] ==
                                                        ref[static_cast<size_t>(j - 1)]
                                                    ? 0
                                                    : 1);
            at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
        }
    EditCounts ec;
    ec.distance = at(n, m);
    int i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 &&
            at(i, j) == at(i - 1, j - 1) +
                            (hyp[static_cast<size_t>(i - 1)] == ref[static_cast<size_t>(j - 1)]
                                 ? 0
                                 : 1)) {
            if (hyp[static_cast<size_t>(i - 1)] != ref[static_cast<size_t>(j - 1)]) ec.subs++;
            --i;
            --j;
        } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
            ec.ins++;  // extra token in hyp
            --i;
        } else {
            ec.dels++;  // token missing from hyp
            --j;
        }
    }
    return ec;
}

}  // namespace

EditCounts edit_counts(const std::vector<std::string>& hyp,
                       const std::vector<std::string>& ref) {
    return levenshtein(hyp, ref);
}

EditCounts edit_counts_chars(const std::string& hyp, const std::string& ref) {
    return levenshtein(hyp, ref);
}

double wer(const std::string& hyp, const std::string& ref) {
    const std::string r = normalize_text(ref);
    if (r.empty()) throw MetricError("wer: empty reference after normalization");
    const auto rw = split_words(r);
    const auto hw = split_words(normalize_text(hyp));
    return static_cast<double>(edit_counts(hw, rw).distance) /
           static_cast<double>(rw.size());
}

double cer(const std::string& hyp, const std::string& ref) {
    const std::string r = normalize_text(ref);
    if (r.empty()) throw MetricError("cer: empty reference after normalization");
    const std::string h = normalize_text(hyp);
    return static_cast<double>(edit_counts_chars(h, r).distance) /
           static_cast<double>(r.size());
}

PooledScores pool_scores(const std::vector<UttScore>& rows) {
    if (rows.empty()) throw MetricError("pool_scores: no rows");
    PooledScores p;
    p.n_utts = static_cast<int>(rows.size());
    int64_t word_edits = 0, char_edits = 0, ref_words = 0, ref_chars = 0;
    for (const auto& r : rows) {
        word_edits += r.word_edits;
        char_edits += r.char_edits;
        ref_words += r.ref_words;
        ref_chars += r.ref_chars;
        p.mean_wer += r.wer;
        p.mean_cer += r.cer;
    }
    if (ref_words == 0 || ref_chars == 0)
        throw MetricError("pool_scores: zero reference mass");
    p.pooled_wer = static_cast<double>(word_edits) / static_cast<double>(ref_words);
    p.pooled_cer = static_cast<double>(char_edits) / static_cast<double>(ref_chars);
    p.mean_wer /= static_cast<double>(rows.size());
    p.mean_cer /= static_cast<double>(rows.size());
    return p;
}

SelectionStats selection_stats(const std::vector<UttScore>& rows) {
    SelectionStats s;
    for (const auto& r : rows) {
        if (r.selected < 0 || r.oracle < 0) continue;
        ++s.n;
        // Correct when the selected candidate matches the oracle's WER, not
        // only its index (distinct candidates can tie exactly).
        if (r.selected == r.oracle || r.selected_wer <= r.oracle_wer) s.accuracy += 1;
        const double gap = r.selected_wer - r.oracle_wer;
        s.mean_gap += gap;
        if (gap <= 0.02) s.within_2pct += 1;
    }
    if (s.n == 0) throw MetricError("selection_stats: no candidate rows");
    s.accuracy /= s.n;
    s.mean_gap /= s.n;
    s.within_2pct /= s.n;
    return s;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ArgumentError("pearson: size mismatch");
    if (x.size() < 3) throw ArgumentError("pearson: need at least 3 points");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) throw ArgumentError("pearson: constant input");
    return sxy / std::sqrt(sxx * syy);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ArgumentError("spearman: size mismatch");
    if (x.size() < 3) throw ArgumentError("spearman: need at least 3 points");
    return pearson(average_ranks(x), average_ranks(y));
}

LengthStats length_stats(const std::vector<UttScore>& rows) {
    if (rows.size() < 3) throw ArgumentError("length_stats: need at least 3 rows");
    LengthStats ls;
    std::vector<double> ref_len, hyp_len;
    ls.wer_by_dlen_bin.assign(4, 0.0);
    ls.bin_counts.assign(4, 0);
    for (const auto& r : rows) {
        ref_len.push_back(static_cast<double>(r.ref_len));
        hyp_len.push_back(static_cast<double>(r.hyp_len));
        const int dlen = std::abs(r.hyp_len - r.ref_len);
        ls.mean_abs_dlen += dlen;
        const int bin = dlen == 0 ? 0 : dlen <= 2 ? 1 : dlen <= 5 ? 2 : 3;
        ls.wer_by_dlen_bin[static_cast<size_t>(bin)] += r.wer;
        ls.bin_counts[static_cast<size_t>(bin)]++;
    }
    ls.mean_abs_dlen /= static_cast<double>(rows.size());
    try {
        ls.pearson_r = pearson(ref_len, hyp_len);
    } catch (const ArgumentError&) {
        // A degenerate decoder can emit constant lengths; the correlation is
        // undefined then, not an error in the aggregation.
        ls.pearson_r = std::numeric_limits<double>::quiet_NaN();
    }
    for (size_t b = 0; b < 4; ++b)
        if (ls.bin_counts[b] > 0) ls.wer_by_dlen_bin[b] /= ls.bin_counts[b];
    return ls;
}

}  // namespace whisfusion
