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

#include "whisfusion/cli.hpp"

#include <unistd.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "whisfusion/bench.hpp"
#include "whisfusion/checkpoint.hpp"
#include "whisfusion/curriculum.hpp"
#include "whisfusion/eval.hpp"
#include "whisfusion/runconfig.hpp"
#include "whisfusion/threadpool.hpp"

namespace whisfusion {

namespace fs = std::filesystem;
using nlohmann::json;

DirLock::DirLock(const std::string& dir) {
    fs::create_directories(dir);
    path_ = (fs::path(dir) / ".lock").string();
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
        throw IoError("output directory is locked (" + path_ +
                      " exists); remove it if no other run is active");
    std::fprintf(f, "pid %ld\n", static_cast<long>(::getpid()));
    std::fclose(f);
}

DirLock::~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

namespace {

// Table of named remasking schedules by step count.
const std::map<int, std::vector<double>>& step_schedules() {
    static const std::map<int, std::vector<double>> m{
        {1, {1.0}},
        {2, {1.0, 0.85}},
        {3, {1.0, 0.9, 0.8}},
        {4, {1.0, 0.9, 0.85, 0.8}},
        {5, {1.0, 0.95, 0.9, 0.85, 0.8}},
        {6, {1.0, 0.96, 0.92, 0.88, 0.84, 0.8}},
    };
    return m;
}

void write_file(const std::string& path, const std::string& content) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

// Every command leaves the configuration it actually ran with next to its
// outputs.
void echo_config(const RunConfig& cfg, const std::string& dir) {
    write_file((fs::path(dir) / "config.effective.cfg").string(), cfg.serialize());
}

std::string ckpt_path(const std::string& out, const std::string& stage) {
    const std::string name = stage == "ar" ? "ar" : "stage" + stage;
    return (fs::path(out) / "ckpt" / (name + ".ckpt")).string();
}

Corpus load_corpus_checked(const RunConfig& cfg, const std::string& out) {
    const std::string path = (fs::path(out) / "corpus.jsonl").string();
    if (!fs::exists(path))
        throw DependencyError("corpus not found: " + path + " (run gen-data first)");
    return load_corpus(path, cfg.synth_spec());
}

void require_checkpoint(const std::string& path, const std::string& producer) {
    if (!checkpoint_exists(path))
        throw DependencyError("missing checkpoint " + path + " (run `" + producer +
                              "` first)");
}

void check_config_hash(const CheckpointManifest& m, const ModelConfig& cfg,
                       const std::string& path) {
    if (m.config_hash != hex64(cfg.hash()))
        throw SchemaError("checkpoint " + path + " was written under a different model config");
}

WhisfusionModel load_whisfusion(const RunConfig& cfg, const std::string& path) {
    const ModelConfig mc = cfg.model_config();
    WhisfusionModel model(mc, RngStream(static_cast<uint64_t>(cfg.geti("seed"))).child("init"));
    const auto manifest = load_checkpoint(model.params, path);
    check_config_hash(manifest, mc, path);
    return model;
}

ArModel load_ar(const RunConfig& cfg, const std::string& path) {
    const ModelConfig mc = cfg.model_config();
    ArModel model(mc, RngStream(static_cast<uint64_t>(cfg.geti("seed"))).child("init_ar"));
    const auto manifest = load_checkpoint(model.params, path);
    check_config_hash(manifest, mc, path);
    return model;
}

CheckpointManifest make_manifest(const RunConfig& cfg, const TrainLog& log) {
    CheckpointManifest m;
    m.config_hash = hex64(cfg.model_config().hash());
    m.meta["stage"] = log.stage;
    m.meta["best-epoch"] = std::to_string(log.best_epoch);
    m.meta["best-val-loss"] = std::to_string(log.best_val_loss);
    m.meta["optimizer-steps"] = std::to_string(log.optimizer_steps);
    m.meta["seed"] = cfg.gets("seed");
    m.meta["run-config-hash"] = hex64(cfg.hash());
    return m;
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const RunConfig& cfg, const std::string& out) {
    const auto seed = static_cast<uint64_t>(cfg.geti("seed"));
    const Corpus corpus =
        gen_corpus(cfg.gen_config(), cfg.synth_spec(), cfg.model_config(),
                   RngStream(seed).child("data"));
    save_corpus(corpus, (fs::path(out) / "corpus.jsonl").string());
    const CorpusStats stats = corpus_stats(corpus);
    write_file((fs::path(out) / "stats.txt").string(), stats_to_text(stats));
    write_file((fs::path(out) / "stats.json").string(), stats_to_json(stats));
    echo_config(cfg, out);
    std::cout << "gen-data: wrote " << corpus.utts.size() << " utterances to " << out
              << "/corpus.jsonl\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const RunConfig& cfg, const std::string& out, const std::string& stage) {
    const Corpus corpus = load_corpus_checked(cfg, out);
    const ModelConfig mc = cfg.model_config();
    const auto seed = static_cast<uint64_t>(cfg.geti("seed"));
    const StageConfig sc = cfg.stage_config(stage);
    auto rng = RngStream(seed).child("train").child(stage);

    TrainLog log;
    if (stage == "ar") {
        require_checkpoint(ckpt_path(out, "0e"), "train 0e");
        const WhisfusionModel enc = load_whisfusion(cfg, ckpt_path(out, "0e"));
        ArModel ar(mc, RngStream(seed).child("init_ar"));
        log = train_ar_stage(ar, enc, corpus, sc, rng);
        save_checkpoint(ar.params, ckpt_path(out, "ar"), make_manifest(cfg, log));
    } else {
        WhisfusionModel model(mc, RngStream(seed).child("init"));
        if (stage == "0d") {
            require_checkpoint(ckpt_path(out, "0e"), "train 0e");
            check_config_hash(load_checkpoint(model.params, ckpt_path(out, "0e")), mc,
                              ckpt_path(out, "0e"));
        } else if (stage == "1") {
            require_checkpoint(ckpt_path(out, "0d"), "train 0d");
            check_config_hash(load_checkpoint(model.params, ckpt_path(out, "0d")), mc,
                              ckpt_path(out, "0d"));
        } else if (stage == "2") {
            require_checkpoint(ckpt_path(out, "1"), "train 1");
            check_config_hash(load_checkpoint(model.params, ckpt_path(out, "1")), mc,
                              ckpt_path(out, "1"));
        } else if (stage != "0e") {
            throw ArgumentError("unknown training stage: " + stage);
        }
        if (stage == "0e")
            log = train_stage0_encoder(model, corpus, sc, rng);
        else if (stage == "0d")
            log = train_stage0_decoder(model, corpus, sc, rng);
        else if (stage == "1")
            log = train_stage1(model, corpus, sc, rng);
        else
            log = train_stage2(model, corpus, sc, rng);
        save_checkpoint(model.params, ckpt_path(out, stage), make_manifest(cfg, log));
    }

    write_file((fs::path(out) / "logs" / ("train_" + stage + ".jsonl")).string(),
               log.to_jsonl());
    echo_config(cfg, out);
    std::cout << "train " << stage << ": best epoch " << log.best_epoch << ", val loss "
              << log.best_val_loss << ", " << log.epochs.size() << " epochs, "
              << log.optimizer_steps << " steps\n";
    return 0;
}

// ---------------------------------------------------------------------------
// decode

struct DecodeRow {
    UttScore score;
    uint64_t decoder_calls = 0;
    std::string hyp;
    std::vector<StepTraceEntry> trace;
};

UttScore score_utterance(const std::string& id, const std::string& hyp,
                         const std::string& ref) {
    UttScore s;
    s.id = id;
    s.wer = wer(hyp, ref);
    s.cer = cer(hyp, ref);
    const std::string nref = normalize_text(ref);
    const std::string nhyp = normalize_text(hyp);
    const auto ref_words = split_words(nref);
    const auto hyp_words = split_words(nhyp);
    s.ref_words = static_cast<int>(ref_words.size());
    s.ref_chars = static_cast<int>(nref.size());
    s.word_edits = edit_counts(hyp_words, ref_words).distance;
    s.char_edits = edit_counts_chars(nhyp, nref).distance;
    s.ref_len = static_cast<int>(nref.size());
    s.hyp_len = static_cast<int>(nhyp.size());
    return s;
}

json report_json(const std::string& engine, const std::string& split,
                 const std::vector<DecodeRow>& rows, const PddConfig* pdd) {
    std::vector<UttScore> scores;
    scores.reserve(rows.size());
    for (const auto& r : rows) scores.push_back(r.score);
    const PooledScores pooled = pool_scores(scores);

    json rep{{"engine", engine},
             {"split", split},
             {"n_utts", pooled.n_utts},
             {"pooled_wer", pooled.pooled_wer},
             {"pooled_cer", pooled.pooled_cer},
             {"mean_wer", pooled.mean_wer},
             {"mean_cer", pooled.mean_cer}};

    if (pdd) {
        rep["k"] = pdd->k;
        rep["temperature"] = pdd->temperature;
        rep["schedule"] = pdd->schedule;
        rep["conditioning"] = pdd->conditioning == Conditioning::kOn ? "on" : "ablated";
    }

    // Confidence diagnostics when the decoder reported one.
    std::vector<double> conf, wer_col;
    for (const auto& r : rows) {
        if (r.score.confidence >= 0) {
            conf.push_back(r.score.confidence);
            wer_col.push_back(r.score.wer);
        }
    }
    if (conf.size() >= 3) {
        try {
            rep["spearman_confidence_wer"] = spearman(conf, wer_col);
        } catch (const ArgumentError&) {
            rep["spearman_confidence_wer"] = nullptr;  // constant column
        }
    }

    if (pdd && pdd->k > 1) {
        const SelectionStats sel = selection_stats(scores);
        rep["selection"] = {{"accuracy", sel.accuracy},
                            {"mean_gap", sel.mean_gap},
                            {"within_2pct", sel.within_2pct},
                            {"n", sel.n}};
        double oracle_sum = 0;
        for (const auto& s : scores) oracle_sum += s.oracle_wer;
        rep["mean_oracle_wer"] = oracle_sum / static_cast<double>(scores.size());
    }

    const LengthStats len = length_stats(scores);
    rep["length"] = {{"pearson_r", len.pearson_r},
                     {"mean_abs_dlen", len.mean_abs_dlen},
                     {"wer_by_dlen_bin", len.wer_by_dlen_bin},
                     {"bin_counts", len.bin_counts}};

    // Mean per-step trace across utterances.
    if (!rows.empty() && !rows.front().trace.empty()) {
        const size_t n_steps = rows.front().trace.size();
        std::vector<double> mean_conf(n_steps, 0), mean_changed(n_steps, 0), rho(n_steps, 0);
        for (const auto& r : rows) {
            for (size_t i = 0; i < n_steps && i < r.trace.size(); ++i) {
                mean_conf[i] += r.trace[i].mean_confidence;
                mean_changed[i] += r.trace[i].mean_changed;
                rho[i] = r.trace[i].rho;
            }
        }
        for (size_t i = 0; i < n_steps; ++i) {
            mean_conf[i] /= static_cast<double>(rows.size());
            mean_changed[i] /= static_cast<double>(rows.size());
        }
        rep["trace"] = {{"rho", rho},
                        {"mean_confidence", mean_conf},
                        {"mean_changed", mean_changed}};
    }
    return rep;
}

std::string report_summary(const json& rep) {
    std::ostringstream s;
    s << "engine: " << rep["engine"].get<std::string>() << "\n"
      << "split: " << rep["split"].get<std::string>() << "\n"
      << "utterances: " << rep["n_utts"].get<int>() << "\n"
      << "pooled WER: " << rep["pooled_wer"].get<double>() << "\n"
      << "pooled CER: " << rep["pooled_cer"].get<double>() << "\n"
      << "mean WER: " << rep["mean_wer"].get<double>() << "\n"
      << "mean CER: " << rep["mean_cer"].get<double>() << "\n";
    if (rep.contains("k")) s << "candidates k: " << rep["k"].get<int>() << "\n";
    if (rep.contains("mean_oracle_wer"))
        s << "mean oracle WER: " << rep["mean_oracle_wer"].get<double>() << "\n";
    if (rep.contains("selection"))
        s << "selection accuracy: " << rep["selection"]["accuracy"].get<double>() << "\n";
    if (rep.contains("spearman_confidence_wer") && !rep["spearman_confidence_wer"].is_null())
        s << "spearman(confidence, WER): "
          << rep["spearman_confidence_wer"].get<double>() << "\n";
    return s.str();
}

int cmd_decode(const RunConfig& cfg, const std::string& out, const std::string& engine,
               const std::string& split, int n_max, bool ablate_conditioning,
               std::string ckpt_override) {
    const Corpus corpus = load_corpus_checked(cfg, out);
    auto utts = corpus.split(split);
    if (utts.empty()) throw ArgumentError("decode: split '" + split + "' is empty");
    if (n_max > 0 && static_cast<int>(utts.size()) > n_max)
        utts.resize(static_cast<size_t>(n_max));
    const auto seed = static_cast<uint64_t>(cfg.geti("seed"));
    const ModelConfig mc = cfg.model_config();
    const std::string dir = (fs::path(out) / "decode" / engine).string();

    std::vector<DecodeRow> rows;
    rows.reserve(utts.size());
    std::ostringstream records;
    json rep;

    if (engine == "pdd" || engine == "single") {
        std::string path = ckpt_override.empty() ? ckpt_path(out, "2") : ckpt_override;
        require_checkpoint(path, "train 2");
        const WhisfusionModel model = load_whisfusion(cfg, path);
        const InferenceEngine eng(model);
        PddConfig pdd = cfg.pdd_config();
        if (engine == "single") {
            pdd.k = 1;
            pdd.temperature = 0;
        }
        if (ablate_conditioning) pdd.conditioning = Conditioning::kAblated;

        for (const Utterance* u : utts) {
            const auto feats = features_for(*u, corpus.spec, mc.max_frames);
            CtxCache cache;
            const CtxCache* cache_ptr = nullptr;
            if (pdd.conditioning == Conditioning::kOn) {
                cache = eng.prepare_ctx(eng.encode(feats.frames));
                cache_ptr = &cache;
            }
            auto stream = RngStream(seed).child("decode").child(u->id);
            const DecodeResult res =
                decode_pdd(eng, cache_ptr, pdd, stream, &u->transcript);

            DecodeRow row;
            row.score = score_utterance(u->id, res.transcript, u->transcript);
            row.score.confidence = res.selected_confidence;
            row.score.selected = res.selected;
            row.score.selected_wer = row.score.wer;
            const auto [oracle_idx, oracle_wer] =
                oracle_candidate(res.candidates, mc, u->transcript);
            row.score.oracle = oracle_idx;
            row.score.oracle_wer = oracle_wer;
            row.decoder_calls = res.decoder_calls;
            row.hyp = res.transcript;
            row.trace = res.trace;

            json line{{"id", u->id},
                      {"ref", u->transcript},
                      {"hyp", res.transcript},
                      {"wer", row.score.wer},
                      {"cer", row.score.cer},
                      {"confidence", res.selected_confidence},
                      {"selected", res.selected},
                      {"oracle", oracle_idx},
                      {"oracle_wer", oracle_wer},
                      {"decoder_calls", res.decoder_calls}};
            json steps = json::array();
            for (const auto& t : res.trace)
                steps.push_back({{"step", t.step},
                                 {"rho", t.rho},
                                 {"mean_confidence", t.mean_confidence},
                                 {"mean_changed", t.mean_changed}});
            line["trace"] = steps;
            records << line.dump() << "\n";
            rows.push_back(std::move(row));
        }
        rep = report_json(engine, split, rows, &pdd);
    } else if (engine == "ar") {
        std::string path = ckpt_override.empty() ? ckpt_path(out, "ar") : ckpt_override;
        require_checkpoint(path, "train ar");
        const ArModel model = load_ar(cfg, path);
        const WhisfusionModel enc_model = load_whisfusion(cfg, ckpt_path(out, "0e"));
        const InferenceEngine encoder(enc_model);
        const ArEngine eng(model);

        for (const Utterance* u : utts) {
            const auto feats = features_for(*u, corpus.spec, mc.max_frames);
            const ArCtxCache cache = eng.prepare_ctx(encoder.encode(feats.frames));
            const ArGreedyResult res = eng.greedy_decode(cache, mc.max_canvas_len);
            const std::string hyp = detokenize(res.tokens, mc);

            DecodeRow row;
            row.score = score_utterance(u->id, hyp, u->transcript);
            row.decoder_calls = res.calls;
            row.hyp = hyp;
            records << json{{"id", u->id},
                            {"ref", u->transcript},
                            {"hyp", hyp},
                            {"wer", row.score.wer},
                            {"cer", row.score.cer},
                            {"hit_eos", res.hit_eos},
                            {"decoder_calls", res.calls}}
                           .dump()
                    << "\n";
            rows.push_back(std::move(row));
        }
        rep = report_json(engine, split, rows, nullptr);
    } else {
        throw ArgumentError("unknown decode engine: " + engine);
    }

    write_file((fs::path(dir) / "records.jsonl").string(), records.str());
    write_file((fs::path(dir) / "report.json").string(), rep.dump(2) + "\n");
    write_file((fs::path(dir) / "summary.txt").string(), report_summary(rep));
    echo_config(cfg, dir);
    std::cout << report_summary(rep);
    return 0;
}

// ---------------------------------------------------------------------------
// bench

int cmd_bench(const RunConfig& cfg, const std::string& out) {
    const Corpus corpus = load_corpus_checked(cfg, out);
    auto utts = corpus.split("test");
    const int n = cfg.geti("bench.n_utts");
    if (n > 0 && static_cast<int>(utts.size()) > n) utts.resize(static_cast<size_t>(n));
    if (utts.empty()) throw ArgumentError("bench: empty test split");

    require_checkpoint(ckpt_path(out, "2"), "train 2");
    require_checkpoint(ckpt_path(out, "ar"), "train ar");
    const WhisfusionModel model = load_whisfusion(cfg, ckpt_path(out, "2"));
    const ArModel ar_model = load_ar(cfg, ckpt_path(out, "ar"));
    const WhisfusionModel enc_model = load_whisfusion(cfg, ckpt_path(out, "0e"));
    const InferenceEngine eng(model);
    const InferenceEngine encoder(enc_model);
    const ArEngine ar_eng(ar_model);

    const int repeats = cfg.geti("bench.repeats");
    const auto seed = static_cast<uint64_t>(cfg.geti("seed"));
    PddConfig pdd = cfg.pdd_config();
    pdd.k = cfg.geti("bench.pdd_k");

    std::vector<TimingRecord> pdd_recs, ar_recs;
    for (const Utterance* u : utts) {
        const auto feats = features_for(*u, corpus.spec, model.cfg.max_frames);
        auto stream = RngStream(seed).child("bench").child(u->id);
        pdd_recs.push_back(time_pdd_decode(eng, *u, feats, pdd, stream, repeats));
        ar_recs.push_back(time_ar_decode(ar_eng, encoder, *u, feats, repeats));
    }

    const int buckets = cfg.geti("bench.buckets");
    const int min_bucket = cfg.geti("bench.min_bucket");
    const auto pdd_curve = scaling_curve(pdd_recs, buckets, min_bucket);
    const auto ar_curve = scaling_curve(ar_recs, buckets, min_bucket);

    std::vector<TimingRecord> all = pdd_recs;
    all.insert(all.end(), ar_recs.begin(), ar_recs.end());
    const std::string dir = (fs::path(out) / "bench").string();
    write_file((fs::path(dir) / "records.csv").string(), records_to_csv(all));
    write_file((fs::path(dir) / "curve_pdd.csv").string(), curve_to_csv(pdd_curve));
    write_file((fs::path(dir) / "curve_ar.csv").string(), curve_to_csv(ar_curve));

    const double ratio = pdd_curve.back().mean_tokens_per_s / ar_curve.back().mean_tokens_per_s;
    int warnings = 0;
    for (const auto& r : all) warnings += r.timer_warning ? 1 : 0;
    std::ostringstream s;
    s << "utterances: " << utts.size() << "\n"
      << "repeats: " << repeats << "\n"
      << "pdd k: " << pdd.k << ", steps: " << pdd.schedule.size() << "\n"
      << "timer resolution (ms): " << timer_resolution_ms() << "\n"
      << "records with timer warnings: " << warnings << "\n"
      << "tokens/s ratio pdd/ar on longest bucket: " << ratio << "\n\npdd buckets:\n"
      << curve_to_csv(pdd_curve) << "\nar buckets:\n"
      << curve_to_csv(ar_curve);
    write_file((fs::path(dir) / "summary.txt").string(), s.str());
    echo_config(cfg, dir);
    std::cout << s.str();
    return 0;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const RunConfig& cfg, const std::string& out, const std::string& what,
               int n_max) {
    const Corpus corpus = load_corpus_checked(cfg, out);
    auto utts = corpus.split("test");
    if (n_max > 0 && static_cast<int>(utts.size()) > n_max)
        utts.resize(static_cast<size_t>(n_max));
    if (utts.empty()) throw ArgumentError("ablate: empty test split");

    require_checkpoint(ckpt_path(out, "2"), "train 2");
    const WhisfusionModel model = load_whisfusion(cfg, ckpt_path(out, "2"));
    const InferenceEngine eng(model);
    const ModelConfig mc = model.cfg;
    const auto seed = static_cast<uint64_t>(cfg.geti("seed"));

    struct Variant {
        std::string name;
        PddConfig pdd;
    };
    std::vector<Variant> variants;
    const PddConfig base = cfg.pdd_config();

    if (what == "k") {
        for (int k : {1, 5, 10, 15}) {
            Variant v{"k=" + std::to_string(k), base};
            v.pdd.k = k;
            variants.push_back(v);
        }
    } else if (what == "steps") {
        for (int n_steps : {2, 3, 4, 5, 6}) {
            Variant v{"N=" + std::to_string(n_steps), base};
            v.pdd.k = 5;
            v.pdd.schedule = step_schedules().at(n_steps);
            variants.push_back(v);
        }
    } else if (what == "schedule") {
        const std::vector<std::pair<std::string, std::vector<double>>> named{
            {"standard", {1.0, 0.9, 0.85, 0.8}},
            {"conservative_a", {1.0, 0.98, 0.95, 0.9}},
            {"conservative_b", {1.0, 0.95, 0.9, 0.85}},
            {"aggressive_a", {1.0, 0.85, 0.7, 0.6}},
            {"aggressive_b", {1.0, 0.7, 0.5, 0.3}},
        };
        for (const auto& [name, sched] : named) {
            Variant v{name, base};
            v.pdd.k = 5;
            v.pdd.schedule = sched;
            variants.push_back(v);
        }
    } else if (what == "conditioning") {
        Variant on{"conditioned", base};
        Variant off{"ablated", base};
        off.pdd.conditioning = Conditioning::kAblated;
        variants.push_back(on);
        variants.push_back(off);
    } else {
        throw ArgumentError("unknown ablation: " + what +
                            " (expected k, steps, schedule, or conditioning)");
    }

    std::ostringstream csv;
    csv << "variant,k,n_steps,conditioning,pooled_wer,mean_wer,mean_oracle_wer,"
           "selection_accuracy,mean_confidence\n";
    json all = json::array();
    for (const auto& v : variants) {
        std::vector<UttScore> scores;
        double conf_sum = 0, oracle_sum = 0;
        for (const Utterance* u : utts) {
            const auto feats = features_for(*u, corpus.spec, mc.max_frames);
            CtxCache cache;
            const CtxCache* cache_ptr = nullptr;
            if (v.pdd.conditioning == Conditioning::kOn) {
                cache = eng.prepare_ctx(eng.encode(feats.frames));
                cache_ptr = &cache;
            }
            auto stream = RngStream(seed).child("decode").child(u->id);
            const DecodeResult res = decode_pdd(eng, cache_ptr, v.pdd, stream, &u->transcript);
            UttScore s = score_utterance(u->id, res.transcript, u->transcript);
            s.confidence = res.selected_confidence;
            s.selected = res.selected;
            s.selected_wer = s.wer;
            const auto [oi, ow] = oracle_candidate(res.candidates, mc, u->transcript);
            s.oracle = oi;
            s.oracle_wer = ow;
            conf_sum += res.selected_confidence;
            oracle_sum += ow;
            scores.push_back(std::move(s));
        }
        const PooledScores pooled = pool_scores(scores);
        const double mean_oracle = oracle_sum / static_cast<double>(scores.size());
        const double mean_conf = conf_sum / static_cast<double>(scores.size());
        double sel_acc = -1;
        if (v.pdd.k > 1) sel_acc = selection_stats(scores).accuracy;
        csv << v.name << ',' << v.pdd.k << ',' << v.pdd.schedule.size() << ','
            << (v.pdd.conditioning == Conditioning::kOn ? "on" : "ablated") << ','
            << pooled.pooled_wer << ',' << pooled.mean_wer << ',' << mean_oracle << ','
            << sel_acc << ',' << mean_conf << '\n';
        all.push_back({{"variant", v.name},
                       {"k", v.pdd.k},
                       {"n_steps", v.pdd.schedule.size()},
                       {"schedule", v.pdd.schedule},
                       {"conditioning", v.pdd.conditioning == Conditioning::kOn ? "on" : "ablated"},
                       {"pooled_wer", pooled.pooled_wer},
                       {"mean_wer", pooled.mean_wer},
                       {"mean_oracle_wer", mean_oracle},
                       {"selection_accuracy", sel_acc},
                       {"mean_confidence", mean_conf},
                       {"n_utts", pooled.n_utts}});
        std::cout << "ablate " << what << " " << v.name << ": pooled WER "
                  << pooled.pooled_wer << ", mean oracle WER " << mean_oracle << "\n";
    }

    const std::string dir = (fs::path(out) / "ablate").string();
    write_file((fs::path(dir) / (what + ".csv")).string(), csv.str());
    write_file((fs::path(dir) / (what + ".json")).string(), all.dump(2) + "\n");
    echo_config(cfg, dir);
    return 0;
}

// ---------------------------------------------------------------------------
// make-report

int cmd_make_report(const RunConfig& cfg, const std::string& out) {
    std::ostringstream md;
    md << "# Run report\n\n";

    auto read_if = [](const std::string& path) -> std::string {
        std::ifstream in(path, std::ios::binary);
        if (!in) return {};
        std::stringstream buf;
        buf << in.rdbuf();
        return buf.str();
    };

    const std::string stats = read_if((fs::path(out) / "stats.txt").string());
    md << "## Data\n\n";
    if (stats.empty())
        md << "gen-data has not run.\n\n";
    else
        md << "```\n" << stats << "```\n\n";

    md << "## Training\n\n";
    bool any_train = false;
    for (const std::string stage : {"0e", "0d", "1", "2", "ar"}) {
        const std::string log =
            read_if((fs::path(out) / "logs" / ("train_" + stage + ".jsonl")).string());
        if (log.empty()) continue;
        any_train = true;
        // Last line is the stage summary.
        std::istringstream in(log);
        std::string line, last;
        while (std::getline(in, line))
            if (!line.empty()) last = line;
        try {
            const json j = json::parse(last);
            md << "- stage " << stage << ": best epoch " << j.value("best_epoch", -1)
               << ", best val loss " << j.value("best_val_loss", 0.0) << ", "
               << j.value("optimizer_steps", int64_t(0)) << " optimizer steps\n";
        } catch (const json::exception&) {
            md << "- stage " << stage << ": log present but unparsable\n";
        }
    }
    if (!any_train) md << "no training logs found.\n";
    md << "\n";

    md << "## Decoding\n\n";
    bool any_decode = false;
    for (const std::string engine : {"pdd", "single", "ar"}) {
        const std::string summary =
            read_if((fs::path(out) / "decode" / engine / "summary.txt").string());
        if (summary.empty()) continue;
        any_decode = true;
        md << "### " << engine << "\n\n```\n" << summary << "```\n\n";
    }
    if (!any_decode) md << "no decode outputs found.\n\n";

    md << "## Latency\n\n";
    const std::string bench = read_if((fs::path(out) / "bench" / "summary.txt").string());
    if (bench.empty())
        md << "bench has not run.\n\n";
    else
        md << "```\n" << bench << "```\n\n";

    md << "## Ablations\n\n";
    bool any_ablate = false;
    for (const std::string what : {"k", "steps", "schedule", "conditioning"}) {
        const std::string csv = read_if((fs::path(out) / "ablate" / (what + ".csv")).string());
        if (csv.empty()) continue;
        any_ablate = true;
        md << "### " << what << "\n\n```\n" << csv << "```\n\n";
    }
    if (!any_ablate) md << "no ablation outputs found.\n";

    write_file((fs::path(out) / "report.md").string(), md.str());
    echo_config(cfg, out);
    std::cout << "make-report: wrote " << out << "/report.md\n";
    return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Argument parsing and dispatch

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"whisfusion: a masked-diffusion text decoder over frozen acoustic "
                 "features, with an autoregressive baseline"};
    app.require_subcommand(1);
    // Let global flags (--out, --set, ...) appear after the subcommand too.
    app.fallthrough();

    std::string config_path, out_dir = "out";
    std::vector<std::string> overrides;
    int64_t seed_flag = -1;
    int threads_flag = 0;
    app.add_option("--config", config_path, "key=value config file");
    app.add_option("--out", out_dir, "workspace directory (default: out)");
    app.add_option("--seed", seed_flag, "master seed override");
    app.add_option("--set", overrides, "config override key=value (repeatable)");
    app.add_option("--threads", threads_flag, "worker threads for batched decoding");

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");

    std::string train_stage;
    auto* train = app.add_subcommand("train", "run one training stage");
    train->add_option("stage", train_stage, "0e | 0d | 1 | 2 | ar")
        ->required()
        ->check(CLI::IsMember({"0e", "0d", "1", "2", "ar"}));

    std::string decode_engine, decode_split = "test", decode_ckpt;
    int decode_n = 0, decode_k = -1, decode_steps = -1;
    double decode_temp = -1;
    std::string decode_schedule;
    bool ablate_conditioning = false;
    auto* decode = app.add_subcommand("decode", "decode a corpus split");
    decode->add_option("engine", decode_engine, "pdd | single | ar")
        ->required()
        ->check(CLI::IsMember({"pdd", "single", "ar"}));
    decode->add_option("--split", decode_split, "train | dev | test (default: test)");
    decode->add_option("--n", decode_n, "max utterances (0 = all)");
    decode->add_option("--k", decode_k, "candidate count");
    decode->add_option("--steps", decode_steps, "refinement steps (named schedule 1..6)");
    decode->add_option("--schedule", decode_schedule, "comma-separated remasking fractions");
    decode->add_option("--temperature", decode_temp, "sampling temperature");
    decode->add_option("--ckpt", decode_ckpt, "checkpoint path override");
    decode->add_flag("--ablate-conditioning", ablate_conditioning,
                     "decode without acoustic context");

    int bench_n = -1, bench_repeats = -1, bench_k = -1;
    auto* bench = app.add_subcommand("bench", "latency benchmark pdd vs ar");
    bench->add_option("--n", bench_n, "max utterances");
    bench->add_option("--repeats", bench_repeats, "timing repeats per utterance");
    bench->add_option("--k", bench_k, "pdd candidate count for timing");

    std::string ablate_what;
    int ablate_n = 100;
    auto* ablate = app.add_subcommand("ablate", "sweep one decoding knob");
    ablate->add_option("what", ablate_what, "k | steps | schedule | conditioning")
        ->required()
        ->check(CLI::IsMember({"k", "steps", "schedule", "conditioning"}));
    ablate->add_option("--n", ablate_n, "max utterances (0 = all)");

    auto* report = app.add_subcommand("make-report", "collate outputs into report.md");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
        for (const auto& kv : overrides) {
            const size_t eq = kv.find('=');
            if (eq == std::string::npos)
                throw ArgumentError("--set expects key=value, got '" + kv + "'");
            cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (seed_flag >= 0) cfg.apply_override("seed", std::to_string(seed_flag));
        if (threads_flag > 0) cfg.apply_override("threads", std::to_string(threads_flag));
        if (decode_k > 0) cfg.apply_override("pdd.k", std::to_string(decode_k));
        if (decode_temp >= 0) cfg.apply_override("pdd.temperature", std::to_string(decode_temp));
        if (decode_steps > 0) {
            if (!step_schedules().count(decode_steps))
                throw ArgumentError("--steps must be in [1, 6]");
            std::ostringstream s;
            const auto& sched = step_schedules().at(decode_steps);
            for (size_t i = 0; i < sched.size(); ++i) s << (i ? "," : "") << sched[i];
            cfg.apply_override("pdd.schedule", s.str());
        }
        if (!decode_schedule.empty()) cfg.apply_override("pdd.schedule", decode_schedule);
        if (bench_n >= 0) cfg.apply_override("bench.n_utts", std::to_string(bench_n));
        if (bench_repeats > 0)
            cfg.apply_override("bench.repeats", std::to_string(bench_repeats));
        if (bench_k > 0) cfg.apply_override("bench.pdd_k", std::to_string(bench_k));

        ThreadPool::set_global_threads(cfg.geti("threads"));
        DirLock lock(out_dir);

        if (gen->parsed()) return cmd_gen_data(cfg, out_dir);
        if (train->parsed()) return cmd_train(cfg, out_dir, train_stage);
        if (decode->parsed())
            return cmd_decode(cfg, out_dir, decode_engine, decode_split, decode_n,
                              ablate_conditioning, decode_ckpt);
        if (bench->parsed()) return cmd_bench(cfg, out_dir);
        if (ablate->parsed()) return cmd_ablate(cfg, out_dir, ablate_what, ablate_n);
        if (report->parsed()) return cmd_make_report(cfg, out_dir);
        throw ArgumentError("no subcommand selected");
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace whisfusion
