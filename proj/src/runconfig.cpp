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

#include "whisfusion/runconfig.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace whisfusion {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string fmt(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

std::map<std::string, std::string> build_defaults() {
    std::map<std::string, std::string> d;
    d["seed"] = "7";
    d["threads"] = "1";

    const GenConfig gen;
    d["data.n_utts"] = std::to_string(gen.n_utts);
    d["data.len_min"] = std::to_string(gen.len_min);
    d["data.len_max"] = std::to_string(gen.len_max);
    d["data.dev_frac"] = fmt(gen.dev_frac);
    d["data.test_frac"] = fmt(gen.test_frac);
    d["data.source_words"] = std::to_string(gen.source_words);

    const SynthSpec spec;
    d["data.frames_per_char_min"] = std::to_string(spec.frames_per_char_min);
    d["data.frames_per_char_max"] = std::to_string(spec.frames_per_char_max);
    d["data.noise_sigma"] = fmt(spec.noise_sigma);
    d["data.codebook_seed"] = std::to_string(spec.codebook_seed);

    const ModelConfig m;
    d["model.d_model"] = std::to_string(m.d_model);
    d["model.n_heads"] = std::to_string(m.n_heads);
    d["model.n_enc_layers"] = std::to_string(m.n_enc_layers);
    d["model.n_dec_layers"] = std::to_string(m.n_dec_layers);
    d["model.ffn_mult"] = std::to_string(m.ffn_mult);
    d["model.max_canvas_len"] = std::to_string(m.max_canvas_len);
    d["model.max_frames"] = std::to_string(m.max_frames);

    for (const std::string stage : {"0e", "0d", "1", "2", "ar"}) {
        const StageConfig c = default_stage_config(stage);
        const std::string p = "train." + stage + ".";
        d[p + "max_epochs"] = std::to_string(c.max_epochs);
        d[p + "batch_size"] = std::to_string(c.batch_size);
        d[p + "base_lr"] = fmt(c.base_lr);
        d[p + "weight_decay"] = fmt(c.weight_decay);
        d[p + "warmup_ratio"] = fmt(c.warmup_ratio);
        d[p + "patience"] = std::to_string(c.patience);
        d[p + "min_delta"] = fmt(c.min_delta);
        d[p + "llrd_gamma"] = fmt(c.llrd_gamma);
        d[p + "val_decode_n"] = std::to_string(c.val_decode_n);
    }

    const PddConfig pdd;
    d["pdd.k"] = std::to_string(pdd.k);
    d["pdd.temperature"] = fmt(pdd.temperature);
    std::ostringstream sched;
    for (size_t i = 0; i < pdd.schedule.size(); ++i)
        sched << (i ? "," : "") << pdd.schedule[i];
    d["pdd.schedule"] = sched.str();

    d["bench.repeats"] = "5";
    d["bench.n_utts"] = "120";
    d["bench.buckets"] = "3";
    d["bench.min_bucket"] = "10";
    d["bench.pdd_k"] = "1";
    return d;
}

}  // namespace

RunConfig::RunConfig() : values_(build_defaults()) {}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    RunConfig cfg;
    cfg.apply_text(buf.str(), path);
    return cfg;
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.erase(hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw SchemaError(origin + ":" + std::to_string(line_no) +
                              ": expected key=value, got '" + line + "'");
        apply_override(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw SchemaError("unknown config key: " + key);
    if (value.empty()) throw SchemaError("empty value for config key: " + key);
    it->second = value;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string& RunConfig::gets(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw SchemaError("unknown config key: " + key);
    return it->second;
}

int RunConfig::geti(const std::string& key) const {
    const std::string& v = gets(key);
    size_t used = 0;
    int out = 0;
    try {
        out = std::stoi(v, &used);
    } catch (const std::exception&) {
        throw SchemaError("config key " + key + ": '" + v + "' is not an integer");
    }
    if (used != v.size())
        throw SchemaError("config key " + key + ": '" + v + "' is not an integer");
    return out;
}

double RunConfig::getd(const std::string& key) const {
    const std::string& v = gets(key);
    size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw SchemaError("config key " + key + ": '" + v + "' is not a number");
    }
    if (used != v.size())
        throw SchemaError("config key " + key + ": '" + v + "' is not a number");
    return out;
}

std::vector<double> RunConfig::get_list(const std::string& key) const {
    const std::string& v = gets(key);
    std::vector<double> out;
    std::istringstream in(v);
    std::string part;
    while (std::getline(in, part, ',')) {
        part = trim(part);
        size_t used = 0;
        try {
            out.push_back(std::stod(part, &used));
        } catch (const std::exception&) {
            throw SchemaError("config key " + key + ": '" + part + "' is not a number");
        }
        if (used != part.size())
            throw SchemaError("config key " + key + ": '" + part + "' is not a number");
    }
    if (out.empty()) throw SchemaError("config key " + key + ": empty list");
    return out;
}

std::string RunConfig::serialize() const {
    std::ostringstream s;
    for (const auto& [k, v] : values_) s << k << "=" << v << "\n";
    return s.str();
}

uint64_t RunConfig::hash() const { return fnv1a64(serialize()); }

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.d_model = geti("model.d_model");
    m.n_heads = geti("model.n_heads");
    m.n_enc_layers = geti("model.n_enc_layers");
    m.n_dec_layers = geti("model.n_dec_layers");
    m.ffn_mult = geti("model.ffn_mult");
    m.max_canvas_len = geti("model.max_canvas_len");
    m.max_frames = geti("model.max_frames");
    m.validate();
    return m;
}

GenConfig RunConfig::gen_config() const {
    GenConfig g;
    g.n_utts = geti("data.n_utts");
    g.len_min = geti("data.len_min");
    g.len_max = geti("data.len_max");
    g.dev_frac = getd("data.dev_frac");
    g.test_frac = getd("data.test_frac");
    g.source_words = geti("data.source_words");
    g.validate();
    return g;
}

SynthSpec RunConfig::synth_spec() const {
    SynthSpec s;
    s.frames_per_char_min = geti("data.frames_per_char_min");
    s.frames_per_char_max = geti("data.frames_per_char_max");
    s.noise_sigma = getd("data.noise_sigma");
    s.codebook_seed = static_cast<uint64_t>(geti("data.codebook_seed"));
    s.d_feat = model_config().d_feat;
    s.validate();
    return s;
}

StageConfig RunConfig::stage_config(const std::string& stage) const {
    StageConfig c = default_stage_config(stage);  // validates the stage name
    const std::string p = "train." + stage + ".";
    c.max_epochs = geti(p + "max_epochs");
    c.batch_size = geti(p + "batch_size");
    c.base_lr = getd(p + "base_lr");
    c.weight_decay = getd(p + "weight_decay");
    c.warmup_ratio = getd(p + "warmup_ratio");
    c.patience = geti(p + "patience");
    c.min_delta = getd(p + "min_delta");
    c.llrd_gamma = getd(p + "llrd_gamma");
    c.val_decode_n = geti(p + "val_decode_n");
    c.validate();
    return c;
}

PddConfig RunConfig::pdd_config() const {
    PddConfig p;
    p.k = geti("pdd.k");
    p.temperature = getd("pdd.temperature");
    p.schedule = get_list("pdd.schedule");
    p.validate();
    return p;
}

}  // namespace whisfusion
