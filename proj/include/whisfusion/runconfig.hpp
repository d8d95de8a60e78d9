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

#include "whisfusion/curriculum.hpp"
#include "whisfusion/data.hpp"
#include "whisfusion/model.hpp"
#include "whisfusion/pdd.hpp"

namespace whisfusion {

// Flat key=value run configuration. Every key has a default; a key outside
// the schema is a SchemaError, whether it comes from a file or an override.
class RunConfig {
  public:
    RunConfig();  // schema defaults

    static RunConfig from_file(const std::string& path);

    // Parses `# comment` and `key=value` lines into this config.
    void apply_text(const std::string& text, const std::string& origin);
    void apply_override(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;
    const std::string& gets(const std::string& key) const;
    int geti(const std::string& key) const;
    double getd(const std::string& key) const;
    std::vector<double> get_list(const std::string& key) const;  // comma-separated

    // Sorted key=value lines; hash covers every effective value.
    std::string serialize() const;
    uint64_t hash() const;

    ModelConfig model_config() const;
    GenConfig gen_config() const;
    SynthSpec synth_spec() const;
    StageConfig stage_config(const std::string& stage) const;
    PddConfig pdd_config() const;

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace whisfusion
