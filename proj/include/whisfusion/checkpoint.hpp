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

#include "whisfusion/optim.hpp"

namespace whisfusion {

// Checkpoint = one binary blob of (name, shape, f32 little-endian payload)
// entries plus a sibling "<path>.manifest" text file carrying format-version,
// the model config hash, and free-form metadata lines. Save -> load -> save
// is byte-stable.

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointManifest {
    int format_version = kCheckpointFormatVersion;
    std::string config_hash;                  // hex64 of the model config
    std::map<std::string, std::string> meta;  // stage, epoch, ...
};

void save_checkpoint(const ParamStore& params, const std::string& path,
                     const CheckpointManifest& manifest);

// Loads values into an existing store; the name set and shapes must match
// exactly (SchemaError otherwise). Returns the manifest.
CheckpointManifest load_checkpoint(ParamStore& params, const std::string& path);

// Manifest only, without touching parameter values.
CheckpointManifest read_manifest(const std::string& path);

bool checkpoint_exists(const std::string& path);

}  // namespace whisfusion
