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

#include "whisfusion/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "whisfusion/common.hpp"

namespace whisfusion {

namespace {

constexpr char kMagic[4] = {'W', 'F', 'C', 'K'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void put_u32(std::string& out, uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

uint32_t take_u32(const std::string& in, size_t& off) {
    if (off + 4 > in.size()) throw SchemaError("checkpoint: truncated file");
    uint32_t v;
    std::memcpy(&v, in.data() + off, 4);
    off += 4;
    return v;
}

std::string take_bytes(const std::string& in, size_t& off, size_t n) {
    if (off + n > in.size()) throw SchemaError("checkpoint: truncated file");
    std::string s = in.substr(off, n);
    off += n;
    return s;
}

std::string manifest_path(const std::string& path) { return path + ".manifest"; }

}  // namespace

bool checkpoint_exists(const std::string& path) {
    return std::filesystem::exists(path) && std::filesystem::exists(manifest_path(path));
}

void save_checkpoint(const ParamStore& params, const std::string& path,
                     const CheckpointManifest& manifest) {
    std::string blob;
    blob.append(kMagic, 4);
    put_u32(blob, static_cast<uint32_t>(manifest.format_version));
    put_u32(blob, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
        put_u32(blob, static_cast<uint32_t>(p.name.size()));
        blob.append(p.name);
        put_u32(blob, static_cast<uint32_t>(p.value.shape.size()));
        for (int d : p.value.shape) put_u32(blob, static_cast<uint32_t>(d));
        const size_t bytes = p.value.data.size() * sizeof(float);
        const size_t off = blob.size();
        blob.resize(off + bytes);
        std::memcpy(blob.data() + off, p.value.data.data(), bytes);
    }
    const uint64_t digest = fnv1a64(blob.data(), blob.size());
    char d[8];
    std::memcpy(d, &digest, 8);
    blob.append(d, 8);

    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("checkpoint: cannot write " + path);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw IoError("checkpoint: short write to " + path);
    f.close();

    std::ostringstream m;
    m << "format-version: " << manifest.format_version << "\n";
    m << "config-hash: " << manifest.config_hash << "\n";
    for (const auto& [k, v] : manifest.meta) m << k << ": " << v << "\n";
    std::ofstream mf(manifest_path(path), std::ios::trunc);
    if (!mf) throw IoError("checkpoint: cannot write " + manifest_path(path));
    mf << m.str();
}

CheckpointManifest read_manifest(const std::string& path) {
    std::ifstream mf(manifest_path(path));
    if (!mf) throw DependencyError("checkpoint: missing manifest for " + path);
    CheckpointManifest manifest;
    manifest.format_version = -1;
    std::string line;
    while (std::getline(mf, line)) {
        const auto colon = line.find(": ");
        if (colon == std::string::npos) continue;
        const std::string key = line.substr(0, colon);
        const std::string val = line.substr(colon + 2);
        if (key == "format-version")
            manifest.format_version = std::stoi(val);
        else if (key == "config-hash")
            manifest.config_hash = val;
        else
            manifest.meta[key] = val;
    }
    if (manifest.format_version != kCheckpointFormatVersion)
        throw SchemaError("checkpoint: unsupported format version in " + path);
    return manifest;
}

CheckpointManifest load_checkpoint(ParamStore& params, const std::string& path) {
    if (!std::filesystem::exists(path))
        throw DependencyError("checkpoint: missing file " + path);
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string blob = ss.str();

    if (blob.size() < 12 + 8 || std::memcmp(blob.data(), kMagic, 4) != 0)
        throw SchemaError("checkpoint: bad magic in " + path);
    uint64_t stored_digest;
    std::memcpy(&stored_digest, blob.data() + blob.size() - 8, 8);
    if (fnv1a64(blob.data(), blob.size() - 8) != stored_digest)
        throw SchemaError("checkpoint: digest mismatch in " + path);

    size_t off = 4;
    const uint32_t version = take_u32(blob, off);
    if (version != static_cast<uint32_t>(kCheckpointFormatVersion))
        throw SchemaError("checkpoint: unsupported format version in " + path);
    const uint32_t n_params = take_u32(blob, off);
    if (n_params != static_cast<uint32_t>(params.size()))
        throw SchemaError("checkpoint: parameter count mismatch in " + path);

    for (uint32_t i = 0; i < n_params; ++i) {
        const uint32_t name_len = take_u32(blob, off);
        const std::string name = take_bytes(blob, off, name_len);
        const uint32_t rank = take_u32(blob, off);
        std::vector<int> shape(rank);
        int64_t numel = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            shape[r] = static_cast<int>(take_u32(blob, off));
            numel *= shape[r];
        }
        const int idx = params.find(name);
        if (idx < 0) throw SchemaError("checkpoint: unexpected parameter " + name);
        auto& p = params.at(idx);
        if (p.value.shape != shape)
            throw SchemaError("checkpoint: shape mismatch for " + name + " (file " +
                              TensorT<float>::from(shape, std::vector<float>(numel, 0)).shape_str() +
                              " vs store " + p.value.shape_str() + ")");
        const std::string payload = take_bytes(blob, off, static_cast<size_t>(numel) * 4);
        std::memcpy(p.value.data.data(), payload.data(), payload.size());
    }
    return read_manifest(path);
}

}  // namespace whisfusion
