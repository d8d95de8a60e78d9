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

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace whisfusion {

// Error taxonomy. Every runtime failure maps onto one of these so callers and
// tests can discriminate by type instead of matching message strings.

// Bad argument or out-of-contract input value.
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Input exceeds a configured capacity (canvas length, frame budget, ...).
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Structural mismatch: unknown parameter name, incompatible checkpoint, ...
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf where finite values are required, or a diverged computation.
struct NumericFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A stated invariant was violated at runtime (e.g. a frozen parameter moved).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A prerequisite artifact (checkpoint, corpus file) is missing.
struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Metric is undefined for the given input (e.g. empty reference).
struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Timing measurement could not be taken meaningfully.
struct MeasurementError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File I/O failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a over raw bytes; used for config hashes and parameter-group hashes.
inline uint64_t fnv1a64(const void* data, size_t n,
                        uint64_t seed = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

std::string hex64(uint64_t v);

}  // namespace whisfusion
