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

#include <cmath>
#include <cstdint>
#include <string_view>

#include "whisfusion/common.hpp"

namespace whisfusion {

// Counter-based splittable PRNG. A stream is a (key, counter) pair; drawing
// advances the counter, and child(tag) derives an independent stream whose
// output does not depend on how much the parent has been consumed. This is
// what makes candidate/step substreams reproducible regardless of how many
// candidates a decode run asks for.
class RngStream {
  public:
    RngStream() : key_(mix_(0x6a09e667f3bcc908ULL)) {}
    explicit RngStream(uint64_t seed) : key_(mix_(seed ^ 0x9e3779b97f4a7c15ULL)) {}

    // Derive an independent substream. Consumes nothing from this stream.
    RngStream child(uint64_t tag) const {
        RngStream s;
        s.key_ = mix_(mix_(key_ ^ 0xa0761d6478bd642fULL) + mix_(tag + 0x2545f4914f6cdd1dULL));
        s.counter_ = 0;
        return s;
    }

    RngStream child(std::string_view label) const {
        return child(fnv1a64(label.data(), label.size()));
    }

    uint64_t next_u64() {
        uint64_t z = mix_(counter_++);
        return mix_(key_ ^ (z + 0xd1b54a32d192ed03ULL));
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        if (!(hi >= lo)) throw ArgumentError("uniform: hi < lo");
        return lo + (hi - lo) * next_double();
    }

    // Unbiased-to-2^-64 integer in [0, n).
    uint32_t below(uint32_t n) {
        if (n == 0) throw ArgumentError("below: n must be positive");
        return static_cast<uint32_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller; consumes exactly two raw draws so that
    // downstream consumption patterns stay stable across refactors.
    double normal() {
        double u1 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
        double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    uint64_t key() const { return key_; }

  private:
    static uint64_t mix_(uint64_t x) {
        // splitmix64 finalizer.
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    uint64_t key_ = 0;
    uint64_t counter_ = 0;
};

}  // namespace whisfusion
