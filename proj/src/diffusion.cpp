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

#include "whisfusion/diffusion.hpp"

namespace whisfusion {

double mdm_loss_value(const Tensor& logits, const std::vector<int>& y0,
                      const MaskedSequence& masked) {
    Tape t;
    const auto l = t.leaf(logits, false);
    return t.value(mdm_loss_tape(t, l, y0, masked)).item();
}

double mdm_loss_batch_value(const std::vector<Tensor>& logits,
                            const std::vector<std::vector<int>>& y0,
                            const std::vector<MaskedSequence>& masked) {
    if (logits.empty() || logits.size() != y0.size() || y0.size() != masked.size())
        throw ArgumentError("mdm_loss_batch: mismatched batch");
    double total = 0.0;
    for (size_t i = 0; i < logits.size(); ++i)
        total += mdm_loss_value(logits[i], y0[i], masked[i]);
    return total / static_cast<double>(logits.size());
}

}  // namespace whisfusion
