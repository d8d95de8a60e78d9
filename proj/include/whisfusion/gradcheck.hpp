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

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "whisfusion/autodiff.hpp"
#include "whisfusion/rng.hpp"

namespace whisfusion {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int coords_checked = 0;
    std::string worst_param;
};

// Central-difference verification of tape gradients, run in double precision.
// `build_loss` must construct the full loss graph from the current parameter
// values; it is re-invoked for every perturbed evaluation.
inline GradCheckReport grad_check(
    ParamStoreT<double>& params,
    const std::function<typename TapeT<double>::Val(TapeT<double>&)>& build_loss,
    double epsilon, int coords_per_param, RngStream rng) {
    if (!(epsilon > 0)) throw ArgumentError("grad_check: epsilon must be positive");
    if (coords_per_param < 1)
        throw ArgumentError("grad_check: coords_per_param must be >= 1");

    const auto eval_loss = [&]() -> double {
        TapeT<double> t;
        const auto loss = build_loss(t);
        const double v = t.value(loss).item();
        if (!std::isfinite(v)) throw NumericFault("grad_check: non-finite loss");
        return v;
    };

    params.zero_grads();
    {
        TapeT<double> t;
        const auto loss = build_loss(t);
        if (!std::isfinite(t.value(loss).item()))
            throw NumericFault("grad_check: non-finite loss");
        t.backward(loss);
    }
    for (int i = 0; i < params.size(); ++i)
        if (params.at(i).needs_grad && !params.at(i).grad.finite())
            throw NumericFault("grad_check: non-finite gradient in " + params.at(i).name);

    GradCheckReport report;
    for (int i = 0; i < params.size(); ++i) {
        auto& p = params.at(i);
        if (!p.needs_grad) continue;
        const int64_t n = p.value.numel();
        const int n_coords = static_cast<int>(std::min<int64_t>(n, coords_per_param));
        for (int s = 0; s < n_coords; ++s) {
            const int64_t j = n <= coords_per_param
                                  ? s
                                  : static_cast<int64_t>(rng.below(static_cast<uint32_t>(n)));
            const double w0 = p.value.data[static_cast<size_t>(j)];
            p.value.data[static_cast<size_t>(j)] = w0 + epsilon;
            const double fp = eval_loss();
            p.value.data[static_cast<size_t>(j)] = w0 - epsilon;
            const double fm = eval_loss();
            p.value.data[static_cast<size_t>(j)] = w0;
            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double analytic = p.grad.data[static_cast<size_t>(j)];
            const double rel = std::abs(numeric - analytic) /
                               std::max(1.0, std::max(std::abs(numeric), std::abs(analytic)));
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p.name;
            }
        }
    }
    return report;
}

}  // namespace whisfusion
