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

#include <string>
#include <vector>

#include "whisfusion/ar.hpp"
#include "whisfusion/data.hpp"
#include "whisfusion/model.hpp"
#include "whisfusion/optim.hpp"

namespace whisfusion {

// One training stage's hyperparameters. The curriculum:
//   0e - encoder warm-up on frame labels (this produces the "frozen
//        pretrained encoder" the later stages assume)
//   0d - unconditional decoder warm-up (masked-infill, ablated conditioning)
//   1  - adapters only, full masking range
//   2  - adapters + decoder body, heavy masking, layer-discriminated rates
//   ar - autoregressive baseline under matched conditions
struct StageConfig {
    std::string stage;
    int max_epochs = 10;
    int batch_size = 16;
    double base_lr = 1e-4;
    double weight_decay = 0.01;
    double warmup_ratio = 0.02;
    int patience = 8;
    double min_delta = 1e-4;   // val-loss improvement below this does not reset patience
    double llrd_gamma = 1.0;   // 1.0 = uniform rates
    int val_decode_n = 24;     // dev utterances in the per-epoch decode probe

    void validate() const;
};

StageConfig default_stage_config(const std::string& stage);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double val_wer = -1;  // decode probe; -1 when the stage has none
    double val_cer = -1;
    double lr_last = 0;
    double seconds = 0;
    bool is_best = false;
};

struct TrainLog {
    std::string stage;
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_loss = 0;
    int64_t optimizer_steps = 0;

    std::string to_jsonl() const;
};

// Each trainer runs its stage and leaves the model at the best epoch's
// weights. Prerequisite loading and checkpoint writing belong to the caller.
TrainLog train_stage0_encoder(WhisfusionModel& model, const Corpus& corpus,
                              const StageConfig& cfg, RngStream rng);
TrainLog train_stage0_decoder(WhisfusionModel& model, const Corpus& corpus,
                              const StageConfig& cfg, RngStream rng);
TrainLog train_stage1(WhisfusionModel& model, const Corpus& corpus,
                      const StageConfig& cfg, RngStream rng);
TrainLog train_stage2(WhisfusionModel& model, const Corpus& corpus,
                      const StageConfig& cfg, RngStream rng);

// Per-parameter multipliers used by stage 2: layer l of L trains at
// gamma^(L - l); everything outside the decoder stack stays at 1.
std::vector<double> stage2_lr_scales(const ParamStore& ps, const ModelConfig& cfg,
                                     double gamma);
TrainLog train_ar_stage(ArModel& ar, const WhisfusionModel& encoder_source,
                        const Corpus& corpus, const StageConfig& cfg, RngStream rng);

// Post-hoc linear probe on frozen encoder features: per-frame character
// accuracy on the test split. `shuffle_labels` draws the control.
double encoder_probe_accuracy(const WhisfusionModel& model, const Corpus& corpus,
                              RngStream rng, bool shuffle_labels, int max_train_utts = 200,
                              int max_eval_utts = 100);

// Teacher-forced masked-token recovery rate of the unconditional decoder at a
// given masking ratio (argmax over masked slots vs ground truth).
double masked_recovery_rate(const WhisfusionModel& model, const Corpus& corpus,
                            const std::string& split, double ratio, RngStream rng,
                            Conditioning cond, int max_utts = 100);

// Teacher-forced next-char accuracy of the AR baseline.
double ar_teacher_forced_accuracy(ArModel& ar, const WhisfusionModel& encoder_source,
                                  const Corpus& corpus, const std::string& split,
                                  int max_utts = 100);

}  // namespace whisfusion
