// kasr/losses.h

// Copyright 2026  The kasr Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef KASR_LOSSES_H_
#define KASR_LOSSES_H_

#include <span>
#include <string>
#include <vector>

#include "kasr/autodiff.h"
#include "kasr/model.h"
#include "kasr/signal.h"

namespace kasr {

/// Negative log-likelihood of `target` under the (T × V) frame
/// log-probabilities, summed over all CTC alignments.  The forward and
/// backward recursions run in log space over the blank-interleaved label
/// sequence; the gradient w.r.t. log_probs is minus the state occupancy.
/// Throws InfeasibleAlignmentError if T is shorter than the target plus the
/// blanks needed between repeated labels.
Tensor CtcLoss(const Tensor& log_probs, std::span<const int> target, int blank);

/// Mean over positions of -log softmax(logits)[i, target[i]].
Tensor SeqCeLoss(const Tensor& logits, std::span<const int> target);

/// MSE over d_model between the time means of the valid rows of two
/// encoder outputs.  Lengths may differ.
Tensor PifLoss(const EncoderStates& a, const EncoderStates& b);

struct PifConfig {
  double weight = 0.1;
  std::string distance = "mse_pooled";
};

void ValidatePifConfig(const PifConfig& cfg);

struct LossBreakdown {
  Tensor total_tensor;
  double task_loss = 0.0;
  double pif_loss = 0.0;
  double total = 0.0;
};

/// One utterance ready for the model: padded features, its frame mask and
/// the character ids of the transcript.
struct Utterance {
  std::string id;
  FeatureMatrix features;
  std::vector<uint8_t> mask;
  std::vector<int> target;
};

/// An original utterance and its perturbed copies.
struct TrainingGroup {
  Utterance original;
  std::vector<Utterance> perturbed;
};

/// Task loss of one utterance: CTC NLL divided by the target length in ctc
/// mode, next-token cross-entropy over [bos]+target -> target+[eos] in
/// enc_dec mode.
Tensor TaskLoss(const Model& model, const EncoderStates& enc, std::span<const int> target);

/// Task loss averaged over every utterance (originals and copies) plus
/// weight times the PIF loss averaged over all (original, copy) pairs.
/// With weight 0 the total is the task loss itself.  Throws ConfigError
/// for weight > 0 without pairs.
LossBreakdown TotalObjective(const Model& model, std::span<const TrainingGroup> batch,
                             const PifConfig& pif);

}  // namespace kasr

#endif  // KASR_LOSSES_H_
