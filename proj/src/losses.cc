// kasr/losses.cc

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

#include "kasr/losses.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kasr/datapipe.h"

namespace kasr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double LogAdd(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

Tensor CtcLoss(const Tensor& log_probs, std::span<const int> target, int blank) {
  if (log_probs.rank() != 2) throw ShapeError("ctc: log_probs must be T x V, got " + ShapeString(log_probs.shape()));
  const int T = log_probs.dim(0), V = log_probs.dim(1);
  if (blank < 0 || blank >= V) throw ArgumentError("ctc: blank id out of range");
  int repeats = 0;
  for (size_t i = 0; i < target.size(); ++i) {
    if (target[i] == blank) throw ArgumentError("ctc: target contains the blank id");
    if (target[i] < 0 || target[i] >= V) throw ArgumentError("ctc: target id out of range");
    if (i > 0 && target[i] == target[i - 1]) ++repeats;
  }
  const int min_len = static_cast<int>(target.size()) + repeats;
  if (T < min_len)
    throw InfeasibleAlignmentError("ctc: " + std::to_string(T) + " frames cannot align " +
                                   std::to_string(target.size()) + " labels (need " + std::to_string(min_len) + ")");

  // Extended sequence: blank l1 blank l2 ... blank.
  const int S = 2 * static_cast<int>(target.size()) + 1;
  std::vector<int> ext(S, blank);
  for (size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  auto lp = [&](int t, int s) { return log_probs.at(t, ext[s]); };
  auto can_skip = [&](int s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(static_cast<size_t>(T) * S, kNegInf);
  std::vector<double> beta(static_cast<size_t>(T) * S, kNegInf);
  auto A = [&](int t, int s) -> double& { return alpha[static_cast<size_t>(t) * S + s]; };
  auto B = [&](int t, int s) -> double& { return beta[static_cast<size_t>(t) * S + s]; };

  A(0, 0) = lp(0, 0);
  if (S > 1) A(0, 1) = lp(0, 1);
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = LogAdd(acc, A(t - 1, s - 1));
      if (can_skip(s)) acc = LogAdd(acc, A(t - 1, s - 2));
      if (acc != kNegInf) A(t, s) = acc + lp(t, s);
    }
  }
  B(T - 1, S - 1) = lp(T - 1, S - 1);
  if (S > 1) B(T - 1, S - 2) = lp(T - 1, S - 2);
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double acc = B(t + 1, s);
      if (s + 1 < S) acc = LogAdd(acc, B(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) acc = LogAdd(acc, B(t + 1, s + 2));
      if (acc != kNegInf) B(t, s) = acc + lp(t, s);
    }
  }
  double log_p = A(T - 1, S - 1);
  if (S > 1) log_p = LogAdd(log_p, A(T - 1, S - 2));
  if (log_p == kNegInf) throw InfeasibleAlignmentError("ctc: target has zero probability");

  // Occupancy gamma(t, k) = sum over s with ext[s] == k of
  // alpha(t, s) beta(t, s) / (y(t, k) p); the gradient of -log p w.r.t.
  // log y(t, k) is -gamma(t, k).
  std::vector<double> grad(static_cast<size_t>(T) * V, 0.0);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      const double a = A(t, s), b = B(t, s);
      if (a == kNegInf || b == kNegInf) continue;
      grad[static_cast<size_t>(t) * V + ext[s]] -= std::exp(a + b - lp(t, s) - log_p);
    }

  return Tensor::FromOp({}, {-log_p}, {log_probs},
                        [grad = std::move(grad)](const Node&, std::span<const double> g,
                                                 std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          for (size_t i = 0; i < grad.size(); ++i) (*gin[0])[i] += g[0] * grad[i];
                        });
}

Tensor SeqCeLoss(const Tensor& logits, std::span<const int> target) {
  if (logits.rank() != 2) throw ShapeError("seq_ce: logits must be len x V, got " + ShapeString(logits.shape()));
  const int len = logits.dim(0), V = logits.dim(1);
  if (static_cast<int>(target.size()) != len)
    throw ShapeError("seq_ce: " + std::to_string(len) + " positions but " + std::to_string(target.size()) +
                     " targets");
  std::vector<double> onehot(static_cast<size_t>(len) * V, 0.0);
  for (int i = 0; i < len; ++i) {
    if (target[i] < 0 || target[i] >= V) throw ArgumentError("seq_ce: target id out of range");
    onehot[static_cast<size_t>(i) * V + target[i]] = 1.0;
  }
  const Tensor picked = Mul(LogSoftmax(logits, 1), Tensor::Constant({len, V}, std::move(onehot)));
  return Scale(SumAll(picked), -1.0 / len);
}

namespace {

Tensor Pool(const EncoderStates& e) {
  const int n = e.NumValid();
  if (n == 0) throw ArgumentError("pif: encoder output has no valid positions");
  const int T = e.states.dim(0);
  std::vector<double> w(T, 0.0);
  for (int t = 0; t < T; ++t)
    if (e.valid[t]) w[t] = 1.0 / n;
  return MatMul(Tensor::Constant({1, T}, std::move(w)), e.states);
}

}  // namespace

Tensor PifLoss(const EncoderStates& a, const EncoderStates& b) {
  if (a.states.rank() != 2 || b.states.rank() != 2 || a.states.dim(1) != b.states.dim(1))
    throw ShapeError("pif: width mismatch " + ShapeString(a.states.shape()) + " vs " +
                     ShapeString(b.states.shape()));
  const Tensor diff = Sub(Pool(a), Pool(b));
  return MeanAll(Mul(diff, diff));
}

void ValidatePifConfig(const PifConfig& cfg) {
  if (!std::isfinite(cfg.weight) || cfg.weight < 0.0) throw ConfigError("pif.weight must be finite and >= 0");
  if (cfg.distance != "mse_pooled") throw ConfigError("pif.distance must be \"mse_pooled\"");
}

Tensor TaskLoss(const Model& model, const EncoderStates& enc, std::span<const int> target) {
  if (target.empty()) throw ArgumentError("task loss: empty target");
  if (model.config().mode == ModelMode::kCtc)
    return Scale(CtcLoss(CtcLogProbs(model, enc), target, kBlankId), 1.0 / target.size());
  std::vector<int> prefix{kBosId};
  prefix.insert(prefix.end(), target.begin(), target.end());
  std::vector<int> next(target.begin(), target.end());
  next.push_back(kEosId);
  return SeqCeLoss(DecodeTeacherForced(model, enc, prefix), next);
}

LossBreakdown TotalObjective(const Model& model, std::span<const TrainingGroup> batch, const PifConfig& pif) {
  ValidatePifConfig(pif);
  if (batch.empty()) throw ArgumentError("total objective: empty batch");
  size_t n_pairs = 0;
  for (const TrainingGroup& g : batch) n_pairs += g.perturbed.size();
  if (pif.weight > 0.0 && n_pairs == 0)
    throw ConfigError("pif.weight > 0 requires (original, perturbed) pairs in the batch");

  auto task_of = [&](const Utterance& u, const EncoderStates& enc) {
    try {
      return TaskLoss(model, enc, u.target);
    } catch (const InfeasibleAlignmentError& e) {
      throw InfeasibleAlignmentError(std::string(e.what()) + " (utterance '" + u.id + "')");
    }
  };

  auto mean_of = [](const std::vector<Tensor>& terms) {
    Tensor acc = terms.front();
    for (size_t i = 1; i < terms.size(); ++i) acc = Add(acc, terms[i]);
    return Scale(acc, 1.0 / terms.size());
  };

  std::vector<Tensor> task_terms, pif_terms;
  for (const TrainingGroup& g : batch) {
    const EncoderStates orig = Encode(model, g.original.features, g.original.mask);
    task_terms.push_back(task_of(g.original, orig));
    for (const Utterance& u : g.perturbed) {
      const EncoderStates pert = Encode(model, u.features, u.mask);
      task_terms.push_back(task_of(u, pert));
      pif_terms.push_back(PifLoss(orig, pert));
    }
  }

  LossBreakdown out;
  const Tensor task = mean_of(task_terms);
  out.task_loss = task.item();
  out.total_tensor = task;
  if (!pif_terms.empty()) {
    const Tensor pif_mean = mean_of(pif_terms);
    out.pif_loss = pif_mean.item();
    // The PIF graph joins the objective only for a positive weight, so
    // weight 0 gives exactly the task-loss gradients.
    if (pif.weight > 0.0) out.total_tensor = Add(task, Scale(pif_mean, pif.weight));
  }
  out.total = out.total_tensor.item();
  return out;
}

}  // namespace kasr
