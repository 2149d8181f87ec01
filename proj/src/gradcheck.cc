// kasr/gradcheck.cc

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

#include "kasr/gradcheck.h"

#include <functional>

#include "kasr/autodiff.h"
#include "kasr/common.h"
#include "kasr/losses.h"
#include "kasr/model.h"

namespace kasr {

namespace {

Tensor Random(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(NumElements(shape));
  for (double& x : v) x = scale * rng.Normal();
  return Tensor::Constant(std::move(shape), std::move(v));
}

// Reduces a tensor to a scalar through fixed random weights so that every
// output coordinate reaches the loss with a different sensitivity.
std::function<Tensor(const Tensor&)> Weighted(Rng& rng, const Shape& shape) {
  const Tensor w = Random(rng, shape);
  return [w](const Tensor& t) { return SumAll(Mul(t, w)); };
}

class Suite {
 public:
  Suite(uint64_t seed, double eps) : rng_(seed), eps_(eps) {}

  // Checks op(x) against finite differences in x.
  void Unary(const std::string& name, const Shape& in, const std::function<Tensor(const Tensor&)>& op,
             double scale = 1.0) {
    const Tensor x = Random(rng_, in, scale);
    const Shape out = op(x).shape();
    if (out.empty()) {
      Record(name, GradCheck(op, x, eps_));
      return;
    }
    auto reduce = Weighted(rng_, out);
    Record(name, GradCheck([&](const Tensor& t) { return reduce(op(t)); }, x, eps_));
  }

  // Checks op(a, b) in each argument with the other held fixed.
  void Binary(const std::string& name, const Shape& sa, const Shape& sb,
              const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
    const Tensor a = Random(rng_, sa), b = Random(rng_, sb);
    auto reduce = Weighted(rng_, op(a, b).shape());
    Record(name + "/a", GradCheck([&](const Tensor& t) { return reduce(op(t, b)); }, a, eps_));
    Record(name + "/b", GradCheck([&](const Tensor& t) { return reduce(op(a, t)); }, b, eps_));
  }

  // Checks a scalar model loss in every parameter tensor; one record per
  // model with the worst tensor.
  void ModelLoss(const std::string& name, Model model, const std::function<Tensor(const Model&)>& loss) {
    double worst = 0.0;
    for (const std::string& pname : model.params().Names()) {
      const Tensor saved = model.params().Get(pname);
      const double err = GradCheck(
          [&](const Tensor& p) {
            model.params().Set(pname, p);
            return loss(model);
          },
          saved, eps_);
      model.params().Set(pname, saved);
      worst = std::max(worst, err);
    }
    Record(name, worst);
  }

  Rng& rng() { return rng_; }
  std::vector<GradCheckResult> results() const { return results_; }

 private:
  void Record(const std::string& name, double err) { results_.push_back({name, err}); }

  Rng rng_;
  double eps_;
  std::vector<GradCheckResult> results_;
};

FeatureMatrix RandomFeatures(Rng& rng, int frames, int bins) {
  FeatureMatrix f;
  f.num_frames = frames;
  f.num_bins = bins;
  f.values.resize(static_cast<size_t>(frames) * bins);
  for (double& v : f.values) v = rng.Normal();
  return f;
}

ModelConfig Miniature(ModelMode mode) {
  ModelConfig c;
  c.mode = mode;
  c.d_model = 8;
  c.n_heads = 2;
  c.enc_layers = 1;
  c.dec_layers = mode == ModelMode::kEncDec ? 1 : 0;
  c.ffn_dim = 12;
  c.n_mels = 4;
  c.vocab_size = 7;
  c.max_len = 32;
  c.frame_stack = 2;
  return c;
}

PeftConfig MiniPeft(PeftMethod method) {
  PeftConfig p;
  p.method = method;
  p.lora_rank = 2;
  p.adapter_bottleneck = 3;
  p.prompts_enc = 2;
  p.prompts_dec = 2;
  p.prefix_enc = 2;
  p.prefix_dec = 2;
  return p;
}

// The model's own initialisation plus a small jitter: zero-initialised
// PEFT factors would otherwise hide the gradients of their partners, while
// large perturbations saturate the attention and push some gradients below
// what finite differences can resolve.
Model Jittered(Model model, Rng& rng) {
  for (const std::string& name : model.params().Names()) {
    const Tensor& v = model.params().Get(name);
    std::vector<double> x = v.values();
    for (double& e : x) e += 0.05 * rng.Normal();
    model.params().Set(name, Tensor::Constant(v.shape(), std::move(x)));
  }
  return model;
}

}  // namespace

std::vector<GradCheckResult> RunGradCheckSuite(uint64_t seed, double eps) {
  Suite s(seed, eps);
  s.Binary("matmul", {3, 4}, {4, 2}, MatMul);
  s.Binary("add", {3, 4}, {3, 4}, Add);
  s.Binary("add_bias", {3, 4}, {4}, Add);
  s.Binary("sub", {3, 4}, {3, 4}, Sub);
  s.Binary("mul", {3, 4}, {3, 4}, Mul);
  s.Unary("scale", {3, 4}, [](const Tensor& t) { return Scale(t, -1.7); });
  s.Unary("transpose", {3, 4}, Transpose);
  s.Binary("concat0", {2, 3}, {4, 3}, [](const Tensor& a, const Tensor& b) { return Concat({a, b}, 0); });
  s.Binary("concat1", {3, 2}, {3, 4}, [](const Tensor& a, const Tensor& b) { return Concat({a, b}, 1); });
  s.Unary("slice0", {5, 3}, [](const Tensor& t) { return Slice(t, 0, 1, 3); });
  s.Unary("slice1", {3, 5}, [](const Tensor& t) { return Slice(t, 1, 2, 2); });
  s.Unary("softmax", {3, 5}, [](const Tensor& t) { return Softmax(t, 1); });
  s.Unary("softmax_axis0", {3, 5}, [](const Tensor& t) { return Softmax(t, 0); });
  s.Unary("log_softmax", {3, 5}, [](const Tensor& t) { return LogSoftmax(t, 1); });
  {
    Rng& r = s.rng();
    const Tensor g = Random(r, {5}), b = Random(r, {5}), x = Random(r, {3, 5});
    s.Unary("layer_norm/x", {3, 5}, [&](const Tensor& t) { return LayerNorm(t, g, b); });
    s.Unary("layer_norm/gain", {5}, [&](const Tensor& t) { return LayerNorm(x, t, b); });
    s.Unary("layer_norm/bias", {5}, [&](const Tensor& t) { return LayerNorm(x, g, t); });
  }
  s.Unary("gelu", {3, 4}, Gelu, 2.0);
  {
    const std::vector<int> ids{2, 0, 2, 4};
    s.Unary("embedding", {5, 3}, [&](const Tensor& t) { return EmbeddingLookup(t, ids); });
  }
  s.Unary("mean0", {3, 4}, [](const Tensor& t) { return Mean(t, 0); });
  s.Unary("mean1", {3, 4}, [](const Tensor& t) { return Mean(t, 1); });
  s.Unary("sum0", {3, 4}, [](const Tensor& t) { return Sum(t, 0); });
  s.Unary("sum1", {3, 4}, [](const Tensor& t) { return Sum(t, 1); });
  s.Unary("sum_all", {3, 4}, SumAll);
  s.Unary("mean_all", {3, 4}, MeanAll);

  {
    const std::vector<int> target{1, 2, 2, 3};
    s.Unary("ctc_loss", {9, 5}, [&](const Tensor& t) { return CtcLoss(LogSoftmax(t, 1), target, 0); });
    const std::vector<int> next{3, 1, 4};
    s.Unary("seq_ce_loss", {3, 5}, [&](const Tensor& t) { return SeqCeLoss(t, next); });
    Rng& r = s.rng();
    const Tensor other = Random(r, {4, 3});
    const std::vector<uint8_t> va{1, 1, 0, 1, 1}, vb{1, 0, 1, 1};
    s.Unary("pif_loss", {5, 3}, [&](const Tensor& t) {
      return PifLoss(EncoderStates{t, va}, EncoderStates{other, vb});
    });
  }

  // Full objectives of miniature models, including padding and PEFT paths.
  Rng& r = s.rng();
  Utterance orig, pert;
  orig.id = "a";
  orig.features = RandomFeatures(r, 13, 4);
  orig.mask.assign(13, 1);
  orig.mask[11] = orig.mask[12] = 0;
  orig.target = {4, 5, 4};
  pert = orig;
  pert.id = "a#0";
  pert.features = RandomFeatures(r, 12, 4);
  pert.mask.assign(12, 1);
  const std::vector<TrainingGroup> batch{{orig, {pert}}};
  const PifConfig pif{0.5, "mse_pooled"};
  auto objective = [&](const Model& m) { return TotalObjective(m, batch, pif).total_tensor; };

  for (ModelMode mode : {ModelMode::kCtc, ModelMode::kEncDec}) {
    const std::string tag = ModelModeName(mode);
    const ModelConfig cfg = Miniature(mode);
    s.ModelLoss("model/" + tag, Jittered(BuildModel(cfg, seed), r), objective);
    std::vector<PeftMethod> methods{PeftMethod::kLora, PeftMethod::kAdapter, PeftMethod::kPrompt,
                                    PeftMethod::kPrefix};
    for (PeftMethod m : methods)
      s.ModelLoss("model/" + tag + "+" + PeftMethodName(m),
                  Jittered(ApplyPeft(BuildModel(cfg, seed), MiniPeft(m)), r), objective);
  }
  return s.results();
}

}  // namespace kasr
