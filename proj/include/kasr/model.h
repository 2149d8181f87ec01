// kasr/model.h

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

// A small pre-norm transformer recogniser in two modes:
//   ctc      encoder + layer-norm + linear head, trained with CTC;
//   enc_dec  encoder + causal decoder with cross-attention, trained with
//            next-token cross-entropy.
// Parameter-efficient finetuning methods (LoRA, residual adapters, prompt
// and prefix tuning, encoder/decoder-only) are injected by ApplyPeft().
//
// Parameter names:
//   enc.in.{w,b}                       stacked-fbank input projection
//   enc.<l>.{ln1,ln2}.{g,b}            block norms
//   enc.<l>.attn.{q,k,v,o}.{w,b}       self-attention (k has no bias)
//   enc.<l>.ffn.{w1,b1,w2,b2}
//   dec.embed, dec.mem_norm.{g,b}, dec.ln_f.{g,b}, dec.out.{w,b}
//   dec.<l>.{self,cross}.{q,k,v,o}.{w,b} (no k.b), dec.<l>.{ln1,ln2,ln3}.{g,b}
//   ctc.ln.{g,b}, ctc.out.{w,b}
// PEFT additions: <attn>.{q,v}.lora_{a,b}, <block>.adapter.{down,up}.{w,b},
//   enc.prompt, dec.prompt, enc.<l>.prefix, dec.<l>.prefix.

#ifndef KASR_MODEL_H_
#define KASR_MODEL_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kasr/autodiff.h"
#include "kasr/signal.h"

namespace kasr {

enum class ModelMode { kCtc, kEncDec };

std::string ModelModeName(ModelMode m);
ModelMode ParseModelMode(const std::string& s);

struct ModelConfig {
  ModelMode mode = ModelMode::kCtc;
  int d_model = 64;
  int n_heads = 4;
  int enc_layers = 2;
  int dec_layers = 0;
  int ffn_dim = 128;
  int n_mels = 16;
  int vocab_size = 30;
  int max_len = 256;
  /// Consecutive fbank frames concatenated into one encoder position.
  int frame_stack = 1;

  /// d=64, 4 heads, ffn 128, 16 mels, max_len 256; 2 encoder layers and,
  /// in enc_dec mode, 2 decoder layers.
  static ModelConfig Toy(ModelMode mode);
  /// Whisper-small-shaped: d=768, 12 heads, 12+12 layers, ffn 3072,
  /// 80 mels, 51865 tokens.
  static ModelConfig FullScale();
};

/// Throws ConfigError describing the first violated invariant.
void ValidateModelConfig(const ModelConfig& cfg);

enum class PeftMethod { kFull, kEncoderOnly, kDecoderOnly, kLora, kAdapter, kPrompt, kPrefix };

std::string PeftMethodName(PeftMethod m);
PeftMethod ParsePeftMethod(const std::string& s);

struct PeftConfig {
  PeftMethod method = PeftMethod::kFull;
  int lora_rank = 8;
  bool lora_query = true;
  bool lora_value = true;
  int adapter_bottleneck = 32;
  int prompts_enc = 100;
  int prompts_dec = 20;
  int prefix_enc = 50;
  int prefix_dec = 10;

  /// Same method with the desk-scale prompt/prefix counts (8/4 and 4/2).
  static PeftConfig Toy(PeftMethod method);
};

void ValidatePeftConfig(const PeftConfig& cfg);

/// One parameter as declared by the architecture, before allocation.
struct ParamSpec {
  enum class Init { kNormal, kZeros, kOnes, kEmbedding };
  std::string name;
  Shape shape;
  Init init = Init::kNormal;
  bool trainable = true;
};

/// Base-model parameters (all trainable).
std::vector<ParamSpec> BaseParamSpecs(const ModelConfig& cfg);
/// Parameters injected by `peft` (LoRA factors, adapters, prompts, ...).
std::vector<ParamSpec> PeftParamSpecs(const ModelConfig& cfg, const PeftConfig& peft);
/// Whether a base parameter stays trainable under `peft`.
bool BaseParamTrainable(const std::string& name, const PeftConfig& peft);

class Model {
 public:
  const ModelConfig& config() const { return config_; }
  const std::optional<PeftConfig>& peft() const { return peft_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  uint64_t seed() const { return seed_; }

 private:
  friend Model BuildModel(const ModelConfig& cfg, uint64_t seed);
  friend Model ApplyPeft(Model model, const PeftConfig& peft);

  ModelConfig config_;
  std::optional<PeftConfig> peft_;
  ParameterStore params_;
  uint64_t seed_ = 0;
};

/// Scaled-normal initialisation (std 1/sqrt(fan_in)) from `seed`.
Model BuildModel(const ModelConfig& cfg, uint64_t seed);
/// Injects `peft` and freezes the base model accordingly.  Throws
/// StateError if the model already carries a PEFT configuration.
Model ApplyPeft(Model model, const PeftConfig& peft);
size_t CountTrainableParams(const Model& model);
/// Closed-form count from the declared parameter shapes; no allocation, so
/// usable for full-scale configurations.
size_t CountTrainableParams(const ModelConfig& cfg, const std::optional<PeftConfig>& peft);
size_t CountTotalParams(const ModelConfig& cfg, const std::optional<PeftConfig>& peft);

/// Encoder output, one row per encoder position.
struct EncoderStates {
  Tensor states;
  /// 1 for positions built only from valid frames.
  std::vector<uint8_t> valid;

  int NumValid() const;
};

/// `pad_mask` marks valid frames (empty = all valid).  Positions stack
/// `frame_stack` frames; a trailing partial stack is dropped.  Throws
/// LengthError when positions (plus prompts) exceed max_len.
EncoderStates Encode(const Model& model, const FeatureMatrix& feat,
                     std::span<const uint8_t> pad_mask = {});
std::vector<EncoderStates> EncodeBatch(const Model& model, std::span<const FeatureMatrix> feats,
                                       std::span<const std::vector<uint8_t>> masks);

/// CTC head over the valid encoder positions: (valid × vocab) log-probs.
Tensor CtcLogProbs(const Model& model, const EncoderStates& enc);

/// Causal decoder logits (len × vocab) for `prefix` (starting with bos).
/// Throws ModeError in ctc mode.
Tensor DecodeTeacherForced(const Model& model, const EncoderStates& enc,
                           std::span<const int> prefix);

/// Sinusoidal position table (len × d).
std::vector<double> SinusoidalPositions(int len, int d);

}  // namespace kasr

#endif  // KASR_MODEL_H_
