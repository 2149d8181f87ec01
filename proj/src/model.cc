// kasr/model.cc

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

#include "kasr/model.h"

#include <cmath>

#include "kasr/common.h"

namespace kasr {

namespace {

constexpr double kMasked = -1e30;

std::string L(const std::string& side, int layer) { return side + "." + std::to_string(layer); }

void AddLinearSpecs(std::vector<ParamSpec>& specs, const std::string& prefix, int in, int out) {
  specs.push_back({prefix + ".w", {in, out}, ParamSpec::Init::kNormal, true});
  specs.push_back({prefix + ".b", {out}, ParamSpec::Init::kZeros, true});
}

void AddNormSpecs(std::vector<ParamSpec>& specs, const std::string& prefix, int d) {
  specs.push_back({prefix + ".g", {d}, ParamSpec::Init::kOnes, true});
  specs.push_back({prefix + ".b", {d}, ParamSpec::Init::kZeros, true});
}

void AddAttentionSpecs(std::vector<ParamSpec>& specs, const std::string& prefix, int d) {
  // No key bias: it adds a per-query constant to the scores, which the
  // softmax cancels, so it would never receive a gradient.
  for (const char* p : {"q", "v", "o"}) AddLinearSpecs(specs, prefix + "." + p, d, d);
  specs.push_back({prefix + ".k.w", {d, d}, ParamSpec::Init::kNormal, true});
}

std::vector<std::string> AttentionModules(const ModelConfig& cfg) {
  std::vector<std::string> mods;
  for (int l = 0; l < cfg.enc_layers; ++l) mods.push_back(L("enc", l) + ".attn");
  if (cfg.mode == ModelMode::kEncDec)
    for (int l = 0; l < cfg.dec_layers; ++l) {
      mods.push_back(L("dec", l) + ".self");
      mods.push_back(L("dec", l) + ".cross");
    }
  return mods;
}

bool StartsWith(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

// ---- forward helpers -----------------------------------------------------

class Forward {
 public:
  explicit Forward(const Model& m) : model_(m), p_(m.params()), d_(m.config().d_model) {}

  const Tensor& P(const std::string& name) const { return p_.Get(name); }
  bool Has(const std::string& name) const { return p_.Has(name); }

  Tensor Linear(const Tensor& x, const std::string& prefix) const {
    Tensor y = MatMul(x, P(prefix + ".w"));
    if (Has(prefix + ".b")) y = Add(y, P(prefix + ".b"));
    if (Has(prefix + ".lora_a"))
      y = Add(y, MatMul(MatMul(x, P(prefix + ".lora_a")), P(prefix + ".lora_b")));
    return y;
  }

  Tensor Norm(const Tensor& x, const std::string& prefix) const {
    return LayerNorm(x, P(prefix + ".g"), P(prefix + ".b"));
  }

  // `mask` is (queries × keys) of 0 / kMasked, or undefined for no mask.
  Tensor Attention(const Tensor& q_in, const Tensor& kv_in, const Tensor& mask,
                   const std::string& prefix) const {
    const int heads = model_.config().n_heads;
    const int dh = d_ / heads;
    const Tensor q = Linear(q_in, prefix + ".q");
    const Tensor k = Linear(kv_in, prefix + ".k");
    const Tensor v = Linear(kv_in, prefix + ".v");
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      const Tensor qh = Slice(q, 1, h * dh, dh);
      const Tensor kh = Slice(k, 1, h * dh, dh);
      const Tensor vh = Slice(v, 1, h * dh, dh);
      Tensor scores = Scale(MatMul(qh, Transpose(kh)), scale);
      if (mask.defined()) scores = Add(scores, mask);
      outs.push_back(MatMul(Softmax(scores, 1), vh));
    }
    const Tensor merged = heads == 1 ? outs[0] : Concat(outs, 1);
    return Linear(merged, prefix + ".o");
  }

  Tensor FeedForward(const Tensor& x, const std::string& prefix) const {
    const Tensor h = Gelu(Add(MatMul(x, P(prefix + ".w1")), P(prefix + ".b1")));
    return Add(MatMul(h, P(prefix + ".w2")), P(prefix + ".b2"));
  }

  Tensor MaybeAdapter(const Tensor& x, const std::string& block) const {
    if (!Has(block + ".adapter.down.w")) return x;
    const Tensor down = Gelu(Linear(x, block + ".adapter.down"));
    return Add(x, Linear(down, block + ".adapter.up"));
  }

 private:
  const Model& model_;
  const ParameterStore& p_;
  int d_;
};

// Key mask: rows = queries, cols = keys.
Tensor BuildMask(int queries, std::span<const uint8_t> key_valid, bool causal) {
  const int keys = static_cast<int>(key_valid.size());
  bool any = causal;
  for (uint8_t v : key_valid) any = any || !v;
  if (!any) return Tensor();
  std::vector<double> m(static_cast<size_t>(queries) * keys, 0.0);
  for (int i = 0; i < queries; ++i)
    for (int j = 0; j < keys; ++j) {
      // Queries and keys share indexing (prefix rows included), so query i
      // sees keys 0..i.
      const bool future = causal && j > i;
      if (!key_valid[j] || future) m[static_cast<size_t>(i) * keys + j] = kMasked;
    }
  return Tensor::Constant({queries, keys}, std::move(m));
}

}  // namespace

std::string ModelModeName(ModelMode m) { return m == ModelMode::kCtc ? "ctc" : "enc_dec"; }

ModelMode ParseModelMode(const std::string& s) {
  if (s == "ctc") return ModelMode::kCtc;
  if (s == "enc_dec" || s == "encdec") return ModelMode::kEncDec;
  throw ConfigError("unknown model mode '" + s + "'");
}

ModelConfig ModelConfig::Toy(ModelMode mode) {
  ModelConfig cfg;
  cfg.mode = mode;
  cfg.dec_layers = mode == ModelMode::kEncDec ? 2 : 0;
  return cfg;
}

ModelConfig ModelConfig::FullScale() {
  ModelConfig cfg;
  cfg.mode = ModelMode::kEncDec;
  cfg.d_model = 768;
  cfg.n_heads = 12;
  cfg.enc_layers = 12;
  cfg.dec_layers = 12;
  cfg.ffn_dim = 3072;
  cfg.n_mels = 80;
  cfg.vocab_size = 51865;
  cfg.max_len = 1500;
  cfg.frame_stack = 2;
  return cfg;
}

void ValidateModelConfig(const ModelConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("model: " + msg); };
  if (cfg.d_model <= 0 || cfg.n_heads <= 0) fail("d_model and n_heads must be positive");
  if (cfg.d_model % cfg.n_heads != 0) fail("d_model must be divisible by n_heads");
  if (cfg.enc_layers < 0 || cfg.dec_layers < 0) fail("layer counts must be non-negative");
  if (cfg.ffn_dim <= 0 || cfg.n_mels <= 0 || cfg.max_len <= 0 || cfg.frame_stack <= 0)
    fail("ffn_dim, n_mels, max_len and frame_stack must be positive");
  if (cfg.mode == ModelMode::kCtc && cfg.dec_layers != 0) fail("ctc mode requires dec_layers = 0");
  if (cfg.mode == ModelMode::kEncDec && cfg.dec_layers == 0) fail("enc_dec mode requires dec_layers > 0");
  // blank (ctc) or bos + eos (enc_dec) plus at least one symbol.
  if (cfg.vocab_size < (cfg.mode == ModelMode::kCtc ? 2 : 3)) fail("vocab_size too small for reserved symbols");
}

std::string PeftMethodName(PeftMethod m) {
  switch (m) {
    case PeftMethod::kFull: return "full";
    case PeftMethod::kEncoderOnly: return "encoder_only";
    case PeftMethod::kDecoderOnly: return "decoder_only";
    case PeftMethod::kLora: return "lora";
    case PeftMethod::kAdapter: return "adapter";
    case PeftMethod::kPrompt: return "prompt";
    case PeftMethod::kPrefix: return "prefix";
  }
  return "full";
}

PeftMethod ParsePeftMethod(const std::string& s) {
  for (PeftMethod m : {PeftMethod::kFull, PeftMethod::kEncoderOnly, PeftMethod::kDecoderOnly, PeftMethod::kLora,
                       PeftMethod::kAdapter, PeftMethod::kPrompt, PeftMethod::kPrefix})
    if (PeftMethodName(m) == s) return m;
  if (s == "enc") return PeftMethod::kEncoderOnly;
  if (s == "dec") return PeftMethod::kDecoderOnly;
  throw ConfigError("unknown PEFT method '" + s + "'");
}

PeftConfig PeftConfig::Toy(PeftMethod method) {
  PeftConfig cfg;
  cfg.method = method;
  cfg.prompts_enc = 8;
  cfg.prompts_dec = 4;
  cfg.prefix_enc = 4;
  cfg.prefix_dec = 2;
  return cfg;
}

void ValidatePeftConfig(const PeftConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("peft: " + msg); };
  switch (cfg.method) {
    case PeftMethod::kLora:
      if (cfg.lora_rank <= 0) fail("lora_rank must be positive");
      if (!cfg.lora_query && !cfg.lora_value) fail("lora needs at least one target");
      break;
    case PeftMethod::kAdapter:
      if (cfg.adapter_bottleneck <= 0) fail("adapter_bottleneck must be positive");
      break;
    case PeftMethod::kPrompt:
      if (cfg.prompts_enc <= 0 || cfg.prompts_dec <= 0) fail("prompt counts must be positive");
      break;
    case PeftMethod::kPrefix:
      if (cfg.prefix_enc <= 0 || cfg.prefix_dec <= 0) fail("prefix counts must be positive");
      break;
    default:
      break;
  }
}

std::vector<ParamSpec> BaseParamSpecs(const ModelConfig& cfg) {
  ValidateModelConfig(cfg);
  const int d = cfg.d_model;
  std::vector<ParamSpec> specs;
  AddLinearSpecs(specs, "enc.in", cfg.n_mels * cfg.frame_stack, d);
  auto add_ffn = [&](const std::string& prefix) {
    specs.push_back({prefix + ".w1", {d, cfg.ffn_dim}, ParamSpec::Init::kNormal, true});
    specs.push_back({prefix + ".b1", {cfg.ffn_dim}, ParamSpec::Init::kZeros, true});
    specs.push_back({prefix + ".w2", {cfg.ffn_dim, d}, ParamSpec::Init::kNormal, true});
    specs.push_back({prefix + ".b2", {d}, ParamSpec::Init::kZeros, true});
  };
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string b = L("enc", l);
    AddNormSpecs(specs, b + ".ln1", d);
    AddAttentionSpecs(specs, b + ".attn", d);
    AddNormSpecs(specs, b + ".ln2", d);
    add_ffn(b + ".ffn");
  }
  if (cfg.mode == ModelMode::kCtc) {
    AddNormSpecs(specs, "ctc.ln", d);
    AddLinearSpecs(specs, "ctc.out", d, cfg.vocab_size);
  } else {
    specs.push_back({"dec.embed", {cfg.vocab_size, d}, ParamSpec::Init::kEmbedding, true});
    AddNormSpecs(specs, "dec.mem_norm", d);
    for (int l = 0; l < cfg.dec_layers; ++l) {
      const std::string b = L("dec", l);
      AddNormSpecs(specs, b + ".ln1", d);
      AddAttentionSpecs(specs, b + ".self", d);
      AddNormSpecs(specs, b + ".ln2", d);
      AddAttentionSpecs(specs, b + ".cross", d);
      AddNormSpecs(specs, b + ".ln3", d);
      add_ffn(b + ".ffn");
    }
    AddNormSpecs(specs, "dec.ln_f", d);
    AddLinearSpecs(specs, "dec.out", d, cfg.vocab_size);
  }
  return specs;
}

std::vector<ParamSpec> PeftParamSpecs(const ModelConfig& cfg, const PeftConfig& peft) {
  ValidatePeftConfig(peft);
  const int d = cfg.d_model;
  const bool enc_dec = cfg.mode == ModelMode::kEncDec;
  std::vector<ParamSpec> specs;
  switch (peft.method) {
    case PeftMethod::kLora:
      for (const std::string& mod : AttentionModules(cfg)) {
        for (const char* target : {"q", "v"}) {
          if ((target[0] == 'q' && !peft.lora_query) || (target[0] == 'v' && !peft.lora_value)) continue;
          const std::string p = mod + "." + target;
          specs.push_back({p + ".lora_a", {d, peft.lora_rank}, ParamSpec::Init::kNormal, true});
          specs.push_back({p + ".lora_b", {peft.lora_rank, d}, ParamSpec::Init::kZeros, true});
        }
      }
      break;
    case PeftMethod::kAdapter: {
      auto add = [&](const std::string& block) {
        AddLinearSpecs(specs, block + ".adapter.down", d, peft.adapter_bottleneck);
        specs.push_back({block + ".adapter.up.w", {peft.adapter_bottleneck, d}, ParamSpec::Init::kZeros, true});
        specs.push_back({block + ".adapter.up.b", {d}, ParamSpec::Init::kZeros, true});
      };
      for (int l = 0; l < cfg.enc_layers; ++l) add(L("enc", l));
      if (enc_dec)
        for (int l = 0; l < cfg.dec_layers; ++l) add(L("dec", l));
      break;
    }
    case PeftMethod::kPrompt:
      specs.push_back({"enc.prompt", {peft.prompts_enc, d}, ParamSpec::Init::kEmbedding, true});
      if (enc_dec) specs.push_back({"dec.prompt", {peft.prompts_dec, d}, ParamSpec::Init::kEmbedding, true});
      break;
    case PeftMethod::kPrefix:
      for (int l = 0; l < cfg.enc_layers; ++l)
        specs.push_back({L("enc", l) + ".prefix", {peft.prefix_enc, d}, ParamSpec::Init::kEmbedding, true});
      if (enc_dec)
        for (int l = 0; l < cfg.dec_layers; ++l)
          specs.push_back({L("dec", l) + ".prefix", {peft.prefix_dec, d}, ParamSpec::Init::kEmbedding, true});
      break;
    default:
      break;
  }
  return specs;
}

bool BaseParamTrainable(const std::string& name, const PeftConfig& peft) {
  switch (peft.method) {
    case PeftMethod::kFull: return true;
    case PeftMethod::kEncoderOnly: return StartsWith(name, "enc.");
    // In ctc mode the decoder side is the CTC head.
    case PeftMethod::kDecoderOnly: return !StartsWith(name, "enc.");
    default: return false;
  }
}

namespace {

Tensor InitTensor(const ParamSpec& spec, Rng& rng) {
  const size_t n = NumElements(spec.shape);
  std::vector<double> v(n, 0.0);
  switch (spec.init) {
    case ParamSpec::Init::kZeros: break;
    case ParamSpec::Init::kOnes: std::fill(v.begin(), v.end(), 1.0); break;
    case ParamSpec::Init::kNormal: {
      const double std = 1.0 / std::sqrt(static_cast<double>(spec.shape[0]));
      for (double& x : v) x = std * rng.Normal();
      break;
    }
    case ParamSpec::Init::kEmbedding:
      for (double& x : v) x = rng.Normal();
      break;
  }
  return Tensor::Leaf(spec.shape, std::move(v));
}

}  // namespace

Model BuildModel(const ModelConfig& cfg, uint64_t seed) {
  Model model;
  model.config_ = cfg;
  model.seed_ = seed;
  Rng rng(seed);
  for (const ParamSpec& spec : BaseParamSpecs(cfg)) model.params_.Add(spec.name, InitTensor(spec, rng));
  return model;
}

Model ApplyPeft(Model model, const PeftConfig& peft) {
  if (model.peft_) throw StateError("PEFT already applied (" + PeftMethodName(model.peft_->method) + ")");
  ValidatePeftConfig(peft);
  for (const std::string& name : model.params_.Names())
    model.params_.SetTrainable(name, BaseParamTrainable(name, peft));
  for (const ParamSpec& spec : PeftParamSpecs(model.config_, peft)) {
    Rng rng(DeriveSeed(model.seed_, "peft:" + spec.name));
    model.params_.Add(spec.name, InitTensor(spec, rng), true);
  }
  model.peft_ = peft;
  return model;
}

size_t CountTrainableParams(const Model& model) { return model.params().TrainableElements(); }

size_t CountTrainableParams(const ModelConfig& cfg, const std::optional<PeftConfig>& peft) {
  size_t n = 0;
  for (const ParamSpec& s : BaseParamSpecs(cfg))
    if (!peft || BaseParamTrainable(s.name, *peft)) n += NumElements(s.shape);
  if (peft)
    for (const ParamSpec& s : PeftParamSpecs(cfg, *peft)) n += NumElements(s.shape);
  return n;
}

size_t CountTotalParams(const ModelConfig& cfg, const std::optional<PeftConfig>& peft) {
  size_t n = 0;
  for (const ParamSpec& s : BaseParamSpecs(cfg)) n += NumElements(s.shape);
  if (peft)
    for (const ParamSpec& s : PeftParamSpecs(cfg, *peft)) n += NumElements(s.shape);
  return n;
}

int EncoderStates::NumValid() const {
  int n = 0;
  for (uint8_t v : valid) n += v ? 1 : 0;
  return n;
}

std::vector<double> SinusoidalPositions(int len, int d) {
  std::vector<double> pe(static_cast<size_t>(len) * d);
  for (int pos = 0; pos < len; ++pos)
    for (int i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
      pe[static_cast<size_t>(pos) * d + i] = std::sin(pos * freq);
      if (i + 1 < d) pe[static_cast<size_t>(pos) * d + i + 1] = std::cos(pos * freq);
    }
  return pe;
}

EncoderStates Encode(const Model& model, const FeatureMatrix& feat, std::span<const uint8_t> pad_mask) {
  const ModelConfig& cfg = model.config();
  if (feat.num_bins != cfg.n_mels)
    throw ShapeError("encode: features have " + std::to_string(feat.num_bins) + " bins, model expects " +
                     std::to_string(cfg.n_mels));
  if (!pad_mask.empty() && static_cast<int>(pad_mask.size()) != feat.num_frames)
    throw ShapeError("encode: mask length " + std::to_string(pad_mask.size()) + " != frames " +
                     std::to_string(feat.num_frames));
  const int stack = cfg.frame_stack;
  const int positions = feat.num_frames / stack;
  if (positions == 0) throw LengthError("encode: fewer frames than one stacked position");
  const auto& peft = model.peft();
  const int prompts = peft && peft->method == PeftMethod::kPrompt ? peft->prompts_enc : 0;
  const int prefix = peft && peft->method == PeftMethod::kPrefix ? peft->prefix_enc : 0;
  if (positions + prompts > cfg.max_len)
    throw LengthError("encode: " + std::to_string(positions) + " positions + " + std::to_string(prompts) +
                      " prompts exceed max_len " + std::to_string(cfg.max_len));

  const int in_dim = cfg.n_mels * stack;
  std::vector<double> stacked(static_cast<size_t>(positions) * in_dim);
  EncoderStates out;
  out.valid.assign(positions, 1);
  for (int p = 0; p < positions; ++p)
    for (int s = 0; s < stack; ++s) {
      const int t = p * stack + s;
      if (!pad_mask.empty() && !pad_mask[t]) out.valid[p] = 0;
      std::copy_n(feat.values.begin() + static_cast<size_t>(t) * cfg.n_mels, cfg.n_mels,
                  stacked.begin() + static_cast<size_t>(p) * in_dim + static_cast<size_t>(s) * cfg.n_mels);
    }

  Forward fw(model);
  const int d = cfg.d_model;
  Tensor x = fw.Linear(Tensor::Constant({positions, in_dim}, std::move(stacked)), "enc.in");
  if (prompts > 0) x = Concat({fw.P("enc.prompt"), x}, 0);
  const int len = positions + prompts;
  x = Add(x, Tensor::Constant({len, d}, SinusoidalPositions(len, d)));

  std::vector<uint8_t> keys(prompts, 1);
  keys.insert(keys.end(), out.valid.begin(), out.valid.end());
  std::vector<uint8_t> prefixed_keys(prefix, 1);
  prefixed_keys.insert(prefixed_keys.end(), keys.begin(), keys.end());
  const Tensor mask = BuildMask(len + prefix, prefixed_keys, false);

  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string b = L("enc", l);
    Tensor h = prefix > 0 ? Concat({fw.P(b + ".prefix"), x}, 0) : x;
    const Tensor a = fw.Norm(h, b + ".ln1");
    h = Add(h, fw.Attention(a, a, mask, b + ".attn"));
    h = Add(h, fw.FeedForward(fw.Norm(h, b + ".ln2"), b + ".ffn"));
    if (prefix > 0) h = Slice(h, 0, prefix, len);
    x = fw.MaybeAdapter(h, b);
  }
  out.states = prompts > 0 ? Slice(x, 0, prompts, positions) : x;
  return out;
}

std::vector<EncoderStates> EncodeBatch(const Model& model, std::span<const FeatureMatrix> feats,
                                       std::span<const std::vector<uint8_t>> masks) {
  if (!masks.empty() && masks.size() != feats.size())
    throw ShapeError("encode_batch: " + std::to_string(masks.size()) + " masks for " +
                     std::to_string(feats.size()) + " utterances");
  std::vector<EncoderStates> out;
  out.reserve(feats.size());
  for (size_t i = 0; i < feats.size(); ++i)
    out.push_back(Encode(model, feats[i], masks.empty() ? std::span<const uint8_t>() : std::span<const uint8_t>(masks[i])));
  return out;
}

Tensor CtcLogProbs(const Model& model, const EncoderStates& enc) {
  if (model.config().mode != ModelMode::kCtc) throw ModeError("ctc head requested from an enc_dec model");
  Forward fw(model);
  const int valid = enc.NumValid();
  for (int i = 0; i < valid; ++i)
    if (!enc.valid[i]) throw ShapeError("ctc head: padding must be a suffix of the sequence");
  const Tensor states = valid == enc.states.dim(0) ? enc.states : Slice(enc.states, 0, 0, valid);
  return LogSoftmax(fw.Linear(fw.Norm(states, "ctc.ln"), "ctc.out"), 1);
}

Tensor DecodeTeacherForced(const Model& model, const EncoderStates& enc, std::span<const int> prefix_ids) {
  const ModelConfig& cfg = model.config();
  if (cfg.mode != ModelMode::kEncDec) throw ModeError("teacher-forced decoding requires enc_dec mode");
  if (prefix_ids.empty()) throw ArgumentError("decoder prefix must contain at least the bos token");
  const auto& peft = model.peft();
  const int prompts = peft && peft->method == PeftMethod::kPrompt ? peft->prompts_dec : 0;
  const int prefix = peft && peft->method == PeftMethod::kPrefix ? peft->prefix_dec : 0;
  const int tokens = static_cast<int>(prefix_ids.size());
  const int len = tokens + prompts;
  if (len > cfg.max_len)
    throw LengthError("decode: " + std::to_string(len) + " positions exceed max_len " + std::to_string(cfg.max_len));

  Forward fw(model);
  const int d = cfg.d_model;
  Tensor x = EmbeddingLookup(fw.P("dec.embed"), prefix_ids);
  if (prompts > 0) x = Concat({fw.P("dec.prompt"), x}, 0);
  x = Add(x, Tensor::Constant({len, d}, SinusoidalPositions(len, d)));

  const Tensor memory = fw.Norm(enc.states, "dec.mem_norm");
  const std::vector<uint8_t> all_valid(len + prefix, 1);
  const Tensor self_mask = BuildMask(len + prefix, all_valid, true);
  const Tensor cross_mask = BuildMask(len + prefix, enc.valid, false);

  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string b = L("dec", l);
    Tensor h = prefix > 0 ? Concat({fw.P(b + ".prefix"), x}, 0) : x;
    const Tensor a = fw.Norm(h, b + ".ln1");
    h = Add(h, fw.Attention(a, a, self_mask, b + ".self"));
    h = Add(h, fw.Attention(fw.Norm(h, b + ".ln2"), memory, cross_mask, b + ".cross"));
    h = Add(h, fw.FeedForward(fw.Norm(h, b + ".ln3"), b + ".ffn"));
    if (prefix > 0) h = Slice(h, 0, prefix, len);
    x = fw.MaybeAdapter(h, b);
  }
  if (prompts > 0) x = Slice(x, 0, prompts, tokens);
  return fw.Linear(fw.Norm(x, "dec.ln_f"), "dec.out");
}

}  // namespace kasr
