// kasr/runner.cc

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

#include "kasr/runner.h"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include "kasr/checkpoint.h"

namespace kasr {

using nlohmann::json;

namespace {

// Typed field access with the dotted path in every error message.  Unknown
// keys are rejected so that typos do not silently fall back to defaults.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(Where("") + "expected an object");
  }

  template <typename T>
  T Get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return fallback;
    return Convert<T>(j_[key], key);
  }

  template <typename T>
  T Required(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) throw ConfigError(Where(key) + "required");
    return Convert<T>(j_[key], key);
  }

  bool Has(const std::string& key) const { return j_.contains(key) && !j_[key].is_null(); }

  Section Child(const std::string& key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    return Section(Has(key) ? j_[key] : kEmpty, path_.empty() ? key : path_ + "." + key);
  }

  void CheckUnknown() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(Where(key) + "unknown field");
  }

  std::string Where(const std::string& key) const {
    std::string p = path_;
    if (!key.empty()) p = p.empty() ? key : p + "." + key;
    return (p.empty() ? std::string("config") : p) + ": ";
  }

 private:
  template <typename T>
  T Convert(const json& v, const std::string& key) const {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(Where(key) + "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(Where(key) + "expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<int64_t>() < 0)
            throw ConfigError(Where(key) + "expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(Where(key) + "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(Where(key) + "expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(Where(key) + e.what());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void Check(bool ok, const std::string& where, F&& msg) {
  if (!ok) throw ConfigError(where + ": " + msg());
}

ModelConfig ParseModel(Section s) {
  const ModelMode mode = [&] {
    try {
      return ParseModelMode(s.Get<std::string>("mode", "ctc"));
    } catch (const Error& e) {
      throw ConfigError(s.Where("mode") + e.what());
    }
  }();
  ModelConfig m = ModelConfig::Toy(mode);
  m.d_model = s.Get("d_model", m.d_model);
  m.n_heads = s.Get("n_heads", m.n_heads);
  m.enc_layers = s.Get("enc_layers", m.enc_layers);
  m.dec_layers = s.Get("dec_layers", m.dec_layers);
  m.ffn_dim = s.Get("ffn_dim", m.ffn_dim);
  m.n_mels = s.Get("n_mels", m.n_mels);
  m.vocab_size = s.Get("vocab_size", 0);
  m.max_len = s.Get("max_len", m.max_len);
  m.frame_stack = s.Get("frame_stack", m.frame_stack);
  s.CheckUnknown();
  return m;
}

PeftConfig ParsePeft(Section s) {
  PeftConfig p;
  try {
    p.method = ParsePeftMethod(s.Get<std::string>("method", "full"));
  } catch (const Error& e) {
    throw ConfigError(s.Where("method") + e.what());
  }
  p.lora_rank = s.Get("lora_rank", p.lora_rank);
  p.lora_query = s.Get("lora_query", p.lora_query);
  p.lora_value = s.Get("lora_value", p.lora_value);
  p.adapter_bottleneck = s.Get("adapter_bottleneck", p.adapter_bottleneck);
  p.prompts_enc = s.Get("prompts_enc", p.prompts_enc);
  p.prompts_dec = s.Get("prompts_dec", p.prompts_dec);
  p.prefix_enc = s.Get("prefix_enc", p.prefix_enc);
  p.prefix_dec = s.Get("prefix_dec", p.prefix_dec);
  s.CheckUnknown();
  return p;
}

AugmentPolicy ParseAugment(Section s) {
  AugmentPolicy a;
  try {
    a.method = ParseAugmentMethod(s.Get<std::string>("method", "none"));
  } catch (const Error& e) {
    throw ConfigError(s.Where("method") + e.what());
  }
  a.copies = s.Get("copies", a.copies);
  Section sa = s.Child("spec_augment");
  a.spec_augment.n_freq_masks = sa.Get("n_freq_masks", a.spec_augment.n_freq_masks);
  a.spec_augment.max_freq_width = sa.Get("max_freq_width", a.spec_augment.max_freq_width);
  a.spec_augment.n_time_masks = sa.Get("n_time_masks", a.spec_augment.n_time_masks);
  a.spec_augment.max_time_fraction = sa.Get("max_time_fraction", a.spec_augment.max_time_fraction);
  if (sa.Has("mask_value")) a.spec_augment.mask_value = sa.Get("mask_value", 0.0);
  else sa.Get<double>("mask_value", 0.0);
  sa.CheckUnknown();
  s.CheckUnknown();
  return a;
}

}  // namespace

ExperimentConfig ParseConfig(const json& j, bool check_files) {
  Section root(j, "");
  ExperimentConfig cfg;
  cfg.name = root.Get<std::string>("name", cfg.name);
  cfg.output_dir = root.Get<std::string>("output_dir", "runs/" + cfg.name);
  cfg.model = ParseModel(root.Child("model"));
  cfg.peft = ParsePeft(root.Child("peft"));
  cfg.augment = ParseAugment(root.Child("augment"));

  // No pif section: PIF off.  A section without a weight gets the default.
  const bool has_pif = root.Has("pif");
  Section pif = root.Child("pif");
  cfg.pif.weight = pif.Get("weight", has_pif ? cfg.pif.weight : 0.0);
  cfg.pif.distance = pif.Get<std::string>("distance", cfg.pif.distance);
  pif.CheckUnknown();

  Section data = root.Child("data");
  cfg.data.train = data.Get<std::string>("train", "");
  cfg.data.dev = data.Get<std::string>("dev", "");
  cfg.data.test = data.Get<std::string>("test", "");
  cfg.data.manifest = data.Get<std::string>("manifest", "");
  Section filter = data.Child("filter");
  cfg.data.filter.max_wer = filter.Get("max_wer", cfg.data.filter.max_wer);
  cfg.data.filter.min_words = filter.Get("min_words", cfg.data.filter.min_words);
  cfg.data.filter.max_duration_s = filter.Get("max_duration_s", cfg.data.filter.max_duration_s);
  filter.CheckUnknown();
  Section split = data.Child("split");
  cfg.data.split.fractions = split.Get("fractions", cfg.data.split.fractions);
  cfg.data.split.seed = split.Get("seed", cfg.data.split.seed);
  split.CheckUnknown();
  data.CheckUnknown();

  Section train = root.Child("train");
  cfg.train.steps = train.Get("steps", cfg.train.steps);
  cfg.train.batch_size = train.Get("batch_size", cfg.train.batch_size);
  cfg.train.adam.lr = train.Get("lr", cfg.train.adam.lr);
  cfg.train.adam.beta1 = train.Get("beta1", cfg.train.adam.beta1);
  cfg.train.adam.beta2 = train.Get("beta2", cfg.train.adam.beta2);
  cfg.train.adam.eps = train.Get("adam_eps", cfg.train.adam.eps);
  cfg.train.adam.weight_decay = train.Get("weight_decay", cfg.train.adam.weight_decay);
  cfg.train.adam.max_grad_norm = train.Get("max_grad_norm", cfg.train.adam.max_grad_norm);
  cfg.train.seed = train.Required<uint64_t>("seed");
  cfg.train.eval_interval = train.Get("eval_interval", cfg.train.eval_interval);
  cfg.train.checkpoint_interval = train.Get("checkpoint_interval", cfg.train.checkpoint_interval);
  cfg.train.stop_at_zero_train_wer = train.Get("stop_at_zero_train_wer", cfg.train.stop_at_zero_train_wer);
  cfg.train.init_checkpoint = train.Get<std::string>("init_checkpoint", "");
  train.CheckUnknown();

  Section eval = root.Child("eval");
  if (eval.Has("splits")) {
    cfg.eval.splits = eval.Get("splits", cfg.eval.splits);
  } else if (cfg.data.manifest.empty()) {
    // Default: the held-out splits that exist, else the training data.
    cfg.eval.splits.clear();
    if (!cfg.data.dev.empty()) cfg.eval.splits.push_back("dev");
    if (!cfg.data.test.empty()) cfg.eval.splits.push_back("test");
    if (cfg.eval.splits.empty()) cfg.eval.splits.push_back("train");
    eval.Get("splits", cfg.eval.splits);
  }
  cfg.eval.max_tokens = eval.Get("max_tokens", cfg.eval.max_tokens);
  eval.CheckUnknown();
  root.CheckUnknown();

  ValidateConfig(cfg, check_files);
  return cfg;
}

ExperimentConfig LoadConfig(const std::filesystem::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  // Relative paths in the file are relative to the file itself.
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&](json& node, const char* key) {
    if (node.is_object() && node.contains(key) && node[key].is_string()) {
      const std::string v = node[key];
      if (!v.empty() && std::filesystem::path(v).is_relative()) node[key] = (base / v).lexically_normal().string();
    }
  };
  if (j.is_object()) {
    resolve(j, "output_dir");
    if (j.contains("data"))
      for (const char* k : {"train", "dev", "test", "manifest"}) resolve(j["data"], k);
    if (j.contains("train")) resolve(j["train"], "init_checkpoint");
  }
  return ParseConfig(j, check_files);
}

void ValidateConfig(const ExperimentConfig& cfg, bool check_files) {
  ModelConfig m = cfg.model;
  Check(m.vocab_size == 0 || m.vocab_size > kNumReserved, "model.vocab_size",
        [] { return "must be 0 (from data) or exceed the reserved ids"; });
  if (m.vocab_size == 0) m.vocab_size = kNumReserved + 1;
  try {
    ValidateModelConfig(m);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  try {
    ValidatePeftConfig(cfg.peft);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("peft: ") + e.what());
  }
  if (cfg.peft.method == PeftMethod::kPrompt) {
    Check(cfg.peft.prompts_enc < m.max_len, "peft.prompts_enc", [&] {
      return std::to_string(cfg.peft.prompts_enc) + " prompts leave no room within model.max_len " +
             std::to_string(m.max_len);
    });
    if (m.mode == ModelMode::kEncDec)
      Check(cfg.peft.prompts_dec + 2 <= m.max_len, "peft.prompts_dec", [&] {
        return std::to_string(cfg.peft.prompts_dec) + " prompts leave no room within model.max_len " +
               std::to_string(m.max_len);
      });
  }
  if ((cfg.peft.method == PeftMethod::kDecoderOnly) && m.mode == ModelMode::kCtc)
    throw ConfigError("peft.method: decoder_only needs enc_dec mode");
  try {
    ValidatePifConfig(cfg.pif);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("pif: ") + e.what());
  }
  Check(cfg.pif.weight == 0.0 || IsPerturbing(cfg.augment.method), "pif.weight",
        [] { return "a positive weight requires a perturbing augment.method"; });
  Check(cfg.pif.weight == 0.0 || cfg.augment.copies > 0, "augment.copies",
        [] { return "a positive pif.weight requires at least one copy"; });
  Check(cfg.augment.copies >= 0, "augment.copies", [] { return "must be >= 0"; });
  Check(cfg.augment.spec_augment.n_freq_masks >= 0 && cfg.augment.spec_augment.n_time_masks >= 0 &&
            cfg.augment.spec_augment.max_freq_width >= 0 && cfg.augment.spec_augment.max_time_fraction > 0.0 &&
            cfg.augment.spec_augment.max_time_fraction <= 0.5,
        "augment.spec_augment", [] { return "mask counts and widths must be non-negative, fraction in (0, 0.5]"; });

  const bool single = !cfg.data.manifest.empty();
  Check(single || !cfg.data.train.empty(), "data", [] { return "set data.train or data.manifest"; });
  Check(!(single && (!cfg.data.train.empty() || !cfg.data.dev.empty() || !cfg.data.test.empty())), "data",
        [] { return "data.manifest excludes data.train/dev/test"; });
  double frac = 0.0;
  for (double f : cfg.data.split.fractions) {
    Check(f >= 0.0, "data.split.fractions", [] { return "must be non-negative"; });
    frac += f;
  }
  Check(std::abs(frac - 1.0) < 1e-9, "data.split.fractions", [] { return "must sum to 1"; });
  Check(cfg.data.filter.min_words >= 0 && cfg.data.filter.max_wer >= 0.0 && cfg.data.filter.max_duration_s > 0.0,
        "data.filter", [] { return "thresholds must be non-negative"; });
  if (check_files) {
    for (const auto& [key, path] : {std::pair<const char*, const std::string*>{"data.train", &cfg.data.train},
                                    {"data.dev", &cfg.data.dev},
                                    {"data.test", &cfg.data.test},
                                    {"data.manifest", &cfg.data.manifest},
                                    {"train.init_checkpoint", &cfg.train.init_checkpoint}})
      Check(path->empty() || std::filesystem::exists(*path), key, [&] { return "no such file: " + *path; });
  }

  Check(cfg.train.steps >= 1, "train.steps", [] { return "must be >= 1"; });
  Check(cfg.train.batch_size >= 1, "train.batch_size", [] { return "must be >= 1"; });
  Check(cfg.train.adam.lr > 0.0 && std::isfinite(cfg.train.adam.lr), "train.lr", [] { return "must be positive"; });
  Check(cfg.train.adam.beta1 >= 0.0 && cfg.train.adam.beta1 < 1.0, "train.beta1", [] { return "must be in [0, 1)"; });
  Check(cfg.train.adam.beta2 >= 0.0 && cfg.train.adam.beta2 < 1.0, "train.beta2", [] { return "must be in [0, 1)"; });
  Check(cfg.train.adam.eps > 0.0, "train.adam_eps", [] { return "must be positive"; });
  Check(cfg.train.adam.weight_decay >= 0.0, "train.weight_decay", [] { return "must be >= 0"; });
  Check(cfg.train.adam.max_grad_norm >= 0.0, "train.max_grad_norm", [] { return "must be >= 0"; });
  Check(cfg.train.eval_interval >= 0, "train.eval_interval", [] { return "must be >= 0"; });
  Check(cfg.train.checkpoint_interval >= 0, "train.checkpoint_interval", [] { return "must be >= 0"; });

  Check(cfg.eval.max_tokens >= 1, "eval.max_tokens", [] { return "must be >= 1"; });
  for (const std::string& s : cfg.eval.splits) {
    const int idx = s == "train" ? 0 : s == "dev" ? 1 : s == "test" ? 2 : -1;
    Check(idx >= 0, "eval.splits", [&] { return "unknown split '" + s + "'"; });
    if (!single && idx > 0)
      Check(!(idx == 1 ? cfg.data.dev : cfg.data.test).empty(), "eval.splits",
            [&] { return "split '" + s + "' has no manifest in data"; });
  }
  Check(!cfg.name.empty(), "name", [] { return "must be non-empty"; });
}

json ConfigToJson(const ExperimentConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const PeftConfig& p = cfg.peft;
  const SpecAugmentConfig& sa = cfg.augment.spec_augment;
  json spec = {{"n_freq_masks", sa.n_freq_masks},
               {"max_freq_width", sa.max_freq_width},
               {"n_time_masks", sa.n_time_masks},
               {"max_time_fraction", sa.max_time_fraction}};
  spec["mask_value"] = sa.mask_value ? json(*sa.mask_value) : json(nullptr);
  return {
      {"name", cfg.name},
      {"output_dir", cfg.output_dir},
      {"model",
       {{"mode", ModelModeName(m.mode)},
        {"d_model", m.d_model},
        {"n_heads", m.n_heads},
        {"enc_layers", m.enc_layers},
        {"dec_layers", m.dec_layers},
        {"ffn_dim", m.ffn_dim},
        {"n_mels", m.n_mels},
        {"vocab_size", m.vocab_size},
        {"max_len", m.max_len},
        {"frame_stack", m.frame_stack}}},
      {"peft",
       {{"method", PeftMethodName(p.method)},
        {"lora_rank", p.lora_rank},
        {"lora_query", p.lora_query},
        {"lora_value", p.lora_value},
        {"adapter_bottleneck", p.adapter_bottleneck},
        {"prompts_enc", p.prompts_enc},
        {"prompts_dec", p.prompts_dec},
        {"prefix_enc", p.prefix_enc},
        {"prefix_dec", p.prefix_dec}}},
      {"augment", {{"method", AugmentMethodName(cfg.augment.method)}, {"copies", cfg.augment.copies}, {"spec_augment", spec}}},
      {"pif", {{"weight", cfg.pif.weight}, {"distance", cfg.pif.distance}}},
      {"data",
       {{"train", cfg.data.train},
        {"dev", cfg.data.dev},
        {"test", cfg.data.test},
        {"manifest", cfg.data.manifest},
        {"filter",
         {{"max_wer", cfg.data.filter.max_wer},
          {"min_words", cfg.data.filter.min_words},
          {"max_duration_s", cfg.data.filter.max_duration_s}}},
        {"split", {{"fractions", cfg.data.split.fractions}, {"seed", cfg.data.split.seed}}}}},
      {"train",
       {{"steps", cfg.train.steps},
        {"batch_size", cfg.train.batch_size},
        {"lr", cfg.train.adam.lr},
        {"beta1", cfg.train.adam.beta1},
        {"beta2", cfg.train.adam.beta2},
        {"adam_eps", cfg.train.adam.eps},
        {"weight_decay", cfg.train.adam.weight_decay},
        {"max_grad_norm", cfg.train.adam.max_grad_norm},
        {"seed", cfg.train.seed},
        {"eval_interval", cfg.train.eval_interval},
        {"checkpoint_interval", cfg.train.checkpoint_interval},
        {"stop_at_zero_train_wer", cfg.train.stop_at_zero_train_wer},
        {"init_checkpoint", cfg.train.init_checkpoint}}},
      {"eval", {{"splits", cfg.eval.splits}, {"max_tokens", cfg.eval.max_tokens}}},
  };
}

std::string ConfigHash(const ExperimentConfig& cfg) { return HexU64(Fnv1a64(ConfigToJson(cfg).dump())); }

json RunRecord::ToJson() const {
  json steps_json = json::array();
  for (const StepRecord& s : steps)
    steps_json.push_back({{"step", s.step}, {"task_loss", s.task_loss}, {"pif_loss", s.pif_loss}, {"total", s.total}});
  json rows = json::array();
  for (const ResultRow& r : results.rows())
    rows.push_back({{"split", r.split}, {"wer", r.wer}, {"errors", r.errors}, {"ref_words", r.ref_words}});
  return {{"config_hash", config_hash},
          {"steps", steps_json},
          {"results", rows},
          {"trainable_params", trainable_params},
          {"wall_time_s", wall_time_s},
          {"best_step", best_step},
          {"best_dev_wer", std::isnan(best_dev_wer) ? json(nullptr) : json(best_dev_wer)}};
}

std::array<std::vector<ManifestEntry>, 3> LoadSplits(const ExperimentConfig& cfg) {
  std::array<std::vector<ManifestEntry>, 3> out;
  if (!cfg.data.manifest.empty()) {
    const std::vector<ManifestEntry> all = LoadManifest(cfg.data.manifest);
    const FilterResult kept = FilterEntries(all, cfg.data.filter);
    out = SplitBySpeaker(kept.kept, cfg.data.split).splits;
    return out;
  }
  const std::array<const std::string*, 3> paths{&cfg.data.train, &cfg.data.dev, &cfg.data.test};
  for (int s = 0; s < 3; ++s)
    if (!paths[s]->empty()) out[s] = FilterEntries(LoadManifest(*paths[s]), cfg.data.filter).kept;
  return out;
}

FbankOptions FrontendOptions(const ModelConfig& model) {
  FbankOptions o;
  o.n_mels = model.n_mels;
  o.cmvn = true;
  return o;
}

FeatureMatrix ExtractFeatures(const ManifestEntry& e, const FbankOptions& opts) {
  return ComputeFbank(Resample(LoadWav(e.AudioPath()), kCanonicalSampleRate), opts);
}

Model InitialModel(const ExperimentConfig& cfg) {
  Model model = BuildModel(cfg.model, cfg.train.seed);
  if (!cfg.train.init_checkpoint.empty()) {
    const CheckpointData ck = LoadCheckpoint(cfg.train.init_checkpoint);
    for (const auto& [name, value] : ck.params) {
      if (!model.params().Has(name)) continue;  // PEFT parameters of a previous run
      if (model.params().Get(name).shape() != value.shape())
        throw IntegrityError("init checkpoint: shape mismatch for " + name);
      model.params().Set(name, value);
    }
  }
  return ApplyPeft(std::move(model), cfg.peft);
}

void SaveModelCheckpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, const Model& model,
                         const Vocabulary& vocab, int step) {
  json meta = {{"format", "kasr-model"},
               {"config", ConfigToJson(cfg)},
               {"config_hash", ConfigHash(cfg)},
               {"vocab", vocab.ToJson()},
               {"step", step}};
  CheckpointData data;
  data.metadata = meta.dump();
  for (const auto& [name, entry] : model.params().entries()) data.params.emplace_back(name, entry.value);
  // Write then rename so a crash never leaves a half-written checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  SaveCheckpoint(tmp, data);
  std::filesystem::rename(tmp, path);
}

LoadedModel LoadModelCheckpoint(const std::filesystem::path& path) {
  const CheckpointData data = LoadCheckpoint(path);
  json meta;
  try {
    meta = json::parse(data.metadata);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": bad metadata: " + e.what());
  }
  if (!meta.is_object() || meta.value("format", "") != "kasr-model" || !meta.contains("config"))
    throw FormatError(path.string() + ": not a model checkpoint");
  ExperimentConfig cfg = ParseConfig(meta["config"], false);
  if (ConfigHash(cfg) != meta.value("config_hash", ""))
    throw IntegrityError(path.string() + ": config hash does not match the stored config");
  LoadedModel out;
  out.vocab = Vocabulary::FromJson(meta.at("vocab"));
  out.step = meta.value("step", 0);
  if (cfg.model.vocab_size != out.vocab.size())
    throw IntegrityError(path.string() + ": vocabulary size does not match model.vocab_size");
  // The stored values replace every parameter, so the initial checkpoint of
  // the original run is not needed.
  cfg.train.init_checkpoint.clear();
  out.model = InitialModel(cfg);
  std::set<std::string> expected;
  for (const std::string& name : out.model.params().Names()) expected.insert(name);
  for (const auto& [name, value] : data.params) {
    if (!expected.erase(name)) throw IntegrityError(path.string() + ": unexpected parameter " + name);
    if (out.model.params().Get(name).shape() != value.shape())
      throw IntegrityError(path.string() + ": shape mismatch for " + name + ": " + ShapeString(value.shape()) +
                           " vs " + ShapeString(out.model.params().Get(name).shape()));
    out.model.params().Set(name, value);
  }
  if (!expected.empty()) throw IntegrityError(path.string() + ": missing parameter " + *expected.begin());
  out.config = ParseConfig(meta["config"], false);
  return out;
}

std::vector<Hypothesis> DecodeEntries(const Model& model, const Vocabulary& vocab,
                                      std::span<const ManifestEntry> entries, int max_tokens) {
  const FbankOptions opts = FrontendOptions(model.config());
  std::vector<Hypothesis> out;
  for (const ManifestEntry& e : entries) {
    Hypothesis h;
    h.id = e.id;
    h.ref = NormalizeText(e.text);
    const FeatureMatrix feat = ExtractFeatures(e, opts);
    h.hyp = Transcribe(model, feat, {}, vocab, max_tokens);
    h.report = ComputeWer(h.ref, h.hyp);
    out.push_back(std::move(h));
  }
  return out;
}

namespace {

ResultRow ScoreSplit(const Model& model, const Vocabulary& vocab, std::span<const ManifestEntry> entries,
                     const ExperimentConfig& cfg, const std::string& split, std::vector<Hypothesis>* hyps) {
  std::vector<Hypothesis> h = DecodeEntries(model, vocab, entries, cfg.eval.max_tokens);
  std::vector<WerReport> reports;
  for (const Hypothesis& x : h) reports.push_back(x.report);
  ResultRow row = AggregateReport(reports, cfg.name, split);
  row.params = CountTrainableParams(model);
  if (hyps) *hyps = std::move(h);
  return row;
}

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

ResultsTable Evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                      const std::string& split_label, const std::optional<ExperimentConfig>& expected,
                      std::vector<Hypothesis>* hyps) {
  const auto t0 = std::chrono::steady_clock::now();
  LoadedModel lm = LoadModelCheckpoint(checkpoint);
  if (expected) {
    ExperimentConfig e = *expected;
    if (e.model.vocab_size == 0) e.model.vocab_size = lm.config.model.vocab_size;
    if (ConfigHash(e) != ConfigHash(lm.config))
      throw IntegrityError("checkpoint " + checkpoint.string() + " was trained with a different config (" +
                           ConfigHash(lm.config) + " vs " + ConfigHash(e) + ")");
  }
  const std::vector<ManifestEntry> entries = LoadManifest(manifest);
  if (entries.empty()) throw ArgumentError("evaluate: manifest " + manifest.string() + " is empty");
  ResultsTable table;
  ResultRow row = ScoreSplit(lm.model, lm.vocab, entries, lm.config, split_label, hyps);
  row.wall_time_s = Seconds(t0);
  table.Add(std::move(row));
  return table;
}

RunRecord Train(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ValidateConfig(cfg, true);
  const std::array<std::vector<ManifestEntry>, 3> splits = LoadSplits(cfg);
  const std::vector<ManifestEntry>& train = splits[0];
  if (train.empty()) throw ArgumentError("train: the training split is empty");

  std::vector<std::string> texts;
  for (const ManifestEntry& e : train) texts.push_back(e.text);
  const Vocabulary vocab = Vocabulary::Build(texts);
  ExperimentConfig run_cfg = cfg;
  if (run_cfg.model.vocab_size == 0) run_cfg.model.vocab_size = vocab.size();
  if (run_cfg.model.vocab_size != vocab.size())
    throw ConfigError("model.vocab_size: " + std::to_string(run_cfg.model.vocab_size) + " but the training data has " +
                      std::to_string(vocab.size()) + " symbols");
  Model model = InitialModel(run_cfg);

  // Offline augmentation: every utterance gets its copies once, from a seed
  // derived from its id, so the data never depends on batch order.
  const FbankOptions opts = FrontendOptions(run_cfg.model);
  AugmentPolicy policy = run_cfg.augment;
  policy.fbank = opts;
  std::vector<TrainingGroup> groups;
  for (const ManifestEntry& e : train) {
    TrainingGroup g;
    const Waveform wave = Resample(LoadWav(e.AudioPath()), kCanonicalSampleRate);
    auto make = [&](const std::string& id, FeatureMatrix feat) {
      Utterance u;
      u.id = id;
      u.mask.assign(feat.num_frames, 1);
      u.features = std::move(feat);
      try {
        u.target = vocab.Encode(e.text);
      } catch (const VocabularyError& err) {
        throw VocabularyError(std::string(err.what()) + " (utterance '" + e.id + "')");
      }
      return u;
    };
    g.original = make(e.id, ComputeFbank(wave, opts));
    if (policy.method != AugmentMethod::kNone) {
      policy.seed = DeriveSeed(run_cfg.train.seed, "augment:" + e.id);
      Rng rng(policy.seed);
      std::vector<AugmentedCopy> copies = MakeAugmentedCopies(wave, policy, rng);
      for (size_t c = 0; c < copies.size(); ++c) {
        FeatureMatrix feat = copies[c].features ? *copies[c].features : ComputeFbank(copies[c].wave, opts);
        g.perturbed.push_back(make(e.id + "#" + std::to_string(c), std::move(feat)));
      }
    }
    groups.push_back(std::move(g));
  }

  std::filesystem::create_directories(run_cfg.output_dir);
  const std::filesystem::path out_dir = run_cfg.output_dir;
  std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot write " + (out_dir / "train_log.jsonl").string());

  RunRecord record;
  record.config_hash = ConfigHash(run_cfg);
  record.trainable_params = CountTrainableParams(model);

  OptimizerState opt;
  opt.config = run_cfg.train.adam;
  std::vector<size_t> order(groups.size());
  size_t cursor = order.size();
  int epoch = 0;
  auto reshuffle = [&] {
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(DeriveSeed(run_cfg.train.seed, "epoch:" + std::to_string(epoch++)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.UniformInt(0, static_cast<int64_t>(i - 1)))]);
    cursor = 0;
  };

  const int bs = std::min<int>(run_cfg.train.batch_size, static_cast<int>(groups.size()));
  for (int step = 1; step <= run_cfg.train.steps; ++step) {
    std::vector<TrainingGroup> batch;
    for (int b = 0; b < bs; ++b) {
      if (cursor >= order.size()) reshuffle();
      batch.push_back(groups[order[cursor++]]);
    }
    const LossBreakdown lb = TotalObjective(model, batch, run_cfg.pif);
    if (!std::isfinite(lb.total))
      throw DivergedError("step " + std::to_string(step) + ": non-finite loss (task " + std::to_string(lb.task_loss) +
                          ", pif " + std::to_string(lb.pif_loss) + ")");
    const Gradients grads = Backward(lb.total_tensor);
    try {
      OptimizerStep(model.params(), grads, opt);
    } catch (const DivergedError& e) {
      throw DivergedError("step " + std::to_string(step) + ": " + e.what());
    }
    const StepRecord rec{step, lb.task_loss, lb.pif_loss, lb.total};
    record.steps.push_back(rec);
    log << json{{"step", rec.step}, {"task_loss", rec.task_loss}, {"pif_loss", rec.pif_loss}, {"total", rec.total}}.dump()
        << '\n';
    log.flush();

    const bool last = step == run_cfg.train.steps;
    const int every = run_cfg.train.eval_interval;
    bool stop = false;
    if (last || (every > 0 && step % every == 0)) {
      if (!splits[1].empty()) {
        const ResultRow dev = ScoreSplit(model, vocab, splits[1], run_cfg, "dev", nullptr);
        if (std::isnan(record.best_dev_wer) || dev.wer < record.best_dev_wer) {
          record.best_dev_wer = dev.wer;
          record.best_step = step;
          SaveModelCheckpoint(out_dir / "best.ckpt", run_cfg, model, vocab, step);
        }
      }
      if (run_cfg.train.stop_at_zero_train_wer && !last)
        stop = ScoreSplit(model, vocab, train, run_cfg, "train", nullptr).errors == 0;
    }
    if (run_cfg.train.checkpoint_interval > 0 && step % run_cfg.train.checkpoint_interval == 0)
      SaveModelCheckpoint(out_dir / "last.ckpt", run_cfg, model, vocab, step);
    if (stop) break;
  }
  const int final_step = record.steps.back().step;
  SaveModelCheckpoint(out_dir / "final.ckpt", run_cfg, model, vocab, final_step);
  if (splits[1].empty()) {
    record.best_step = final_step;
    std::filesystem::copy_file(out_dir / "final.ckpt", out_dir / "best.ckpt",
                               std::filesystem::copy_options::overwrite_existing);
  }

  for (const std::string& split : run_cfg.eval.splits) {
    const int idx = split == "train" ? 0 : split == "dev" ? 1 : 2;
    if (splits[idx].empty()) continue;
    ResultRow row = ScoreSplit(model, vocab, splits[idx], run_cfg, split, nullptr);
    row.loss = record.steps.back().total;
    record.results.Add(std::move(row));
  }
  record.wall_time_s = Seconds(t0);
  std::ofstream(out_dir / "run.json", std::ios::trunc) << record.ToJson().dump(2) << '\n';
  return record;
}

std::string CellLabel(const std::string& model, PeftMethod peft, AugmentMethod augment) {
  return model + "/" + PeftMethodName(peft) + "/" + AugmentMethodName(augment);
}

MatrixSpec ParseMatrixSpec(const json& j, bool check_files) {
  if (!j.is_object() || !j.contains("base") || !j.contains("axes"))
    throw ConfigError("matrix: expected {\"base\": config, \"axes\": {...}}");
  MatrixSpec spec;
  spec.base = ParseConfig(j["base"], check_files);
  Section axes(j["axes"], "axes");
  for (const std::string& p : axes.Get<std::vector<std::string>>("peft", {PeftMethodName(spec.base.peft.method)})) {
    try {
      spec.peft.push_back(ParsePeftMethod(p));
    } catch (const Error& e) {
      throw ConfigError(axes.Where("peft") + e.what());
    }
  }
  for (const std::string& a :
       axes.Get<std::vector<std::string>>("augment", {AugmentMethodName(spec.base.augment.method)})) {
    try {
      spec.augment.push_back(ParseAugmentMethod(a));
    } catch (const Error& e) {
      throw ConfigError(axes.Where("augment") + e.what());
    }
  }
  const json models = axes.Get<json>("models", json::array({{{"label", "base"}, {"model", json::object()}}}));
  if (!models.is_array()) throw ConfigError(axes.Where("models") + "expected an array");
  std::set<std::string> labels;
  for (const json& m : models) {
    Section s(m, "axes.models[]");
    ModelAxisValue v;
    v.label = s.Required<std::string>("label");
    v.model = s.Get<json>("model", json::object());
    s.CheckUnknown();
    if (!labels.insert(v.label).second) throw ConfigError("axes.models: duplicate label '" + v.label + "'");
    spec.models.push_back(std::move(v));
  }
  axes.CheckUnknown();
  if (spec.peft.empty() || spec.augment.empty() || spec.models.empty())
    throw ConfigError("axes: every axis needs at least one value");
  return spec;
}

ResultsTable RunMatrix(const MatrixSpec& spec) {
  if (spec.peft.empty() || spec.augment.empty() || spec.models.empty())
    throw ConfigError("matrix: every axis needs at least one value");
  const std::filesystem::path root = spec.base.output_dir;
  std::filesystem::create_directories(root / "cells");
  ResultsTable table;
  for (const ModelAxisValue& mv : spec.models)
    for (PeftMethod p : spec.peft)
      for (AugmentMethod a : spec.augment) {
        const std::string label = CellLabel(mv.label, p, a);
        std::string dir_name = label;
        std::replace_if(dir_name.begin(), dir_name.end(), [](char c) { return !std::isalnum(static_cast<unsigned char>(c)); }, '_');
        const auto t0 = std::chrono::steady_clock::now();
        try {
          json cell = ConfigToJson(spec.base);
          cell["model"].merge_patch(mv.model);
          if (!mv.model.contains("vocab_size")) cell["model"]["vocab_size"] = spec.base.model.vocab_size;
          cell["peft"]["method"] = PeftMethodName(p);
          cell["augment"]["method"] = AugmentMethodName(a);
          cell["name"] = label;
          cell["output_dir"] = (root / "cells" / dir_name).string();
          cell["train"]["seed"] = DeriveSeed(spec.base.train.seed, label);
          const RunRecord rec = Train(ParseConfig(cell, true));
          for (ResultRow row : rec.results.rows()) {
            row.wall_time_s = rec.wall_time_s;
            table.Add(std::move(row));
          }
        } catch (const std::exception& e) {
          for (const std::string& split : spec.base.eval.splits) {
            ResultRow row;
            row.system = label;
            row.split = split;
            row.wall_time_s = Seconds(t0);
            row.status = std::string("failed: ") + e.what();
            std::replace(row.status.begin(), row.status.end(), '\t', ' ');
            std::replace(row.status.begin(), row.status.end(), '\n', ' ');
            table.Add(std::move(row));
          }
        }
      }
  std::ofstream(root / "results.tsv", std::ios::trunc) << table.ToTsv();
  std::ofstream(root / "results.txt", std::ios::trunc) << table.ToText();
  return table;
}

}  // namespace kasr
