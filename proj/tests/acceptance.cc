// tests/acceptance.cc

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

// Acceptance checks.  Each criterion prints one [PASS]/[FAIL] line with
// the measured values; the exit status is non-zero if any criterion fails.
//
//   acceptance [--work-dir DIR] [--only N]...

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "kasr/augment.h"
#include "kasr/common.h"
#include "kasr/datapipe.h"
#include "kasr/evalkit.h"
#include "kasr/gradcheck.h"
#include "kasr/losses.h"
#include "kasr/model.h"
#include "kasr/runner.h"
#include "test_util.h"

namespace kasr {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records one sub-check; the first failures are named in the detail.
  void Expect(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "FAILED: ";
      detail << what << "; ";
      pass = false;
    }
  }
};

double Seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string Fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

FeatureMatrix RandomFeatures(int frames, int bins, uint64_t seed) {
  Rng rng(seed);
  FeatureMatrix f;
  f.num_frames = frames;
  f.num_bins = bins;
  f.values.resize(static_cast<size_t>(frames) * bins);
  for (double& v : f.values) v = rng.Normal();
  return f;
}

double MaxAbsDiff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness.

// Finite-difference check of one parameter tensor of a full toy-size model
// through the training objective.
double ToyParamCheck(const Model& model, const std::string& name, const std::vector<TrainingGroup>& batch) {
  const PifConfig pif{0.1};
  return GradCheck(
      [&](const Tensor& t) {
        Model m = model;
        m.params().Set(name, t);
        return TotalObjective(m, batch, pif).total_tensor;
      },
      Tensor::Leaf(model.params().Get(name).shape(), model.params().Get(name).values()), 1e-4);
}

void GradientCorrectness(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  int checks = 0;
  for (const GradCheckResult& r : RunGradCheckSuite(1, 1e-4)) {
    ++checks;
    if (r.max_rel_err > worst) worst = r.max_rel_err, worst_name = r.name;
    o.Expect(r.max_rel_err < 1e-4, r.name + " " + Fmt("%.2e", r.max_rel_err));
  }

  // Spot checks on the real toy configuration, both modes.
  TrainingGroup g;
  g.original = {"a", RandomFeatures(24, 16, 1), std::vector<uint8_t>(24, 1), {4, 5, 6}};
  g.original.mask[23] = g.original.mask[22] = 0;
  g.perturbed.push_back({"a#0", RandomFeatures(20, 16, 2), std::vector<uint8_t>(20, 1), {4, 5, 6}});
  const std::vector<TrainingGroup> batch{g};
  for (ModelMode mode : {ModelMode::kCtc, ModelMode::kEncDec}) {
    ModelConfig cfg = ModelConfig::Toy(mode);
    cfg.frame_stack = 4;
    const Model model = BuildModel(cfg, 3);
    std::vector<std::string> names{"enc.0.ln1.g", "enc.1.attn.o.b", "enc.in.b"};
    if (mode == ModelMode::kCtc) {
      names.insert(names.end(), {"ctc.out.b", "ctc.ln.g"});
    } else {
      names.insert(names.end(), {"dec.out.b", "dec.0.cross.q.b", "dec.1.ln3.b", "dec.mem_norm.g"});
    }
    for (const std::string& n : names) {
      const double e = ToyParamCheck(model, n, batch);
      ++checks;
      const std::string label = "toy " + ModelModeName(mode) + " " + n;
      if (e > worst) worst = e, worst_name = label;
      o.Expect(e < 1e-4, label + " " + Fmt("%.2e", e));
    }
  }
  const double secs = Seconds(t0);
  o.Expect(secs < 120.0, "runtime " + Fmt("%.1f s", secs));
  o.detail << checks << " checks, max rel err " << Fmt("%.2e", worst) << " (" << worst_name << "), "
           << Fmt("%.1f s", secs);
}

// ---------------------------------------------------------------------------
// 2. CTC oracle.

double BruteForceProb(const Tensor& lp, const std::vector<int>& target) {
  const int T = lp.dim(0), V = lp.dim(1);
  std::vector<int> path(T, 0);
  double total = 0.0;
  std::function<void(int)> walk = [&](int t) {
    if (t == T) {
      std::vector<int> out;
      int prev = -1;
      for (int s : path) {
        if (s != prev && s != 0) out.push_back(s);
        prev = s;
      }
      if (out != target) return;
      double l = 0.0;
      for (int u = 0; u < T; ++u) l += lp.at(u, path[u]);
      total += std::exp(l);
      return;
    }
    for (int s = 0; s < V; ++s) {
      path[t] = s;
      walk(t + 1);
    }
  };
  walk(0);
  return total;
}

void CtcOracle(Outcome& o) {
  Rng rng(2);
  double worst = 0.0;
  int instances = 0, infeasible = 0;
  for (int V = 2; V <= 3; ++V) {
    std::vector<std::vector<int>> targets;
    for (int a = 1; a < V; ++a) {
      targets.push_back({a});
      for (int b = 1; b < V; ++b) targets.push_back({a, b});
    }
    for (int T = 1; T <= 4; ++T)
      for (const auto& target : targets)
        for (int trial = 0; trial < 5; ++trial) {
          std::vector<double> x(static_cast<size_t>(T) * V);
          for (double& e : x) e = 2.0 * rng.Normal();
          const Tensor lp = LogSoftmax(Tensor::Constant({T, V}, x), 1);
          const double p = BruteForceProb(lp, target);
          if (p == 0.0) {
            bool threw = false;
            try {
              CtcLoss(lp, target, 0);
            } catch (const InfeasibleAlignmentError&) {
              threw = true;
            }
            o.Expect(threw, "infeasible instance did not raise");
            ++infeasible;
            continue;
          }
          worst = std::max(worst, std::abs(CtcLoss(lp, target, 0).item() + std::log(p)));
          ++instances;
        }
  }
  o.Expect(worst < 1e-10, "max error " + Fmt("%.2e", worst));
  const Tensor uniform = LogSoftmax(Tensor::Constant({1, 2}, {0.0, 0.0}), 1);
  const double ln2_err = std::abs(CtcLoss(uniform, std::vector<int>{1}, 0).item() - std::log(2.0));
  o.Expect(ln2_err <= 1e-12, "ln 2 case off by " + Fmt("%.2e", ln2_err));
  o.detail << instances << " feasible instances, max |loss + log p| " << Fmt("%.2e", worst) << ", " << infeasible
           << " infeasible raised; ln 2 error " << Fmt("%.1e", ln2_err);
}

// ---------------------------------------------------------------------------
// 3. Augmentation signal properties.

// Start of the first and end of the last 16-sample block whose RMS exceeds
// half the peak block RMS.
std::pair<int, int> BurstEdges(const std::vector<double>& x) {
  const int block = 16;
  std::vector<double> rms;
  for (size_t s = 0; s + block <= x.size(); s += block) {
    double e = 0.0;
    for (int i = 0; i < block; ++i) e += x[s + i] * x[s + i];
    rms.push_back(std::sqrt(e / block));
  }
  const double peak = *std::max_element(rms.begin(), rms.end());
  int first = -1, last = -1;
  for (size_t i = 0; i < rms.size(); ++i)
    if (rms[i] > 0.5 * peak) {
      if (first < 0) first = static_cast<int>(i) * block;
      last = static_cast<int>(i + 1) * block;
    }
  return {first, last};
}

void AugmentProperties(Outcome& o) {
  using testing::Sine;
  // PP: octave shifts.
  const std::pair<double, int> pp_cases[] = {{220.0, 12}, {440.0, -12}};
  for (const auto& [f0, n] : pp_cases) {
    const Waveform in = Sine(f0, 1.0);
    const Waveform out = PitchPerturb(in, {n});
    const double ratio = EstimateF0(out, 60.0, 1200.0) / f0;
    const double want = n > 0 ? 2.0 : 0.5;
    o.Expect(std::abs(ratio / want - 1.0) <= 0.03, "PP " + std::to_string(n) + " ratio " + Fmt("%.4f", ratio));
    o.Expect(out.samples.size() == in.samples.size(), "PP length changed");
    o.detail << "PP " << (n > 0 ? "+" : "") << n << ": F0 x" << Fmt("%.4f", ratio) << "; ";
  }
  // Duration: output length within one hop (128) of the input for every
  // shift and a few lengths.  The tone-burst edge movement at n = +-12 is
  // reported alongside.
  int worst_len = 0;
  for (int len : {4000, 12345, 16000})
    for (int n = -12; n <= 12; ++n) {
      const Waveform in = testing::Noise(len, 40 + n);
      const int d = static_cast<int>(PitchPerturb(in, {n}).samples.size()) - len;
      worst_len = std::max(worst_len, std::abs(d));
    }
  o.Expect(worst_len <= 128, "PP length moved " + std::to_string(worst_len) + " samples");
  Waveform burst = Sine(300.0, 1.0);
  for (size_t i = 0; i < burst.samples.size(); ++i)
    if (i < 4800 || i >= 11200) burst.samples[i] = 0.0;
  const auto edges = BurstEdges(burst.samples);
  int edge_shift = 0;
  for (int n : {-12, 12}) {
    const auto e = BurstEdges(PitchPerturb(burst, {n}).samples);
    edge_shift = std::max({edge_shift, std::abs(e.first - edges.first), std::abs(e.second - edges.second)});
  }
  o.detail << "PP length change <= " << worst_len << " samples (tone-burst edges move <= " << edge_shift
           << "); ";

  // SP lengths.
  const Waveform noise = testing::Noise(16000, 3);
  for (double rate : {0.9, 1.1}) {
    const long got = static_cast<long>(SpeedPerturb(noise, {rate}).samples.size());
    const long want = std::lround(16000 / rate);
    o.Expect(std::abs(got - want) <= 1, "SP " + Fmt("%.1f", rate) + " length " + std::to_string(got));
    o.detail << "SP " << Fmt("%.1f", rate) << ": " << got << " (" << want << "); ";
  }

  // VTLP peak of a 1 kHz tone, in bins of a 512-point FFT.
  const Waveform tone = Sine(1000.0, 0.5);
  for (double alpha : {0.9, 1.1}) {
    const Waveform w = Vtlp(tone, {alpha, 0.0});
    const double want = alpha * 1000.0 * 512 / 16000;
    const int bin = PeakBin(w.samples, 2048, 512);
    o.Expect(std::abs(bin - want) <= 1.0, "VTLP " + Fmt("%.1f", alpha) + " peak bin " + std::to_string(bin));
    o.detail << "VTLP " << Fmt("%.1f", alpha) << ": bin " << bin << " (" << Fmt("%.1f", want) << "); ";
  }

  // SpecAugment: replay the draws and compare the touched cells.
  int mismatches = 0, masked_cells = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const FeatureMatrix in = RandomFeatures(150, 16, seed + 100);
    SpecAugmentConfig cfg;
    cfg.mask_value = -5.0;
    cfg.max_time_fraction = 0.1;
    Rng rng(seed);
    const FeatureMatrix out = SpecAugment(in, cfg, rng);
    Rng replay(seed);
    std::vector<uint8_t> mask(in.values.size(), 0);
    for (int i = 0; i < cfg.n_freq_masks; ++i) {
      const int w = static_cast<int>(replay.UniformInt(0, std::min(cfg.max_freq_width, in.num_bins)));
      const int s = static_cast<int>(replay.UniformInt(0, in.num_bins - w));
      for (int t = 0; t < in.num_frames; ++t)
        for (int f = s; f < s + w; ++f) mask[static_cast<size_t>(t) * in.num_bins + f] = 1;
    }
    for (int i = 0; i < cfg.n_time_masks; ++i) {
      const int w = static_cast<int>(replay.UniformInt(0, static_cast<int64_t>(std::floor(0.1 * in.num_frames))));
      const int s = static_cast<int>(replay.UniformInt(0, in.num_frames - w));
      for (int t = s; t < s + w; ++t)
        for (int f = 0; f < in.num_bins; ++f) mask[static_cast<size_t>(t) * in.num_bins + f] = 1;
    }
    for (size_t i = 0; i < mask.size(); ++i) {
      masked_cells += mask[i];
      const bool ok = mask[i] ? out.values[i] == -5.0 : out.values[i] == in.values[i];
      mismatches += !ok;
    }
  }
  o.Expect(mismatches == 0, "SpecAugment " + std::to_string(mismatches) + " cells differ from the replayed masks");
  o.detail << "SA: " << masked_cells << " masked cells over 20 seeds, " << mismatches << " mismatches";
}

// ---------------------------------------------------------------------------
// 4. PEFT identity and frozen parameters.

void PeftIdentity(Outcome& o, const fs::path& work, const fs::path& corpus) {
  double worst = 0.0;
  for (ModelMode mode : {ModelMode::kCtc, ModelMode::kEncDec}) {
    const Model base = BuildModel(ModelConfig::Toy(mode), 4);
    const FeatureMatrix f = RandomFeatures(60, 16, 4);
    const EncoderStates eb = Encode(base, f);
    for (PeftMethod method : {PeftMethod::kLora, PeftMethod::kAdapter}) {
      const Model peft = ApplyPeft(base, PeftConfig::Toy(method));
      const EncoderStates ep = Encode(peft, f);
      double d;
      if (mode == ModelMode::kCtc) {
        d = MaxAbsDiff(CtcLogProbs(peft, ep).values(), CtcLogProbs(base, eb).values());
      } else {
        const std::vector<int> prefix{kBosId, 5, 9, 7, 4};
        d = MaxAbsDiff(DecodeTeacherForced(peft, ep, prefix).values(), DecodeTeacherForced(base, eb, prefix).values());
      }
      worst = std::max(worst, d);
      o.Expect(d < 1e-9, ModelModeName(mode) + "/" + PeftMethodName(method) + " differs by " + Fmt("%.2e", d));
    }
  }
  o.detail << "max |peft - base| at init " << Fmt("%.2e", worst) << "; ";

  // Five training steps per method through the runner; frozen parameters
  // must come back bit-identical.
  int runs = 0, frozen_total = 0;
  const PeftMethod methods[] = {PeftMethod::kEncoderOnly, PeftMethod::kDecoderOnly, PeftMethod::kLora,
                                PeftMethod::kAdapter, PeftMethod::kPrompt, PeftMethod::kPrefix};
  for (const char* mode : {"ctc", "enc_dec"}) {
    for (PeftMethod method : methods) {
      if (std::string(mode) == "ctc" && method == PeftMethod::kDecoderOnly) continue;
      const std::string name = std::string("frozen_") + mode + "_" + PeftMethodName(method);
      json model = {{"mode", mode}, {"frame_stack", 4}};
      const json j = {{"name", name},
                      {"output_dir", (work / "runs" / name).string()},
                      {"model", model},
                      {"peft", {{"method", PeftMethodName(method)}, {"prompts_enc", 8}, {"prompts_dec", 4},
                                {"prefix_enc", 4}, {"prefix_dec", 2}}},
                      {"data", {{"train", (corpus / "manifest.jsonl").string()}}},
                      {"train", {{"steps", 5}, {"batch_size", 2}, {"lr", 1e-2}, {"weight_decay", 0.01}, {"seed", 5},
                                 {"eval_interval", 0}}},
                      {"eval", {{"splits", {"train"}}, {"max_tokens", 20}}}};
      const ExperimentConfig cfg = ParseConfig(j);
      Train(cfg);
      const LoadedModel trained = LoadModelCheckpoint(fs::path(cfg.output_dir) / "final.ckpt");
      const Model init = InitialModel(trained.config);
      int frozen = 0, changed = 0, moved = 0;
      for (const auto& [pname, e] : init.params().entries()) {
        const bool same = trained.model.params().Get(pname).values() == e.value.values();
        if (e.trainable) {
          moved += !same;
        } else {
          ++frozen;
          changed += !same;
        }
      }
      o.Expect(changed == 0, name + ": " + std::to_string(changed) + " frozen tensors changed");
      o.Expect(moved > 0, name + ": nothing trained");
      frozen_total += frozen;
      ++runs;
    }
  }
  o.detail << runs << " five-step runs, " << frozen_total << " frozen tensors compared";
}

// ---------------------------------------------------------------------------
// 5. Parameter counts.

void ParamCounts(Outcome& o) {
  const ModelConfig big = ModelConfig::FullScale();
  std::map<std::string, size_t> n;
  for (PeftMethod m : {PeftMethod::kPrompt, PeftMethod::kPrefix, PeftMethod::kLora, PeftMethod::kAdapter,
                       PeftMethod::kFull}) {
    PeftConfig p;
    p.method = m;
    n[PeftMethodName(m)] = CountTrainableParams(big, p);
  }
  o.Expect(n["prompt"] < n["prefix"] && n["prefix"] < n["lora"] && n["lora"] < n["adapter"] &&
               n["adapter"] < n["full"],
           "full-scale ordering violated");
  const ModelConfig toy = ModelConfig::Toy(ModelMode::kEncDec);
  const size_t lora = CountTrainableParams(toy, PeftConfig::Toy(PeftMethod::kLora));
  const size_t adapter = CountTrainableParams(toy, PeftConfig::Toy(PeftMethod::kAdapter));
  // Closed forms: 6 attention modules x {q, v} x (A + B); 4 blocks x adapter.
  o.Expect(lora == 6 * 2 * (2 * 8 * 64), "toy lora " + std::to_string(lora));
  o.Expect(adapter == 4 * (64 * 32 + 32 + 32 * 64 + 64), "toy adapter " + std::to_string(adapter));
  // The allocated toy models agree with the analytic count.
  const size_t built = CountTrainableParams(ApplyPeft(BuildModel(toy, 1), PeftConfig::Toy(PeftMethod::kLora)));
  o.Expect(built == lora, "allocated toy lora " + std::to_string(built));
  o.detail << "full scale: prompt " << n["prompt"] << " < prefix " << n["prefix"] << " < lora " << n["lora"]
           << " < adapter " << n["adapter"] << " < full " << n["full"] << "; toy lora " << lora << ", adapter "
           << adapter;
}

// ---------------------------------------------------------------------------
// 6. Overfit smoke test.

json OverfitConfig(const std::string& name, const std::string& mode, const fs::path& work, const fs::path& corpus) {
  json model = {{"mode", mode}, {"frame_stack", 4}};
  return {{"name", name},
          {"output_dir", (work / "runs" / name).string()},
          {"model", model},
          {"data", {{"train", (corpus / "manifest.jsonl").string()}}},
          {"train", {{"steps", 500}, {"batch_size", 4}, {"lr", 3e-3}, {"seed", 1}, {"eval_interval", 50},
                     {"stop_at_zero_train_wer", true}}},
          {"eval", {{"splits", {"train"}}}}};
}

void Overfit(Outcome& o, const fs::path& work, const fs::path& corpus) {
  for (const char* mode : {"ctc", "enc_dec"}) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentConfig cfg = ParseConfig(OverfitConfig(std::string("overfit_") + mode, mode, work, corpus));
    const RunRecord rec = Train(cfg);
    const double secs = Seconds(t0);
    const ResultRow& row = rec.results.rows().at(0);
    const ResultsTable check = Evaluate(fs::path(cfg.output_dir) / "final.ckpt", corpus / "manifest.jsonl", "train", cfg);
    const double eval_wer = check.rows().at(0).wer;
    o.Expect(row.wer == 0.0, std::string(mode) + " train WER " + Fmt("%.4f", row.wer));
    o.Expect(eval_wer == 0.0, std::string(mode) + " evaluate() WER " + Fmt("%.4f", eval_wer));
    o.Expect(rec.steps.size() <= 500, std::string(mode) + " used more than 500 steps");
    o.Expect(secs < 600.0, std::string(mode) + " took " + Fmt("%.0f s", secs));
    o.detail << mode << ": WER " << Fmt("%.2f", 100 * eval_wer) << "% after " << rec.steps.size() << " steps, "
             << Fmt("%.0f s", secs) << "; ";
  }
}

// ---------------------------------------------------------------------------
// 7. PIF effect.

void PifEffect(Outcome& o, const fs::path& work, const fs::path& corpus) {
  std::map<double, double> heldout;
  std::map<double, double> train_wer;
  // Held-out pairs: a fresh corpus with its own pitch-perturbed copies.
  const fs::path held_dir = work / "pif_heldout";
  const auto held = SynthCorpus(1234, 8, 4, held_dir);

  for (double weight : {0.0, 0.1}) {
    const std::string name = "pif_" + Fmt("%.1f", weight);
    json j = OverfitConfig(name, "ctc", work, corpus);
    j["train"]["stop_at_zero_train_wer"] = false;
    j["train"]["eval_interval"] = 0;
    j["augment"] = {{"method", "pp"}, {"copies", 2}};
    j["pif"] = {{"weight", weight}};
    const ExperimentConfig cfg = ParseConfig(j);
    const RunRecord rec = Train(cfg);
    train_wer[weight] = rec.results.rows().at(0).wer;

    const LoadedModel lm = LoadModelCheckpoint(fs::path(cfg.output_dir) / "final.ckpt");
    const FbankOptions opts = FrontendOptions(lm.config.model);
    AugmentPolicy pp;
    pp.method = AugmentMethod::kPP;
    pp.copies = 2;
    double sum = 0.0;
    int pairs = 0;
    for (const ManifestEntry& e : held) {
      const Waveform wave = LoadWav(e.AudioPath());
      const EncoderStates orig = Encode(lm.model, ComputeFbank(wave, opts));
      Rng rng(DeriveSeed(99, e.id));
      for (const AugmentedCopy& c : MakeAugmentedCopies(wave, pp, rng)) {
        sum += PifLoss(orig, Encode(lm.model, ComputeFbank(c.wave, opts))).item();
        ++pairs;
      }
    }
    heldout[weight] = sum / pairs;
  }
  o.Expect(heldout[0.1] < heldout[0.0], "held-out distance did not drop");
  o.Expect(train_wer[0.1] == 0.0, "lambda 0.1 train WER " + Fmt("%.4f", train_wer[0.1]));
  o.detail << "held-out pooled distance: lambda 0 " << Fmt("%.4f", heldout[0.0]) << ", lambda 0.1 "
           << Fmt("%.4f", heldout[0.1]) << "; train WER lambda 0 " << Fmt("%.2f", 100 * train_wer[0.0])
           << "%, lambda 0.1 " << Fmt("%.2f", 100 * train_wer[0.1]) << "%";
}

// ---------------------------------------------------------------------------
// 8. Filter and split policies.

void FilterSplit(Outcome& o) {
  Rng rng(8);
  std::vector<ManifestEntry> fixture;
  std::map<std::string, std::set<std::string>> expected;  // id -> rule names
  const char* words[] = {"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"};
  for (int s = 0; s < 100; ++s)
    for (int u = 0; u < 10; ++u) {
      ManifestEntry e;
      e.id = "s" + std::to_string(s) + "_u" + std::to_string(u);
      e.speaker = "spk" + std::to_string(s);
      e.audio = e.id + ".wav";
      const int n_words = static_cast<int>(rng.UniformInt(1, 8));
      for (int w = 0; w < n_words; ++w) e.text += std::string(w ? " " : "") + words[rng.UniformInt(0, 7)];
      e.duration_s = 1.0 + 39.0 * rng.Uniform();
      if (!rng.Coin()) e.prefilter_wer = rng.Uniform();
      // Exact boundaries stay in.
      if (u == 0) e.duration_s = 30.0;
      if (u == 1) e.prefilter_wer = 0.5;
      std::set<std::string>& why = expected[e.id];
      if (e.prefilter_wer && *e.prefilter_wer > 0.5) why.insert("wer");
      if (n_words < 3) why.insert("min_words");
      if (e.duration_s > 30.0) why.insert("max_duration");
      fixture.push_back(e);
    }
  const FilterResult fr = FilterEntries(fixture, FilterPolicy{});
  int wrong = 0, removed_expected = 0;
  for (const auto& [id, why] : expected) removed_expected += !why.empty();
  for (const ManifestEntry& e : fr.kept) wrong += !expected[e.id].empty();
  for (const RemovedEntry& r : fr.removed) {
    std::set<std::string> got;
    for (FilterRule rule : r.reasons) got.insert(FilterRuleName(rule));
    wrong += got != expected[r.entry.id];
  }
  o.Expect(wrong == 0, std::to_string(wrong) + " entries with wrong filter outcome");
  o.Expect(static_cast<int>(fr.removed.size()) == removed_expected, "removed count");
  o.Expect(fr.kept.size() + fr.removed.size() == fixture.size(), "filter lost entries");

  SplitPolicy sp;
  sp.seed = 21;
  const SplitResult a = SplitBySpeaker(fixture, sp);
  const SplitResult b = SplitBySpeaker(fixture, sp);
  std::map<std::string, std::set<int>> speaker_splits;
  for (int k = 0; k < 3; ++k)
    for (const ManifestEntry& e : a.splits[k]) speaker_splits[e.speaker].insert(k);
  int shared = 0;
  for (const auto& [spk, ks] : speaker_splits) shared += ks.size() != 1;
  o.Expect(shared == 0, std::to_string(shared) + " speakers in more than one split");
  const double targets[] = {700, 150, 150};
  for (int k = 0; k < 3; ++k) {
    const double n = static_cast<double>(a.splits[k].size());
    o.Expect(std::abs(n - targets[k]) <= 0.05 * targets[k], std::string(kSplitNames[k]) + " size " + Fmt("%.0f", n));
  }
  bool same = a.speaker_split == b.speaker_split;
  for (int k = 0; k < 3 && same; ++k) {
    if (a.splits[k].size() != b.splits[k].size()) same = false;
    for (size_t i = 0; same && i < a.splits[k].size(); ++i) same = a.splits[k][i].id == b.splits[k][i].id;
  }
  o.Expect(same, "split not deterministic");
  o.detail << "filter: " << fr.removed.size() << "/1000 removed, " << wrong << " disagreements with the rule oracle; split "
           << a.splits[0].size() << "/" << a.splits[1].size() << "/" << a.splits[2].size() << ", " << shared
           << " shared speakers, deterministic " << (same ? "yes" : "no");
}

// ---------------------------------------------------------------------------
// 9. WER scorer.

int ScriptSearch(const std::vector<std::string>& r, size_t i, const std::vector<std::string>& h, size_t j) {
  if (i == r.size()) return static_cast<int>(h.size() - j);
  if (j == h.size()) return static_cast<int>(r.size() - i);
  return std::min({(r[i] == h[j] ? 0 : 1) + ScriptSearch(r, i + 1, h, j + 1), 1 + ScriptSearch(r, i + 1, h, j),
                   1 + ScriptSearch(r, i, h, j + 1)});
}

void WerScorer(Outcome& o) {
  std::vector<std::vector<std::string>> seqs{{}};
  for (size_t k = 0; k < seqs.size(); ++k)
    if (seqs[k].size() < 4)
      for (const char* w : {"x", "y", "z"}) {
        auto s = seqs[k];
        s.push_back(w);
        seqs.push_back(s);
      }
  auto join = [](const std::vector<std::string>& w) {
    std::string s;
    for (const auto& x : w) s += (s.empty() ? "" : " ") + x;
    return s;
  };
  int pairs = 0, disagree = 0;
  for (const auto& r : seqs) {
    if (r.empty()) continue;
    for (const auto& h : seqs) {
      const WerReport rep = ComputeWer(join(r), join(h));
      const int d = ScriptSearch(r, 0, h, 0);
      disagree += rep.Errors() != d || rep.wer != static_cast<double>(d) / static_cast<double>(r.size());
      ++pairs;
    }
  }
  o.Expect(disagree == 0, std::to_string(disagree) + " disagreements");
  const double cat = ComputeWer("the cat sat down", "the cat sat up").wer;
  o.Expect(cat == 0.25, "cat case " + Fmt("%.4f", cat));
  o.detail << pairs << " sequence pairs, " << disagree << " disagreements; \"the cat sat down/up\" = " << cat;
}

// ---------------------------------------------------------------------------
// 10. Model-size x PEFT matrix.

void SizeMatrix(Outcome& o, const fs::path& work, const fs::path& corpus) {
  auto spec_for = [&](const std::string& dir) {
    json base = {{"name", "size_matrix"},
                 {"output_dir", (work / dir).string()},
                 {"model", {{"mode", "enc_dec"}, {"frame_stack", 4}}},
                 {"data", {{"train", (corpus / "manifest.jsonl").string()}}},
                 {"train", {{"steps", 40}, {"batch_size", 4}, {"lr", 3e-3}, {"seed", 10}, {"eval_interval", 0}}},
                 {"eval", {{"splits", {"train"}}, {"max_tokens", 60}}}};
    json models = json::array();
    models.push_back({{"label", "tiny"}, {"model", {{"d_model", 32}, {"n_heads", 4}, {"enc_layers", 1},
                                                   {"dec_layers", 1}, {"ffn_dim", 64}}}});
    models.push_back({{"label", "small"}, {"model", {{"d_model", 64}, {"n_heads", 4}, {"enc_layers", 2},
                                                    {"dec_layers", 2}, {"ffn_dim", 128}}}});
    models.push_back({{"label", "base"}, {"model", {{"d_model", 96}, {"n_heads", 4}, {"enc_layers", 3},
                                                   {"dec_layers", 3}, {"ffn_dim", 192}}}});
    return json{{"base", base}, {"axes", {{"peft", {"full", "adapter"}}, {"augment", {"none"}}, {"models", models}}}};
  };
  const auto t0 = std::chrono::steady_clock::now();
  const ResultsTable first = RunMatrix(ParseMatrixSpec(spec_for("matrix_a")));
  const ResultsTable second = RunMatrix(ParseMatrixSpec(spec_for("matrix_b")));
  o.Expect(first.rows().size() == 6, std::to_string(first.rows().size()) + " rows");
  bool identical = first.rows().size() == second.rows().size();
  for (size_t i = 0; identical && i < first.rows().size(); ++i) {
    const ResultRow &x = first.rows()[i], &y = second.rows()[i];
    identical = x.system == y.system && x.split == y.split && x.errors == y.errors && x.params == y.params &&
                std::memcmp(&x.loss, &y.loss, sizeof(double)) == 0 && std::memcmp(&x.wer, &y.wer, sizeof(double)) == 0;
  }
  o.Expect(identical, "the two runs differ");
  for (const ResultRow& r : first.rows()) {
    o.Expect(r.status == "ok", r.system + ": " + r.status);
    o.Expect(std::isfinite(r.loss) && std::isfinite(r.wer), r.system + ": missing loss/WER");
  }
  o.detail << first.rows().size() << " rows, bit-identical rerun " << (identical ? "yes" : "no") << ", "
           << Fmt("%.0f s", Seconds(t0)) << "\n" << first.ToText();
}

}  // namespace
}  // namespace kasr

int main(int argc, char** argv) {
  using namespace kasr;
  CLI::App app("kasr acceptance checks");
  std::string work_dir = (std::filesystem::temp_directory_path() / "kasr_acceptance").string();
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "Scratch directory (recreated)");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const fs::path work(work_dir);
  fs::remove_all(work);
  fs::create_directories(work);
  const fs::path corpus20 = work / "corpus20";
  SynthCorpus(1, 20, 4, corpus20);

  struct Criterion {
    int id;
    const char* title;
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", [](Outcome& o) { GradientCorrectness(o); }},
      {2, "CTC oracle equivalence", [](Outcome& o) { CtcOracle(o); }},
      {3, "augmentation signal properties", [](Outcome& o) { AugmentProperties(o); }},
      {4, "PEFT identity at init and frozen parameters", [&](Outcome& o) { PeftIdentity(o, work, corpus20); }},
      {5, "parameter-count ordering", [](Outcome& o) { ParamCounts(o); }},
      {6, "overfit smoke test", [&](Outcome& o) { Overfit(o, work, corpus20); }},
      {7, "PIF regularisation effect", [&](Outcome& o) { PifEffect(o, work, corpus20); }},
      {8, "filtering and split policies", [](Outcome& o) { FilterSplit(o); }},
      {9, "WER scorer", [](Outcome& o) { WerScorer(o); }},
      {10, "model-size x PEFT matrix", [&](Outcome& o) { SizeMatrix(o, work, corpus20); }},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failed += !o.pass;
    std::printf("[%s] %d. %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
