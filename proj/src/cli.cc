// kasr/cli.cc

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

#include "kasr/cli.h"

#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "kasr/augment.h"
#include "kasr/datapipe.h"
#include "kasr/evalkit.h"
#include "kasr/gradcheck.h"
#include "kasr/model.h"
#include "kasr/runner.h"

namespace kasr {

using nlohmann::json;

namespace {

// Thrown for flag combinations CLI11 cannot express.
class UsageError : public Error {
 public:
  using Error::Error;
};

std::string ReadFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"kasr: children's speech recognition finetuning toolkit", "kasr"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // synth
  uint64_t synth_seed = 1;
  int synth_utts = 20, synth_speakers = 4;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic digit-string corpus");
  synth->add_option("--seed", synth_seed, "Corpus seed");
  synth->add_option("--utts", synth_utts, "Number of utterances")->check(CLI::PositiveNumber);
  synth->add_option("--speakers", synth_speakers, "Number of speakers")->check(CLI::PositiveNumber);
  synth->add_option("--out,--out-dir", synth_out, "Output directory")->required();

  // filter
  std::string filter_in, filter_out, filter_removed;
  FilterPolicy fpol;
  auto* filter = app.add_subcommand("filter", "Drop low-quality, short and long utterances");
  filter->add_option("--manifest", filter_in, "Input manifest")->required();
  filter->add_option("--out", filter_out, "Manifest of kept entries")->required();
  filter->add_option("--removed", filter_removed, "JSONL of removed entries with reasons");
  filter->add_option("--max-wer", fpol.max_wer, "Remove entries with prefilter_wer above this");
  filter->add_option("--min-words", fpol.min_words, "Remove transcripts with fewer words");
  filter->add_option("--max-duration", fpol.max_duration_s, "Remove utterances longer than this (s)");

  // split
  std::string split_in, split_out;
  SplitPolicy spol;
  std::vector<double> fractions{0.70, 0.15, 0.15};
  auto* split = app.add_subcommand("split", "Speaker-disjoint train/dev/test split");
  split->add_option("--manifest", split_in, "Input manifest")->required();
  split->add_option("--out,--out-dir", split_out, "Output directory")->required();
  split->add_option("--seed", spol.seed, "Shuffle seed");
  split->add_option("--fractions", fractions, "train dev test fractions")->expected(3)->delimiter(',');

  // augment
  std::string aug_in, aug_out, aug_method;
  int aug_copies = 2;
  uint64_t aug_seed = 0;
  bool aug_no_orig = false;
  auto* augment = app.add_subcommand("augment", "Write perturbed waveform copies with provenance");
  augment->add_option("--manifest", aug_in, "Input manifest")->required();
  augment->add_option("--out,--out-dir", aug_out, "Output directory")->required();
  augment->add_option("--method", aug_method, "pp, sp or vtlp")->required();
  augment->add_option("--copies", aug_copies, "Copies per utterance")->check(CLI::NonNegativeNumber);
  augment->add_option("--seed", aug_seed, "Seed");
  augment->add_flag("--no-originals", aug_no_orig, "Write only the copies");

  // train
  std::string train_cfg;
  auto* train = app.add_subcommand("train", "Train a model from an experiment config");
  train->add_option("--config", train_cfg, "Experiment config (JSON)")->required();

  // eval
  std::string eval_ckpt, eval_manifest, eval_split = "eval", eval_cfg, eval_hyps, eval_tsv;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a manifest by greedy decoding");
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--manifest", eval_manifest, "Manifest to score")->required();
  eval->add_option("--split", eval_split, "Split label for the table");
  eval->add_option("--config", eval_cfg, "Expected experiment config (integrity check)");
  eval->add_option("--hyps", eval_hyps, "Write per-utterance hypotheses (TSV)");
  eval->add_option("--tsv", eval_tsv, "Write the results table (TSV)");

  // report
  std::vector<std::string> report_in;
  std::string report_format = "text";
  auto* report = app.add_subcommand("report", "Merge result tables and render them");
  report->add_option("tables", report_in, "Result TSV files")->required();
  report->add_option("--format", report_format, "text or tsv")->check(CLI::IsMember({"text", "tsv"}));

  // matrix
  std::string matrix_spec;
  auto* matrix = app.add_subcommand("matrix", "Run an experiment matrix");
  matrix->add_option("--spec", matrix_spec, "Matrix spec (JSON)")->required();

  // gradcheck
  uint64_t gc_seed = 1;
  double gc_eps = 1e-4, gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of all gradients");
  gradcheck->add_option("--seed", gc_seed, "Seed of the check points");
  gradcheck->add_option("--eps", gc_eps, "Finite-difference step");
  gradcheck->add_option("--tol", gc_tol, "Maximum accepted relative error");

  // params
  std::string params_cfg, params_mode = "enc_dec", params_peft = "full";
  bool params_full = false;
  auto* params = app.add_subcommand("params", "Print the trainable parameter count");
  params->add_option("--config", params_cfg, "Experiment config (uses its model and peft)");
  params->add_option("--mode", params_mode, "ctc or enc_dec (toy model)");
  params->add_option("--peft", params_peft, "PEFT method");
  params->add_flag("--full-scale", params_full, "Whisper-small-shaped model with full-size PEFT settings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) {
      const auto entries = SynthCorpus(synth_seed, synth_utts, synth_speakers, synth_out);
      out << "wrote " << entries.size() << " utterances to " << synth_out << "/manifest.jsonl\n";
    } else if (*filter) {
      const auto entries = LoadManifest(filter_in);
      const FilterResult r = FilterEntries(entries, fpol);
      SaveManifest(filter_out, r.kept);
      if (!filter_removed.empty()) {
        std::ostringstream rm;
        for (const RemovedEntry& e : r.removed) {
          json j = EntryToJson(e.entry);
          json reasons = json::array();
          for (FilterRule rule : e.reasons) reasons.push_back(FilterRuleName(rule));
          j["reasons"] = reasons;
          rm << j.dump() << '\n';
        }
        WriteFile(filter_removed, rm.str());
      }
      out << "kept " << r.kept.size() << ", removed " << r.removed.size() << '\n';
    } else if (*split) {
      std::copy(fractions.begin(), fractions.end(), spol.fractions.begin());
      const SplitResult r = SplitBySpeaker(LoadManifest(split_in), spol);
      WriteSplit(r, split_out);
      for (int s = 0; s < 3; ++s) out << kSplitNames[s] << ": " << r.splits[s].size() << " utterances\n";
    } else if (*augment) {
      const AugmentMethod method = ParseAugmentMethod(aug_method);
      if (UsesSpecAugment(method) || method == AugmentMethod::kNone)
        throw UsageError("augment writes waveforms; use pp, sp or vtlp (SpecAugment is applied during training)");
      const std::filesystem::path dir(aug_out);
      std::filesystem::create_directories(dir / "wav");
      std::vector<ManifestEntry> result;
      for (const ManifestEntry& e : LoadManifest(aug_in)) {
        if (!aug_no_orig) {
          ManifestEntry orig = e;
          orig.audio = std::filesystem::absolute(e.AudioPath()).string();
          result.push_back(orig);
        }
        AugmentPolicy pol;
        pol.method = method;
        pol.copies = aug_copies;
        pol.seed = DeriveSeed(aug_seed, e.id);
        Rng rng(pol.seed);
        const auto copies = MakeAugmentedCopies(LoadWav(e.AudioPath()), pol, rng);
        for (size_t c = 0; c < copies.size(); ++c) {
          ManifestEntry ce = e;
          ce.id = e.id + "-" + aug_method + std::to_string(c);
          ce.audio = "wav/" + ce.id + ".wav";
          ce.duration_s = copies[c].wave.DurationSeconds();
          ce.provenance = Provenance{e.id, copies[c].method, copies[c].parameter};
          SaveWav(copies[c].wave, dir / ce.audio);
          result.push_back(std::move(ce));
        }
      }
      SaveManifest(dir / "manifest.jsonl", result);
      out << "wrote " << result.size() << " entries to " << (dir / "manifest.jsonl").string() << '\n';
    } else if (*train) {
      const ExperimentConfig cfg = LoadConfig(train_cfg);
      const RunRecord rec = Train(cfg);
      out << rec.results.ToText();
      out << "trainable params: " << rec.trainable_params << ", steps: " << rec.steps.size()
          << ", final loss: " << rec.steps.back().total << ", output: " << cfg.output_dir << '\n';
    } else if (*eval) {
      std::optional<ExperimentConfig> expected;
      if (!eval_cfg.empty()) expected = LoadConfig(eval_cfg, false);
      std::vector<Hypothesis> hyps;
      const ResultsTable table = Evaluate(eval_ckpt, eval_manifest, eval_split, expected, &hyps);
      if (!eval_hyps.empty()) {
        std::ostringstream h;
        h << "id\tref\thyp\terrors\tref_words\n";
        for (const Hypothesis& x : hyps)
          h << x.id << '\t' << x.ref << '\t' << x.hyp << '\t' << x.report.Errors() << '\t' << x.report.ref_words << '\n';
        WriteFile(eval_hyps, h.str());
      }
      if (!eval_tsv.empty()) WriteFile(eval_tsv, table.ToTsv());
      out << table.ToText();
    } else if (*report) {
      ResultsTable merged;
      for (const std::string& path : report_in) {
        const ResultsTable table = ResultsTable::FromTsv(ReadFile(path));
        for (const ResultRow& r : table.rows()) merged.Add(r);
      }
      out << (report_format == "tsv" ? merged.ToTsv() : merged.ToText());
    } else if (*matrix) {
      json j;
      try {
        j = json::parse(ReadFile(matrix_spec));
      } catch (const json::parse_error& e) {
        throw ConfigError(matrix_spec + ": " + e.what());
      }
      const ResultsTable table = RunMatrix(ParseMatrixSpec(j));
      out << table.ToText();
    } else if (*gradcheck) {
      bool ok = true;
      for (const GradCheckResult& r : RunGradCheckSuite(gc_seed, gc_eps)) {
        const bool pass = r.max_rel_err < gc_tol;
        ok = ok && pass;
        char line[160];
        std::snprintf(line, sizeof(line), "%-28s max_rel_err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
                      pass ? "ok" : "FAIL");
        out << line;
      }
      out << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
      return ok ? kExitOk : kExitData;
    } else if (*params) {
      ModelConfig mc;
      PeftConfig pc;
      if (!params_cfg.empty()) {
        const ExperimentConfig cfg = LoadConfig(params_cfg, false);
        mc = cfg.model;
        if (mc.vocab_size == 0) mc.vocab_size = ModelConfig{}.vocab_size;
        pc = cfg.peft;
      } else if (params_full) {
        mc = ModelConfig::FullScale();
        pc.method = ParsePeftMethod(params_peft);
      } else {
        mc = ModelConfig::Toy(ParseModelMode(params_mode));
        pc = PeftConfig::Toy(ParsePeftMethod(params_peft));
      }
      out << CountTrainableParams(mc, pc) << '\n';
    }
  } catch (const UsageError& e) {
    err << "kasr: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergedError& e) {
    err << "kasr: diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "kasr: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace kasr
