// tests/cli_test.cc

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

#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "kasr/cli.h"
#include "kasr/datapipe.h"
#include "test_util.h"

using namespace kasr;
using kasr::testing::ScratchDir;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result Run(std::vector<std::string> args) {
  args.insert(args.begin(), "kasr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = RunCli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string Slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("cli: usage errors") {
  CHECK(Run({}).code == kExitUsage);
  CHECK(Run({"frobnicate"}).code == kExitUsage);
  CHECK(Run({"synth", "--bogus"}).code == kExitUsage);
  CHECK(Run({"synth"}).code == kExitUsage);
  CHECK(Run({"--help"}).code == kExitOk);
  CHECK(Run({"report", "x.tsv", "--format", "html"}).code == kExitUsage);
}

TEST_CASE("cli: params") {
  Result r = Run({"params", "--peft", "lora"});
  CHECK(r.code == kExitOk);
  CHECK(r.out == "12288\n");
  CHECK(Run({"params", "--peft", "adapter"}).out == "16768\n");

  const auto dir = ScratchDir("cli_params");
  std::ofstream(dir / "lora.json") << R"({"model": {"mode": "enc_dec"}, "peft": {"method": "lora"},
                                         "data": {"train": "m.jsonl"}, "train": {"seed": 1}})";
  r = Run({"params", "--config", (dir / "lora.json").string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out == "12288\n");

  const auto count = [](const char* m) {
    return std::stoull(Run({"params", "--full-scale", "--peft", m}).out);
  };
  CHECK(count("prompt") < count("prefix"));
  CHECK(count("prefix") < count("lora"));
  CHECK(count("lora") < count("adapter"));
  CHECK(count("adapter") < count("full"));
}

TEST_CASE("cli: synth, filter, split, augment") {
  const auto dir = ScratchDir("cli_data");
  const auto a = dir / "a", b = dir / "b";
  REQUIRE(Run({"synth", "--seed", "1", "--utts", "6", "--speakers", "3", "--out", a.string()}).code == kExitOk);
  REQUIRE(Run({"synth", "--seed", "1", "--utts", "6", "--speakers", "3", "--out-dir", b.string()}).code == kExitOk);
  CHECK(Slurp(a / "manifest.jsonl") == Slurp(b / "manifest.jsonl"));
  for (const auto& e : LoadManifest(a / "manifest.jsonl"))
    CHECK(Slurp(e.AudioPath()) == Slurp(b / e.audio));

  // Filter fixture: one entry longer than 30 s.
  std::vector<ManifestEntry> entries = LoadManifest(a / "manifest.jsonl");
  entries[2].duration_s = 31.0;
  SaveManifest(dir / "fixture.jsonl", entries);
  Result r = Run({"filter", "--manifest", (dir / "fixture.jsonl").string(), "--out", (dir / "kept.jsonl").string(),
                  "--removed", (dir / "removed.jsonl").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(LoadManifest(dir / "kept.jsonl").size() == 5);
  std::ifstream removed(dir / "removed.jsonl");
  std::string line;
  REQUIRE(std::getline(removed, line));
  const auto j = nlohmann::json::parse(line);
  CHECK(j["id"] == entries[2].id);
  CHECK(j["reasons"] == nlohmann::json::array({"max_duration"}));
  CHECK_FALSE(std::getline(removed, line));

  r = Run({"split", "--manifest", (a / "manifest.jsonl").string(), "--out", (dir / "split").string(), "--seed",
           "4", "--fractions", "0.5,0.25,0.25"});
  REQUIRE(r.code == kExitOk);
  size_t total = 0;
  for (const char* s : kSplitNames) total += LoadManifest(dir / "split" / (std::string(s) + ".jsonl")).size();
  CHECK(total == 6);

  r = Run({"augment", "--manifest", (a / "manifest.jsonl").string(), "--out", (dir / "aug").string(), "--method",
           "sp", "--seed", "2"});
  REQUIRE(r.code == kExitOk);
  const auto aug = LoadManifest(dir / "aug" / "manifest.jsonl");
  CHECK(aug.size() == 18);
  int copies = 0;
  for (const auto& e : aug) {
    CHECK(std::filesystem::exists(e.AudioPath()));
    if (e.provenance) {
      ++copies;
      CHECK(e.provenance->method == "sp");
      CHECK((e.provenance->parameter == 0.9 || e.provenance->parameter == 1.1));
    }
  }
  CHECK(copies == 12);
  CHECK(Run({"augment", "--manifest", (a / "manifest.jsonl").string(), "--out", (dir / "aug2").string(),
             "--method", "sa"})
            .code == kExitUsage);

  // Data errors exit with 2.
  CHECK(Run({"filter", "--manifest", (dir / "missing.jsonl").string(), "--out", (dir / "x.jsonl").string()}).code ==
        kExitData);
}

TEST_CASE("cli: train, eval, report, divergence") {
  const auto dir = ScratchDir("cli_train");
  REQUIRE(Run({"synth", "--seed", "3", "--utts", "6", "--speakers", "3", "--out", (dir / "c").string()}).code ==
          kExitOk);
  const std::string cfg = R"({"name": "cli", "output_dir": "run",
    "model": {"d_model": 16, "n_heads": 2, "enc_layers": 1, "ffn_dim": 24, "frame_stack": 4},
    "data": {"train": "c/manifest.jsonl"},
    "train": {"steps": 3, "batch_size": 2, "lr": 0.003, "seed": 1, "eval_interval": 0}})";
  std::ofstream(dir / "cfg.json") << cfg;
  Result r = Run({"train", "--config", (dir / "cfg.json").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("trainable params") != std::string::npos);

  r = Run({"eval", "--checkpoint", (dir / "run" / "final.ckpt").string(), "--manifest",
           (dir / "c" / "manifest.jsonl").string(), "--split", "train", "--config", (dir / "cfg.json").string(),
           "--tsv", (dir / "t.tsv").string(), "--hyps", (dir / "h.tsv").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(std::filesystem::exists(dir / "h.tsv"));
  r = Run({"report", (dir / "t.tsv").string(), "--format", "tsv"});
  CHECK(r.code == kExitOk);
  CHECK(r.out == Slurp(dir / "t.tsv"));

  std::ofstream(dir / "bad.json") << R"({"data": {"train": "c/manifest.jsonl"}, "train": {"seed": 1, "stepz": 3}})";
  r = Run({"train", "--config", (dir / "bad.json").string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("train.stepz") != std::string::npos);

  std::string boom = cfg;
  boom.replace(boom.find("0.003"), 5, "1e300");
  boom.replace(boom.find("\"steps\": 3"), 10, "\"steps\": 20");
  std::ofstream(dir / "boom.json") << boom;
  CHECK(Run({"train", "--config", (dir / "boom.json").string()}).code == kExitDiverged);
}
