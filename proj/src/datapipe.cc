// kasr/datapipe.cc

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

#include "kasr/datapipe.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <unordered_set>

namespace kasr {

using nlohmann::json;

std::filesystem::path ManifestEntry::AudioPath() const {
  std::filesystem::path p(audio);
  if (p.is_relative() && !base_dir.empty()) return base_dir / p;
  return p;
}

json EntryToJson(const ManifestEntry& e) {
  json j = {{"id", e.id}, {"audio", e.audio}, {"text", e.text}, {"speaker", e.speaker},
            {"duration_s", e.duration_s}};
  if (e.prefilter_wer) j["prefilter_wer"] = *e.prefilter_wer;
  if (e.provenance)
    j["provenance"] = {{"source_id", e.provenance->source_id},
                       {"method", e.provenance->method},
                       {"parameter", e.provenance->parameter}};
  return j;
}

ManifestEntry EntryFromJson(const json& j, int line) {
  auto fail = [line](const std::string& msg) -> ParseError {
    return ParseError("manifest line " + std::to_string(line) + ": " + msg);
  };
  if (!j.is_object()) throw fail("expected a JSON object");
  ManifestEntry e;
  auto get_string = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string()) throw fail(std::string("missing string field '") + key + "'");
    return j[key].get<std::string>();
  };
  e.id = get_string("id");
  e.audio = get_string("audio");
  e.text = get_string("text");
  e.speaker = get_string("speaker");
  if (!j.contains("duration_s") || !j["duration_s"].is_number()) throw fail("missing numeric field 'duration_s'");
  e.duration_s = j["duration_s"].get<double>();
  if (!(e.duration_s > 0.0)) throw fail("duration_s must be positive");
  if (NormalizeText(e.text).empty()) throw fail("empty transcript");
  if (j.contains("prefilter_wer") && !j["prefilter_wer"].is_null()) {
    if (!j["prefilter_wer"].is_number()) throw fail("prefilter_wer must be a number");
    e.prefilter_wer = j["prefilter_wer"].get<double>();
    if (*e.prefilter_wer < 0.0) throw fail("prefilter_wer must be non-negative");
  }
  if (j.contains("provenance") && !j["provenance"].is_null()) {
    const json& p = j["provenance"];
    if (!p.is_object()) throw fail("provenance must be an object");
    Provenance prov;
    prov.source_id = p.value("source_id", "");
    prov.method = p.value("method", "");
    prov.parameter = p.value("parameter", 0.0);
    e.provenance = prov;
  }
  return e;
}

std::vector<ManifestEntry> LoadManifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::unordered_set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    ManifestEntry e = EntryFromJson(j, lineno);
    if (!seen.insert(e.id).second)
      throw IntegrityError("manifest line " + std::to_string(lineno) + ": duplicate id '" + e.id + "'");
    e.base_dir = path.parent_path();
    entries.push_back(std::move(e));
  }
  return entries;
}

void SaveManifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const ManifestEntry& e : entries) out << EntryToJson(e).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::string NormalizeText(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
  }
  return out;
}

int WordCount(std::string_view text) {
  const std::string norm = NormalizeText(text);
  if (norm.empty()) return 0;
  return 1 + static_cast<int>(std::count(norm.begin(), norm.end(), ' '));
}

std::vector<std::string> SplitCodePoints(std::string_view text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    size_t len = 1;
    if (lead >= 0xf0) len = 4;
    else if (lead >= 0xe0) len = 3;
    else if (lead >= 0xc0) len = 2;
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::string FilterRuleName(FilterRule r) {
  switch (r) {
    case FilterRule::kWer: return "wer";
    case FilterRule::kMinWords: return "min_words";
    case FilterRule::kMaxDuration: return "max_duration";
  }
  return "?";
}

FilterResult FilterEntries(std::span<const ManifestEntry> entries, const FilterPolicy& policy) {
  FilterResult result;
  for (const ManifestEntry& e : entries) {
    std::vector<FilterRule> reasons;
    if (e.prefilter_wer && *e.prefilter_wer > policy.max_wer) reasons.push_back(FilterRule::kWer);
    if (WordCount(e.text) < policy.min_words) reasons.push_back(FilterRule::kMinWords);
    if (e.duration_s > policy.max_duration_s) reasons.push_back(FilterRule::kMaxDuration);
    if (reasons.empty())
      result.kept.push_back(e);
    else
      result.removed.push_back({e, std::move(reasons)});
  }
  return result;
}

SplitResult SplitBySpeaker(std::span<const ManifestEntry> entries, const SplitPolicy& policy) {
  double total_frac = 0.0;
  for (double f : policy.fractions) {
    if (f < 0.0) throw SplitError("split fractions must be non-negative");
    total_frac += f;
  }
  if (std::abs(total_frac - 1.0) > 1e-9) throw SplitError("split fractions must sum to 1");

  std::map<std::string, int> counts;
  for (const ManifestEntry& e : entries) ++counts[e.speaker];
  if (counts.size() < 3)
    throw SplitError("speaker-disjoint split needs at least 3 speakers, got " + std::to_string(counts.size()));

  std::vector<std::string> speakers;
  for (const auto& [spk, _] : counts) speakers.push_back(spk);
  Rng rng(policy.seed);
  for (size_t i = speakers.size() - 1; i > 0; --i)
    std::swap(speakers[i], speakers[static_cast<size_t>(rng.UniformInt(0, static_cast<int64_t>(i)))]);

  const double n = static_cast<double>(entries.size());
  std::array<double, 3> assigned{0, 0, 0};
  SplitResult result;
  for (const std::string& spk : speakers) {
    int best = -1;
    double best_deficit = -INFINITY;
    for (int s = 0; s < 3; ++s) {
      const double target = policy.fractions[s] * n;
      if (target <= 0.0) continue;
      const double deficit = (target - assigned[s]) / target;
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    result.speaker_split[spk] = best;
    assigned[best] += counts[spk];
  }
  for (const ManifestEntry& e : entries) result.splits[result.speaker_split[e.speaker]].push_back(e);
  return result;
}

void WriteSplit(const SplitResult& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (int s = 0; s < 3; ++s) SaveManifest(dir / (std::string(kSplitNames[s]) + ".jsonl"), split.splits[s]);
  std::ofstream audit(dir / "speakers.tsv", std::ios::trunc);
  if (!audit) throw IoError("cannot write " + (dir / "speakers.tsv").string());
  audit << "speaker\tsplit\n";
  for (const auto& [spk, s] : split.speaker_split) audit << spk << '\t' << kSplitNames[s] << '\n';
}

Vocabulary Vocabulary::Build(std::span<const std::string> transcripts) {
  std::set<std::string> chars;
  for (const std::string& t : transcripts)
    for (std::string& cp : SplitCodePoints(NormalizeText(t))) chars.insert(std::move(cp));
  std::vector<std::string> symbols{"<blank>", "<bos>", "<eos>", "<unk>"};
  symbols.insert(symbols.end(), chars.begin(), chars.end());
  return FromSymbols(std::move(symbols));
}

Vocabulary Vocabulary::FromSymbols(std::vector<std::string> symbols) {
  if (symbols.size() < kNumReserved || symbols[kBlankId] != "<blank>" || symbols[kBosId] != "<bos>" ||
      symbols[kEosId] != "<eos>" || symbols[kUnkId] != "<unk>")
    throw VocabularyError("vocabulary must start with <blank> <bos> <eos> <unk>");
  Vocabulary v;
  v.symbols_ = std::move(symbols);
  for (int i = 0; i < v.size(); ++i)
    if (!v.index_.emplace(v.symbols_[i], i).second)
      throw VocabularyError("duplicate vocabulary symbol '" + v.symbols_[i] + "'");
  return v;
}

Vocabulary Vocabulary::FromJson(const json& j) {
  if (!j.is_array()) throw FormatError("vocabulary must be a JSON array");
  return FromSymbols(j.get<std::vector<std::string>>());
}

std::vector<int> Vocabulary::Encode(std::string_view text) const {
  std::vector<int> ids;
  for (const std::string& cp : SplitCodePoints(NormalizeText(text))) {
    auto it = index_.find(cp);
    if (it == index_.end() || it->second < kNumReserved)
      throw VocabularyError("character '" + cp + "' is not in the vocabulary");
    ids.push_back(it->second);
  }
  return ids;
}

std::string Vocabulary::Decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids)
    if (id >= kNumReserved && id < size()) out += symbols_[id];
  return out;
}

std::vector<uint8_t> PadFeatures(FeatureMatrix& feat, int frames) {
  std::vector<uint8_t> mask(frames, 0);
  std::fill_n(mask.begin(), std::min(frames, feat.num_frames), 1);
  if (frames > feat.num_frames) {
    feat.values.resize(static_cast<size_t>(frames) * feat.num_bins, 0.0);
    feat.num_frames = frames;
  }
  return mask;
}

std::vector<Batch> MakeBatches(std::span<const ManifestEntry> entries, int batch_size,
                               const FeatureFn& features, const Vocabulary& vocab, uint64_t seed) {
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  std::vector<size_t> order(entries.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(rng.UniformInt(0, static_cast<int64_t>(i - 1)))]);

  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    const size_t end = std::min(order.size(), start + batch_size);
    int max_frames = 0;
    for (size_t k = start; k < end; ++k) {
      const ManifestEntry& e = entries[order[k]];
      std::vector<int> target;
      try {
        target = vocab.Encode(e.text);
      } catch (const VocabularyError& err) {
        throw VocabularyError(std::string(err.what()) + " (utterance '" + e.id + "')");
      }
      b.ids.push_back(e.id);
      b.targets.push_back(std::move(target));
      b.features.push_back(features(e));
      max_frames = std::max(max_frames, b.features.back().num_frames);
    }
    for (FeatureMatrix& f : b.features) b.masks.push_back(PadFeatures(f, max_frames));
    batches.push_back(std::move(b));
  }
  return batches;
}

std::pair<double, double> DigitTones(int digit) {
  if (digit < 0 || digit > 9) throw ArgumentError("digit out of range");
  // Centres of a 16-channel mel bank over 0-8 kHz: low tones on channels
  // 2..6, high tones on channels 10 and 12.
  const double step = HzToMel(8000.0) / 17.0;
  const double low = MelToHz(step * (2 + digit % 5));
  const double high = MelToHz(step * (10 + 2 * (digit / 5)));
  return {low, high};
}

double SpeakerFactor(uint64_t seed, int speaker) {
  Rng rng(DeriveSeed(seed, "speaker:" + std::to_string(speaker)));
  return 0.96 + 0.08 * rng.Uniform();
}

SynthUtterance SynthesizeDigits(std::span<const int> digits, double speaker_factor, Rng& rng) {
  constexpr int kRate = kCanonicalSampleRate;
  constexpr double kEdge = 0.1;
  constexpr double kRamp = 0.01;
  SynthUtterance u;
  u.digits.assign(digits.begin(), digits.end());
  auto& x = u.wave.samples;
  u.wave.sample_rate = kRate;
  x.assign(static_cast<size_t>(kEdge * kRate), 0.0);
  for (size_t i = 0; i < digits.size(); ++i) {
    if (i > 0) x.resize(x.size() + static_cast<size_t>((0.08 + 0.07 * rng.Uniform()) * kRate), 0.0);
    const auto len = static_cast<size_t>((0.40 + 0.15 * rng.Uniform()) * kRate);
    const auto [low, high] = DigitTones(digits[i]);
    const double f1 = low * speaker_factor, f2 = high * speaker_factor;
    const double ph1 = 2.0 * std::numbers::pi * rng.Uniform(), ph2 = 2.0 * std::numbers::pi * rng.Uniform();
    const size_t begin = x.size();
    const auto ramp = static_cast<size_t>(kRamp * kRate);
    for (size_t n = 0; n < len; ++n) {
      const double t = static_cast<double>(n) / kRate;
      double env = 1.0;
      if (n < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * n / ramp);
      else if (len - n <= ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (len - n) / ramp);
      x.push_back(env * (0.3 * std::sin(2.0 * std::numbers::pi * f1 * t + ph1) +
                         0.3 * std::sin(2.0 * std::numbers::pi * f2 * t + ph2)));
    }
    u.segments.emplace_back(begin, x.size());
    if (!u.text.empty()) u.text += ' ';
    u.text += kDigitWords[digits[i]];
  }
  x.resize(x.size() + static_cast<size_t>(kEdge * kRate), 0.0);
  for (double& s : x) s += 0.003 * rng.Normal();
  return u;
}

std::vector<ManifestEntry> SynthCorpus(uint64_t seed, int n_utts, int n_speakers,
                                       const std::filesystem::path& out_dir) {
  if (n_speakers < 1 || n_utts < n_speakers)
    throw ArgumentError("synth: need n_utts >= n_speakers >= 1");
  std::filesystem::create_directories(out_dir / "wav");
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < n_utts; ++i) {
    const int speaker = i % n_speakers;
    char id[64];
    std::snprintf(id, sizeof(id), "spk%03d-utt%04d", speaker, i);
    Rng rng(DeriveSeed(seed, id));
    std::vector<int> digits(static_cast<size_t>(rng.UniformInt(3, 8)));
    for (int& d : digits) d = static_cast<int>(rng.UniformInt(0, 9));
    SynthUtterance u = SynthesizeDigits(digits, SpeakerFactor(seed, speaker), rng);
    ManifestEntry e;
    e.id = id;
    e.audio = "wav/" + e.id + ".wav";
    e.text = u.text;
    e.speaker = "spk" + std::to_string(speaker);
    e.duration_s = u.wave.DurationSeconds();
    e.base_dir = out_dir;
    SaveWav(u.wave, out_dir / e.audio);
    entries.push_back(std::move(e));
  }
  SaveManifest(out_dir / "manifest.jsonl", entries);
  return entries;
}

}  // namespace kasr
