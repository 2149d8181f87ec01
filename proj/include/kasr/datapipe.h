// kasr/datapipe.h

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

// Manifests, quality filtering, speaker-disjoint splits, the character
// vocabulary, padded batching and the synthetic digit-string corpus.
//
// Manifest format: one JSON object per line,
//   {"id": str, "audio": path, "text": str, "speaker": str,
//    "duration_s": num, "prefilter_wer": num (optional),
//    "provenance": {"source_id": str, "method": str, "parameter": num}
//                  (optional)}
// Relative audio paths are resolved against the manifest's directory.

#ifndef KASR_DATAPIPE_H_
#define KASR_DATAPIPE_H_

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "kasr/common.h"
#include "kasr/signal.h"

namespace kasr {

// Reserved vocabulary ids; characters start at kNumReserved.
inline constexpr int kBlankId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

struct Provenance {
  std::string source_id;
  std::string method;
  double parameter = 0.0;
};

struct ManifestEntry {
  std::string id;
  std::string audio;
  std::string text;
  std::string speaker;
  double duration_s = 0.0;
  std::optional<double> prefilter_wer;
  std::optional<Provenance> provenance;
  /// Directory of the manifest the entry was read from; not serialised.
  std::filesystem::path base_dir;

  std::filesystem::path AudioPath() const;
};

nlohmann::json EntryToJson(const ManifestEntry& e);
/// Throws ParseError (with `line`) on schema violations.
ManifestEntry EntryFromJson(const nlohmann::json& j, int line);

std::vector<ManifestEntry> LoadManifest(const std::filesystem::path& path);
void SaveManifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

/// Lowercase (ASCII) and collapse runs of whitespace to one space, trimmed.
std::string NormalizeText(std::string_view text);
int WordCount(std::string_view text);
/// UTF-8 text split into code points, each as its own UTF-8 string.
std::vector<std::string> SplitCodePoints(std::string_view text);

struct FilterPolicy {
  double max_wer = 0.5;
  int min_words = 3;
  double max_duration_s = 30.0;
};

enum class FilterRule { kWer, kMinWords, kMaxDuration };
std::string FilterRuleName(FilterRule r);

struct RemovedEntry {
  ManifestEntry entry;
  std::vector<FilterRule> reasons;
};

struct FilterResult {
  std::vector<ManifestEntry> kept;
  std::vector<RemovedEntry> removed;
};

/// Removes an entry iff prefilter_wer > max_wer (entries without a WER skip
/// that rule), fewer than min_words words, or duration > max_duration_s.
FilterResult FilterEntries(std::span<const ManifestEntry> entries, const FilterPolicy& policy);

struct SplitPolicy {
  std::array<double, 3> fractions{0.70, 0.15, 0.15};
  uint64_t seed = 0;
};

inline constexpr std::array<const char*, 3> kSplitNames{"train", "dev", "test"};

struct SplitResult {
  std::array<std::vector<ManifestEntry>, 3> splits;
  /// speaker -> split index, in speaker order.
  std::map<std::string, int> speaker_split;
};

/// Shuffles speakers by seed and assigns each to the split whose
/// utterance-count target is relatively least filled.  Throws SplitError
/// for fewer than three speakers.
SplitResult SplitBySpeaker(std::span<const ManifestEntry> entries, const SplitPolicy& policy);
/// Writes train/dev/test.jsonl and speakers.tsv into `dir`.
void WriteSplit(const SplitResult& split, const std::filesystem::path& dir);

class Vocabulary {
 public:
  /// Sorted unique code points of the normalised transcripts.
  static Vocabulary Build(std::span<const std::string> transcripts);
  static Vocabulary FromSymbols(std::vector<std::string> symbols);

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::string& Symbol(int id) const { return symbols_.at(id); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  /// Character ids of the normalised text.  Throws VocabularyError naming
  /// the first unknown character.
  std::vector<int> Encode(std::string_view text) const;
  /// Reserved ids are skipped.
  std::string Decode(std::span<const int> ids) const;

  nlohmann::json ToJson() const { return symbols_; }
  static Vocabulary FromJson(const nlohmann::json& j);

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, int> index_;
};

struct Batch {
  std::vector<std::string> ids;
  /// Padded with zeros to the longest utterance in the batch.
  std::vector<FeatureMatrix> features;
  std::vector<std::vector<uint8_t>> masks;
  std::vector<std::vector<int>> targets;
};

using FeatureFn = std::function<FeatureMatrix(const ManifestEntry&)>;

/// Entries shuffled by `seed`, cut into batches of `batch_size`.
std::vector<Batch> MakeBatches(std::span<const ManifestEntry> entries, int batch_size,
                               const FeatureFn& features, const Vocabulary& vocab, uint64_t seed);

/// Pads `feat` with zero frames to `frames`; returns the validity mask.
std::vector<uint8_t> PadFeatures(FeatureMatrix& feat, int frames);

// Synthetic "spoken digit string" corpus.  Each digit word is a pair of
// tones (one of five low tones x one of two high tones) scaled by a
// per-speaker factor.
inline constexpr std::array<const char*, 10> kDigitWords{"zero", "one", "two",   "three", "four",
                                                         "five", "six", "seven", "eight", "nine"};

std::pair<double, double> DigitTones(int digit);

struct SynthUtterance {
  Waveform wave;
  std::vector<int> digits;
  /// [begin, end) sample range of each digit.
  std::vector<std::pair<size_t, size_t>> segments;
  std::string text;
};

SynthUtterance SynthesizeDigits(std::span<const int> digits, double speaker_factor, Rng& rng);
double SpeakerFactor(uint64_t seed, int speaker);

/// Writes <out_dir>/wav/*.wav and <out_dir>/manifest.jsonl (audio paths
/// relative to out_dir) and returns the entries.
std::vector<ManifestEntry> SynthCorpus(uint64_t seed, int n_utts, int n_speakers,
                                       const std::filesystem::path& out_dir);

}  // namespace kasr

#endif  // KASR_DATAPIPE_H_
