// kasr/evalkit.h

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

// Greedy decoding, word error rate and result tables.

#ifndef KASR_EVALKIT_H_
#define KASR_EVALKIT_H_

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kasr/autodiff.h"
#include "kasr/datapipe.h"
#include "kasr/model.h"

namespace kasr {

/// Frame argmax, merge adjacent repeats, drop blanks.
std::vector<int> GreedyCtcIds(const Tensor& log_probs, int blank = kBlankId);
std::string GreedyCtcDecode(const Tensor& log_probs, const Vocabulary& vocab);

struct ArDecodeResult {
  std::vector<int> ids;
  std::string text;
  /// True if max_len tokens were emitted without eos.
  bool truncated = false;
};

/// Argmax decoding from bos until eos or `max_len` tokens (also capped by
/// the model's position budget).
ArDecodeResult GreedyArDecode(const Model& model, const EncoderStates& enc, const Vocabulary& vocab,
                              int max_len);

/// Mode-dispatching greedy transcription of one utterance.
std::string Transcribe(const Model& model, const FeatureMatrix& feat, std::span<const uint8_t> mask,
                       const Vocabulary& vocab, int max_tokens = 200);

enum class EditOp { kMatch, kSub, kDel, kIns };

struct WerReport {
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
  int ref_words = 0;
  double wer = 0.0;
  /// One minimal-cost alignment, in reference order.
  std::vector<EditOp> ops;

  int Errors() const { return substitutions + deletions + insertions; }
};

std::vector<std::string> SplitWords(std::string_view text);

/// Unit-cost word alignment of the normalised texts; ties prefer a
/// substitution over a deletion/insertion pair.  Throws ArgumentError for
/// an empty reference.
WerReport ComputeWer(std::string_view ref, std::string_view hyp);

struct ResultRow {
  std::string system;
  std::string split;
  double wer = NAN;
  int errors = 0;
  int ref_words = 0;
  int utterances = 0;
  size_t params = 0;
  double wall_time_s = 0.0;
  double loss = NAN;
  /// "ok", or the failure message of a matrix cell.
  std::string status = "ok";
};

/// Corpus-level row: pooled errors over pooled reference words.
ResultRow AggregateReport(std::span<const WerReport> reports, const std::string& system,
                          const std::string& split);

/// At most one row per (system, split); rows are kept sorted by those keys.
class ResultsTable {
 public:
  /// Replaces an existing row with the same keys.
  void Add(ResultRow row);
  const std::vector<ResultRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

  std::string ToTsv() const;
  /// Column-aligned text: one line per system, one WER column per split,
  /// then the trainable parameters.
  std::string ToText() const;

  static ResultsTable FromTsv(const std::string& tsv);

 private:
  std::vector<ResultRow> rows_;
};

}  // namespace kasr

#endif  // KASR_EVALKIT_H_
