// kasr/evalkit.cc

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

#include "kasr/evalkit.h"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace kasr {

std::vector<int> GreedyCtcIds(const Tensor& log_probs, int blank) {
  if (log_probs.rank() != 2) throw ShapeError("ctc decode: expected T x V log-probs");
  const int T = log_probs.dim(0), V = log_probs.dim(1);
  std::vector<int> out;
  int prev = -1;
  for (int t = 0; t < T; ++t) {
    const auto row = log_probs.data().subspan(static_cast<size_t>(t) * V, V);
    const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::string GreedyCtcDecode(const Tensor& log_probs, const Vocabulary& vocab) {
  const std::vector<int> ids = GreedyCtcIds(log_probs, kBlankId);
  return vocab.Decode(ids);
}

ArDecodeResult GreedyArDecode(const Model& model, const EncoderStates& enc, const Vocabulary& vocab,
                              int max_len) {
  const ModelConfig& cfg = model.config();
  if (cfg.mode != ModelMode::kEncDec) throw ModeError("autoregressive decoding requires enc_dec mode");
  const auto& peft = model.peft();
  const int prompts = peft && peft->method == PeftMethod::kPrompt ? peft->prompts_dec : 0;
  // The prefix holds bos plus the emitted tokens.
  const int budget = std::min(max_len, cfg.max_len - prompts - 1);
  ArDecodeResult result;
  std::vector<int> prefix{kBosId};
  while (true) {
    if (static_cast<int>(result.ids.size()) >= budget) {
      result.truncated = true;
      break;
    }
    const Tensor logits = DecodeTeacherForced(model, enc, prefix);
    const int V = logits.dim(1);
    const auto row = logits.data().subspan(static_cast<size_t>(logits.dim(0) - 1) * V, V);
    const int next = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (next == kEosId) break;
    result.ids.push_back(next);
    prefix.push_back(next);
  }
  result.text = vocab.Decode(result.ids);
  return result;
}

std::string Transcribe(const Model& model, const FeatureMatrix& feat, std::span<const uint8_t> mask,
                       const Vocabulary& vocab, int max_tokens) {
  const EncoderStates enc = Encode(model, feat, mask);
  if (model.config().mode == ModelMode::kCtc) return GreedyCtcDecode(CtcLogProbs(model, enc), vocab);
  return GreedyArDecode(model, enc, vocab, max_tokens).text;
}

std::vector<std::string> SplitWords(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{NormalizeText(text)};
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

WerReport ComputeWer(std::string_view ref_text, std::string_view hyp_text) {
  const std::vector<std::string> ref = SplitWords(ref_text), hyp = SplitWords(hyp_text);
  if (ref.empty()) throw ArgumentError("wer: empty reference");
  const size_t R = ref.size(), H = hyp.size();
  std::vector<std::vector<int>> d(R + 1, std::vector<int>(H + 1, 0));
  for (size_t i = 0; i <= R; ++i) d[i][0] = static_cast<int>(i);
  for (size_t j = 0; j <= H; ++j) d[0][j] = static_cast<int>(j);
  for (size_t i = 1; i <= R; ++i)
    for (size_t j = 1; j <= H; ++j)
      d[i][j] = std::min({d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1), d[i - 1][j] + 1, d[i][j - 1] + 1});

  // Trace back preferring the diagonal, so equal-cost alignments use
  // substitutions rather than deletion/insertion pairs.
  WerReport rep;
  size_t i = R, j = H;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      const bool same = ref[i - 1] == hyp[j - 1];
      rep.ops.push_back(same ? EditOp::kMatch : EditOp::kSub);
      if (!same) ++rep.substitutions;
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      rep.ops.push_back(EditOp::kDel);
      ++rep.deletions;
      --i;
    } else {
      rep.ops.push_back(EditOp::kIns);
      ++rep.insertions;
      --j;
    }
  }
  std::reverse(rep.ops.begin(), rep.ops.end());
  rep.ref_words = static_cast<int>(R);
  rep.wer = static_cast<double>(rep.Errors()) / R;
  return rep;
}

ResultRow AggregateReport(std::span<const WerReport> reports, const std::string& system,
                          const std::string& split) {
  if (reports.empty()) throw ArgumentError("aggregate: no utterance reports");
  ResultRow row;
  row.system = system;
  row.split = split;
  for (const WerReport& r : reports) {
    row.errors += r.Errors();
    row.ref_words += r.ref_words;
  }
  row.utterances = static_cast<int>(reports.size());
  row.wer = static_cast<double>(row.errors) / row.ref_words;
  return row;
}

void ResultsTable::Add(ResultRow row) {
  auto key = [](const ResultRow& r) { return std::tie(r.system, r.split); };
  auto it = std::lower_bound(rows_.begin(), rows_.end(), row,
                             [&](const ResultRow& a, const ResultRow& b) { return key(a) < key(b); });
  if (it != rows_.end() && key(*it) == key(row))
    *it = std::move(row);
  else
    rows_.insert(it, std::move(row));
}

namespace {

std::string Num(double v, const char* fmt) {
  if (std::isnan(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

std::vector<std::string> SplitTabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, '\t')) out.push_back(cell);
  return out;
}

double ParseNum(const std::string& s) { return s == "-" ? NAN : std::stod(s); }

}  // namespace

std::string ResultsTable::ToTsv() const {
  std::ostringstream out;
  out << "system\tsplit\twer\terrors\tref_words\tutterances\tparams\twall_time_s\tloss\tstatus\n";
  for (const ResultRow& r : rows_)
    out << r.system << '\t' << r.split << '\t' << Num(r.wer, "%.6f") << '\t' << r.errors << '\t' << r.ref_words
        << '\t' << r.utterances << '\t' << r.params << '\t' << Num(r.wall_time_s, "%.3f") << '\t'
        << Num(r.loss, "%.6f") << '\t' << r.status << '\n';
  return out.str();
}

ResultsTable ResultsTable::FromTsv(const std::string& tsv) {
  std::istringstream in(tsv);
  std::string line;
  if (!std::getline(in, line) || SplitTabs(line).size() != 10 || SplitTabs(line)[0] != "system")
    throw FormatError("results table: missing or malformed header");
  ResultsTable table;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> c = SplitTabs(line);
    if (c.size() != 10) throw FormatError("results table line " + std::to_string(lineno) + ": expected 10 columns");
    try {
      ResultRow r;
      r.system = c[0];
      r.split = c[1];
      r.wer = ParseNum(c[2]);
      r.errors = std::stoi(c[3]);
      r.ref_words = std::stoi(c[4]);
      r.utterances = std::stoi(c[5]);
      r.params = std::stoull(c[6]);
      r.wall_time_s = ParseNum(c[7]);
      r.loss = ParseNum(c[8]);
      r.status = c[9];
      table.Add(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError("results table line " + std::to_string(lineno) + ": bad number");
    }
  }
  return table;
}

std::string ResultsTable::ToText() const {
  std::vector<std::string> systems, splits;
  std::map<std::pair<std::string, std::string>, const ResultRow*> cell;
  std::map<std::string, const ResultRow*> any_row;
  for (const ResultRow& r : rows_) {
    if (!any_row.count(r.system)) systems.push_back(r.system);
    any_row.emplace(r.system, &r);
    if (std::find(splits.begin(), splits.end(), r.split) == splits.end()) splits.push_back(r.split);
    cell[{r.system, r.split}] = &r;
  }
  std::sort(splits.begin(), splits.end());

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"System"};
  for (const std::string& s : splits) header.push_back(s + " WER%");
  header.insert(header.end(), {"Params", "Loss", "Status"});
  grid.push_back(header);
  for (const std::string& sys : systems) {
    std::vector<std::string> line{sys};
    std::string status = "ok";
    double loss = NAN;
    for (const std::string& s : splits) {
      auto it = cell.find({sys, s});
      line.push_back(it == cell.end() ? "-" : Num(100.0 * it->second->wer, "%.2f"));
      if (it != cell.end()) {
        if (it->second->status != "ok") status = it->second->status;
        if (!std::isnan(it->second->loss)) loss = it->second->loss;
      }
    }
    line.push_back(std::to_string(any_row[sys]->params));
    line.push_back(Num(loss, "%.4f"));
    line.push_back(status);
    grid.push_back(std::move(line));
  }
  std::vector<size_t> width(header.size(), 0);
  for (const auto& line : grid)
    for (size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (const auto& line : grid) {
    for (size_t c = 0; c < line.size(); ++c) {
      out << line[c];
      if (c + 1 < line.size()) out << std::string(width[c] - line[c].size() + 2, ' ');
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace kasr
