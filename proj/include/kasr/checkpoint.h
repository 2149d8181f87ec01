// kasr/checkpoint.h

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

// Binary parameter checkpoints.  All integers little-endian:
//
//   magic     8 bytes  "KASRCKPT"
//   version   u32      1
//   meta_len  u64      length of the metadata blob
//   meta      bytes    UTF-8 JSON (model/PEFT config, vocabulary, ...)
//   count     u64      number of parameter records
//   records   count times:
//     name_len u32, name bytes, rank u32, dims u64[rank],
//     values   f64[prod(dims)] (IEEE-754 binary64, raw bits)
//
// Records are written in name order.  Save/load is bit-exact.

#ifndef KASR_CHECKPOINT_H_
#define KASR_CHECKPOINT_H_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "kasr/autodiff.h"

namespace kasr {

inline constexpr char kCheckpointMagic[9] = "KASRCKPT";
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::string metadata;
  std::vector<std::pair<std::string, Tensor>> params;
};

void SaveCheckpoint(const std::filesystem::path& path, const CheckpointData& data);
/// Throws IoError on truncation and FormatError on a bad magic or version.
CheckpointData LoadCheckpoint(const std::filesystem::path& path);

}  // namespace kasr

#endif  // KASR_CHECKPOINT_H_
