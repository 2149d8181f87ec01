// kasr/checkpoint.cc

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

#include "kasr/checkpoint.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "kasr/common.h"

namespace kasr {

namespace {

template <typename T>
void PutLe(std::string& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  template <typename T>
  T Get() {
    Need(sizeof(T));
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::string GetBytes(size_t n) {
    Need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void Need(size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError(path_ + ": truncated checkpoint");
  }
  const std::string& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

void SaveCheckpoint(const std::filesystem::path& path, const CheckpointData& data) {
  std::vector<const std::pair<std::string, Tensor>*> sorted;
  for (const auto& p : data.params) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->first < b->first; });

  std::string out(kCheckpointMagic, 8);
  PutLe<uint32_t>(out, kCheckpointVersion);
  PutLe<uint64_t>(out, data.metadata.size());
  out += data.metadata;
  PutLe<uint64_t>(out, sorted.size());
  for (const auto* p : sorted) {
    PutLe<uint32_t>(out, static_cast<uint32_t>(p->first.size()));
    out += p->first;
    const Tensor& t = p->second;
    PutLe<uint32_t>(out, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) PutLe<uint64_t>(out, static_cast<uint64_t>(d));
    for (double v : t.values()) PutLe<uint64_t>(out, std::bit_cast<uint64_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

CheckpointData LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(bytes, path.string());
  if (r.GetBytes(8) != std::string(kCheckpointMagic, 8))
    throw FormatError(path.string() + ": not a kasr checkpoint");
  const auto version = r.Get<uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  CheckpointData data;
  data.metadata = r.GetBytes(r.Get<uint64_t>());
  const auto count = r.Get<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = r.GetBytes(r.Get<uint32_t>());
    const auto rank = r.Get<uint32_t>();
    if (rank > 2) throw FormatError(path.string() + ": parameter '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.Get<uint64_t>()));
    std::vector<double> values(NumElements(shape));
    for (double& v : values) v = std::bit_cast<double>(r.Get<uint64_t>());
    data.params.emplace_back(std::move(name), Tensor::Leaf(std::move(shape), std::move(values)));
  }
  return data;
}

}  // namespace kasr
