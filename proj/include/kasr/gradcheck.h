// kasr/gradcheck.h

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

// Finite-difference verification of every autodiff primitive and of the
// complete training losses of small models.

#ifndef KASR_GRADCHECK_H_
#define KASR_GRADCHECK_H_

#include <cstdint>
#include <string>
#include <vector>

namespace kasr {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
};

/// Every primitive (each differentiable input separately), the three losses
/// and the full ctc / enc_dec objectives (with and without PEFT) of a
/// miniature model, all at points drawn from `seed`.
std::vector<GradCheckResult> RunGradCheckSuite(uint64_t seed = 1, double eps = 1e-4);

}  // namespace kasr

#endif  // KASR_GRADCHECK_H_
