// kasr/augment.h

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

// Waveform- and feature-level data augmentation: pitch perturbation (phase
// vocoder + resampling), speed perturbation (resampling), vocal tract length
// perturbation (piecewise-linear frequency warp) and SpecAugment masking.

#ifndef KASR_AUGMENT_H_
#define KASR_AUGMENT_H_

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kasr/common.h"
#include "kasr/signal.h"

namespace kasr {

/// Shift of n/12 octave; sign selects the direction.
struct PitchPerturbConfig {
  int n_semitones = 0;
};

struct SpeedPerturbConfig {
  double rate = 1.0;
};

struct VtlpConfig {
  double alpha = 1.0;
  /// Knee of the warp in Hz; <= 0 means 0.8 * Nyquist.
  double f_boundary = 0.0;
};

struct SpecAugmentConfig {
  int n_freq_masks = 2;
  int max_freq_width = 4;
  int n_time_masks = 2;
  double max_time_fraction = 0.05;
  /// nullopt: fill with the mean of the (unmasked) utterance features.
  std::optional<double> mask_value;
};

/// One contiguous stripe, [start, start + width) along time or frequency.
struct MaskStripe {
  bool is_time = false;
  int start = 0;
  int width = 0;
};

struct SpecAugmentResult {
  FeatureMatrix features;
  std::vector<MaskStripe> stripes;
  double fill_value = 0.0;
};

enum class AugmentMethod { kNone, kPP, kSP, kVTLP, kSA, kSAPP, kSAVTLP, kSASP };

std::string AugmentMethodName(AugmentMethod m);
/// Accepts "none", "pp", "sp", "vtlp", "sa", "sa+pp", "sa+vtlp", "sa+sp"
/// (case-insensitive).  Throws ConfigError for anything else.
AugmentMethod ParseAugmentMethod(const std::string& name);
bool UsesSpecAugment(AugmentMethod m);
/// The waveform-level part of a (possibly combined) method.
AugmentMethod WaveformPart(AugmentMethod m);
/// True for methods that change the waveform (PP, SP, VTLP and SA+X).
bool IsPerturbing(AugmentMethod m);

struct AugmentPolicy {
  AugmentMethod method = AugmentMethod::kNone;
  int copies = 2;
  uint64_t seed = 0;
  SpecAugmentConfig spec_augment;
  /// Frontend used for the SA part of a method.
  FbankOptions fbank;
};

/// One augmented variant plus provenance.  `features` is set only for
/// methods with a SpecAugment component.
struct AugmentedCopy {
  Waveform wave;
  std::optional<FeatureMatrix> features;
  std::string method;
  /// Semitones for PP, rate for SP, alpha for VTLP, 0 otherwise.
  double parameter = 0.0;
};

Waveform PitchPerturb(const Waveform& wave, const PitchPerturbConfig& cfg);
std::pair<PitchPerturbConfig, PitchPerturbConfig> SamplePitchShifts(Rng& rng);
Waveform SpeedPerturb(const Waveform& wave, const SpeedPerturbConfig& cfg);
Waveform Vtlp(const Waveform& wave, const VtlpConfig& cfg);

/// The piecewise-linear warp: slope alpha up to the knee, then a straight
/// line to (Nyquist, Nyquist).
double VtlpWarp(double freq, double alpha, double f_boundary, double nyquist);
double VtlpUnwarp(double warped, double alpha, double f_boundary, double nyquist);

SpecAugmentResult SpecAugmentWithMasks(const FeatureMatrix& feat, const SpecAugmentConfig& cfg,
                                       Rng& rng);
FeatureMatrix SpecAugment(const FeatureMatrix& feat, const SpecAugmentConfig& cfg, Rng& rng);

/// Returns `policy.copies` variants of `wave` (the original is not included;
/// callers add it for the x3 training convention).  SP and VTLP alternate
/// rates 0.9 and 1.1; PP draws a fresh pair of shifts for every two copies.
std::vector<AugmentedCopy> MakeAugmentedCopies(const Waveform& wave, const AugmentPolicy& policy,
                                               Rng& rng);

/// Phase-vocoder time stretch; output is about len * stretch samples.
std::vector<double> PhaseVocoderStretch(std::span<const double> samples, double stretch,
                                        int frame_len = 512, int hop = 128);

}  // namespace kasr

#endif  // KASR_AUGMENT_H_
