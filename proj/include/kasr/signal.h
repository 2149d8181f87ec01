// kasr/signal.h

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

#ifndef KASR_SIGNAL_H_
#define KASR_SIGNAL_H_

#include <complex>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace kasr {

inline constexpr int kCanonicalSampleRate = 16000;
inline constexpr double kLogFloor = 1e-10;

/// Mono PCM audio.  Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kCanonicalSampleRate;

  double DurationSeconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
  size_t size() const { return samples.size(); }
};

enum class WindowType { kHann, kRectangular };

std::string WindowName(WindowType w);
WindowType WindowFromName(const std::string& name);
/// Periodic window of the given length (periodic Hann is COLA at hop N/4
/// after squaring, which is what the overlap-add synthesis needs).
std::vector<double> MakeWindow(WindowType w, int length);

/// Short-time spectrum, frames stored row-major (frame × bin).
struct ComplexSpectrogram {
  std::vector<std::complex<double>> bins;
  int num_frames = 0;
  int num_bins = 0;  // frame_len / 2 + 1
  int frame_len = 0;
  int hop = 0;
  WindowType window = WindowType::kHann;
  int sample_rate = kCanonicalSampleRate;

  std::complex<double>& at(int frame, int bin) {
    return bins[static_cast<size_t>(frame) * num_bins + bin];
  }
  const std::complex<double>& at(int frame, int bin) const {
    return bins[static_cast<size_t>(frame) * num_bins + bin];
  }
};

/// time × n_mels log energies, row-major.
struct FeatureMatrix {
  std::vector<double> values;
  int num_frames = 0;
  int num_bins = 0;
  double frame_shift_s = 0.01;

  double& at(int t, int f) { return values[static_cast<size_t>(t) * num_bins + f]; }
  double at(int t, int f) const {
    return values[static_cast<size_t>(t) * num_bins + f];
  }
  std::span<const double> Row(int t) const {
    return {values.data() + static_cast<size_t>(t) * num_bins,
            static_cast<size_t>(num_bins)};
  }
  bool empty() const { return num_frames == 0 || num_bins == 0; }
};

Waveform LoadWav(const std::filesystem::path& path);
/// Writes 16-bit PCM mono.  Samples are scaled by 32768, rounded, and
/// saturated to [-32768, 32767].
void SaveWav(const Waveform& wave, const std::filesystem::path& path);

/// Band-limited (windowed-sinc) resampling by an arbitrary ratio
/// out_len / in_len.  Output length is round(len * ratio).
std::vector<double> ResampleByRatio(std::span<const double> samples, double ratio);
Waveform Resample(const Waveform& wave, int target_rate);

/// Non-padded analysis: frame count = 1 + (len - frame_len) / hop.
ComplexSpectrogram Stft(const Waveform& wave, int frame_len, int hop,
                        WindowType window = WindowType::kHann);
/// Weighted overlap-add with the analysis window applied again on synthesis
/// and division by the squared-window sum.  Output length is
/// (frames - 1) * hop + frame_len.
Waveform Istft(const ComplexSpectrogram& spec);
/// True when the squared window overlap-adds to a constant at this hop.
bool IsCola(WindowType window, int frame_len, int hop);

/// Triangular HTK-mel filterbank weights, n_mels × num_bins.
std::vector<double> MelFilterbank(int n_mels, int frame_len, int sample_rate,
                                  double f_min, double f_max);
double HzToMel(double hz);
double MelToHz(double mel);

FeatureMatrix LogMel(const ComplexSpectrogram& spec, int n_mels, double f_min,
                     double f_max);

struct FbankOptions {
  int n_mels = 16;
  int frame_len = 400;
  int hop = 160;
  double f_min = 0.0;
  double f_max = 8000.0;
  /// Per-utterance mean/variance normalisation of every mel channel.
  bool cmvn = false;
};

/// Stft + LogMel (+ optional CMVN) in one call.
FeatureMatrix ComputeFbank(const Waveform& wave, const FbankOptions& opts);
void ApplyCmvn(FeatureMatrix& feat);

/// Autocorrelation pitch estimate in [f_lo, f_hi].  Throws NoPitchError for
/// unvoiced input.
double EstimateF0(const Waveform& wave, double f_lo, double f_hi);

/// Index of the largest |X(k)| of an N-point DFT of samples[start, start+N)
/// with a Hann window.  Test and diagnostic helper.
int PeakBin(std::span<const double> samples, size_t start, int n);

/// In-place-free real FFT helpers shared by the DSP code.
std::vector<std::complex<double>> RealFft(std::span<const double> frame);
std::vector<double> InverseRealFft(std::span<const std::complex<double>> bins, int n);

}  // namespace kasr

#endif  // KASR_SIGNAL_H_
