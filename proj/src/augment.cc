// kasr/augment.cc

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

#include "kasr/augment.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

namespace kasr {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kPerturbRates[2] = {0.9, 1.1};

double PrincipalArg(double phase) {
  return phase - kTwoPi * std::round(phase / kTwoPi);
}

// Zero-pads `frame_len` samples in front and frame_len + hop behind so the
// non-padded STFT covers every input sample with full window support.
Waveform PadForAnalysis(std::span<const double> samples, int sample_rate, int frame_len, int hop) {
  Waveform padded;
  padded.sample_rate = sample_rate;
  padded.samples.assign(samples.size() + 2 * frame_len + hop, 0.0);
  std::copy(samples.begin(), samples.end(), padded.samples.begin() + frame_len);
  return padded;
}

std::vector<double> TakeRange(const std::vector<double>& x, int64_t start, size_t len) {
  std::vector<double> out(len, 0.0);
  for (size_t i = 0; i < len; ++i) {
    const int64_t j = start + static_cast<int64_t>(i);
    if (j >= 0 && j < static_cast<int64_t>(x.size())) out[i] = x[j];
  }
  return out;
}

}  // namespace

std::string AugmentMethodName(AugmentMethod m) {
  switch (m) {
    case AugmentMethod::kNone: return "none";
    case AugmentMethod::kPP: return "pp";
    case AugmentMethod::kSP: return "sp";
    case AugmentMethod::kVTLP: return "vtlp";
    case AugmentMethod::kSA: return "sa";
    case AugmentMethod::kSAPP: return "sa+pp";
    case AugmentMethod::kSAVTLP: return "sa+vtlp";
    case AugmentMethod::kSASP: return "sa+sp";
  }
  return "none";
}

AugmentMethod ParseAugmentMethod(const std::string& name) {
  std::string s;
  for (char c : name)
    if (!std::isspace(static_cast<unsigned char>(c)))
      s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (AugmentMethod m : {AugmentMethod::kNone, AugmentMethod::kPP, AugmentMethod::kSP,
                          AugmentMethod::kVTLP, AugmentMethod::kSA, AugmentMethod::kSAPP,
                          AugmentMethod::kSAVTLP, AugmentMethod::kSASP})
    if (AugmentMethodName(m) == s) return m;
  throw ConfigError("unknown augmentation method '" + name + "'");
}

bool UsesSpecAugment(AugmentMethod m) {
  return m == AugmentMethod::kSA || m == AugmentMethod::kSAPP || m == AugmentMethod::kSAVTLP ||
         m == AugmentMethod::kSASP;
}

AugmentMethod WaveformPart(AugmentMethod m) {
  switch (m) {
    case AugmentMethod::kSAPP: return AugmentMethod::kPP;
    case AugmentMethod::kSAVTLP: return AugmentMethod::kVTLP;
    case AugmentMethod::kSASP: return AugmentMethod::kSP;
    case AugmentMethod::kSA: return AugmentMethod::kNone;
    default: return m;
  }
}

bool IsPerturbing(AugmentMethod m) { return m != AugmentMethod::kNone; }

std::vector<double> PhaseVocoderStretch(std::span<const double> samples, double stretch,
                                        int frame_len, int hop) {
  if (!(stretch > 0.0)) throw ArgumentError("phase vocoder stretch must be positive");
  const Waveform padded = PadForAnalysis(samples, kCanonicalSampleRate, frame_len, hop);
  const ComplexSpectrogram in = Stft(padded, frame_len, hop, WindowType::kHann);
  const double rate = 1.0 / stretch;

  ComplexSpectrogram out = in;
  out.bins.clear();
  out.num_frames = 0;
  std::vector<double> phase(in.num_bins);
  std::vector<double> last_mag(in.num_bins, 0.0);
  for (int k = 0; k < in.num_bins; ++k) phase[k] = std::arg(in.at(0, k));
  for (double t = 0.0; t < in.num_frames - 1; t += rate) {
    const int i = static_cast<int>(t);
    const double frac = t - i;
    for (int k = 0; k < in.num_bins; ++k) {
      const double mag = (1.0 - frac) * std::abs(in.at(i, k)) + frac * std::abs(in.at(i + 1, k));
      // A bin rising out of silence has no usable phase history; take the
      // analysis phase so the onset is not smeared by interference.
      if (mag > 10.0 * last_mag[k]) phase[k] = std::arg(in.at(frac < 0.5 ? i : i + 1, k));
      last_mag[k] = mag;
      out.bins.push_back(std::polar(mag, phase[k]));
      const double omega = kTwoPi * k * hop / frame_len;
      const double dphi = std::arg(in.at(i + 1, k)) - std::arg(in.at(i, k)) - omega;
      phase[k] += omega + PrincipalArg(dphi);
    }
    ++out.num_frames;
  }
  const Waveform synth = Istft(out);
  // Input position p maps to (p - N/2) * stretch + N/2 in the output.
  const double origin = frame_len / 2.0 * stretch + frame_len / 2.0;
  const auto out_len = static_cast<size_t>(std::llround(samples.size() * stretch));
  return TakeRange(synth.samples, std::llround(origin), out_len);
}

Waveform PitchPerturb(const Waveform& wave, const PitchPerturbConfig& cfg) {
  if (std::abs(cfg.n_semitones) > 12)
    throw ArgumentError("pitch_perturb: |n_semitones| must be <= 12, got " +
                        std::to_string(cfg.n_semitones));
  if (wave.samples.empty()) throw ArgumentError("pitch_perturb: empty waveform");
  if (cfg.n_semitones == 0) return wave;
  const double factor = std::pow(2.0, cfg.n_semitones / 12.0);
  // Stretch duration by `factor`, then resample back: duration is kept and
  // every frequency is multiplied by `factor`.
  const std::vector<double> stretched = PhaseVocoderStretch(wave.samples, factor);
  std::vector<double> shifted = ResampleByRatio(stretched, 1.0 / factor);
  shifted.resize(wave.samples.size(), 0.0);
  return Waveform{std::move(shifted), wave.sample_rate};
}

std::pair<PitchPerturbConfig, PitchPerturbConfig> SamplePitchShifts(Rng& rng) {
  auto draw = [&rng]() {
    const int magnitude = static_cast<int>(rng.UniformInt(1, 12));
    return PitchPerturbConfig{rng.Coin() ? magnitude : -magnitude};
  };
  PitchPerturbConfig first = draw();
  PitchPerturbConfig second = draw();
  return {first, second};
}

Waveform SpeedPerturb(const Waveform& wave, const SpeedPerturbConfig& cfg) {
  if (!(cfg.rate >= 0.5 && cfg.rate <= 2.0))
    throw ArgumentError("speed_perturb: rate must be in [0.5, 2], got " + std::to_string(cfg.rate));
  if (wave.samples.empty()) throw ArgumentError("speed_perturb: empty waveform");
  if (cfg.rate == 1.0) return wave;
  return Waveform{ResampleByRatio(wave.samples, 1.0 / cfg.rate), wave.sample_rate};
}

double VtlpWarp(double freq, double alpha, double f_boundary, double nyquist) {
  if (freq <= f_boundary) return alpha * freq;
  const double slope = (nyquist - alpha * f_boundary) / (nyquist - f_boundary);
  return alpha * f_boundary + slope * (freq - f_boundary);
}

double VtlpUnwarp(double warped, double alpha, double f_boundary, double nyquist) {
  const double knee = alpha * f_boundary;
  if (warped <= knee) return warped / alpha;
  const double slope = (nyquist - knee) / (nyquist - f_boundary);
  return f_boundary + (warped - knee) / slope;
}

Waveform Vtlp(const Waveform& wave, const VtlpConfig& cfg) {
  constexpr int kFrame = 512;
  constexpr int kHop = 128;
  const double nyquist = wave.sample_rate / 2.0;
  const double boundary = cfg.f_boundary > 0.0 ? cfg.f_boundary : 0.8 * nyquist;
  if (!(cfg.alpha >= 0.8 && cfg.alpha <= 1.2))
    throw ArgumentError("vtlp: alpha must be in [0.8, 1.2], got " + std::to_string(cfg.alpha));
  if (!(boundary > 0.0 && boundary < nyquist))
    throw ArgumentError("vtlp: f_boundary must be inside (0, Nyquist)");
  if (static_cast<int>(wave.samples.size()) < kFrame)
    throw ArgumentError("vtlp: waveform shorter than one analysis frame");

  const Waveform padded = PadForAnalysis(wave.samples, wave.sample_rate, kFrame, kHop);
  const ComplexSpectrogram in = Stft(padded, kFrame, kHop, WindowType::kHann);
  ComplexSpectrogram out = in;
  const int bins = in.num_bins;
  const double bin_hz = static_cast<double>(wave.sample_rate) / kFrame;
  const double slope_hi = (nyquist - cfg.alpha * boundary) / (nyquist - boundary);

  // Per output bin: fractional source position, nearest source bin and the
  // magnitude scale that keeps |Y|^2 df equal to |X|^2 df.
  std::vector<double> src_pos(bins), gain(bins);
  std::vector<int> src_bin(bins);
  for (int j = 0; j < bins; ++j) {
    const double f_src = VtlpUnwarp(j * bin_hz, cfg.alpha, boundary, nyquist);
    src_pos[j] = std::clamp(f_src / bin_hz, 0.0, static_cast<double>(bins - 1));
    src_bin[j] = static_cast<int>(std::lround(src_pos[j]));
    const double slope = f_src <= boundary ? cfg.alpha : slope_hi;
    gain[j] = 1.0 / std::sqrt(slope);
  }

  // Phases start from the source bin and then advance at the warped
  // instantaneous frequency, so a shifted partial stays coherent across
  // overlapping frames.
  std::vector<double> phase(bins);
  for (int m = 0; m < in.num_frames; ++m) {
    for (int j = 0; j < bins; ++j) {
      const int i = std::min(static_cast<int>(src_pos[j]), bins - 2);
      const double frac = src_pos[j] - i;
      const double mag = ((1.0 - frac) * std::abs(in.at(m, i)) + frac * std::abs(in.at(m, i + 1))) * gain[j];
      const int k = src_bin[j];
      if (m == 0) {
        phase[j] = std::arg(in.at(0, k));
      } else {
        const double omega = kTwoPi * k / kFrame;  // rad / sample
        const double dphi = PrincipalArg(std::arg(in.at(m, k)) - std::arg(in.at(m - 1, k)) - omega * kHop);
        const double inst_hz = (omega + dphi / kHop) * wave.sample_rate / kTwoPi;
        const double warped_hz = VtlpWarp(inst_hz, cfg.alpha, boundary, nyquist);
        phase[j] += kTwoPi * warped_hz / wave.sample_rate * kHop;
      }
      out.at(m, j) = std::polar(mag, phase[j]);
    }
  }
  const Waveform synth = Istft(out);
  Waveform result{TakeRange(synth.samples, kFrame, wave.samples.size()), wave.sample_rate};

  // Bins regrouped around a stretched partial no longer interfere the way
  // the source bins did, so overlap-add loses or gains a little energy.
  // The warp itself is energy-neutral; restore the input energy.
  double e_in = 0.0, e_out = 0.0;
  for (double v : wave.samples) e_in += v * v;
  for (double v : result.samples) e_out += v * v;
  if (e_out > 0.0) {
    const double scale = std::sqrt(e_in / e_out);
    for (double& v : result.samples) v *= scale;
  }
  return result;
}

SpecAugmentResult SpecAugmentWithMasks(const FeatureMatrix& feat, const SpecAugmentConfig& cfg,
                                       Rng& rng) {
  if (feat.empty()) throw ArgumentError("spec_augment: empty feature matrix");
  if (cfg.n_freq_masks < 0 || cfg.n_time_masks < 0 || cfg.max_freq_width < 0 ||
      !(cfg.max_time_fraction > 0.0 && cfg.max_time_fraction <= 0.5))
    throw ArgumentError("spec_augment: counts and widths must be non-negative, max_time_fraction in (0, 0.5]");
  SpecAugmentResult result;
  result.features = feat;
  if (cfg.mask_value) {
    result.fill_value = *cfg.mask_value;
  } else {
    double sum = 0.0;
    for (double v : feat.values) sum += v;
    result.fill_value = sum / static_cast<double>(feat.values.size());
  }
  const int frames = feat.num_frames, channels = feat.num_bins;
  for (int i = 0; i < cfg.n_freq_masks; ++i) {
    const int width = static_cast<int>(rng.UniformInt(0, std::min(cfg.max_freq_width, channels)));
    const int start = static_cast<int>(rng.UniformInt(0, channels - width));
    result.stripes.push_back({false, start, width});
  }
  const int max_time = std::min(frames, static_cast<int>(std::floor(cfg.max_time_fraction * frames)));
  for (int i = 0; i < cfg.n_time_masks; ++i) {
    const int width = static_cast<int>(rng.UniformInt(0, max_time));
    const int start = static_cast<int>(rng.UniformInt(0, frames - width));
    result.stripes.push_back({true, start, width});
  }
  for (const MaskStripe& s : result.stripes) {
    if (s.is_time) {
      for (int t = s.start; t < s.start + s.width; ++t)
        for (int f = 0; f < channels; ++f) result.features.at(t, f) = result.fill_value;
    } else {
      for (int t = 0; t < frames; ++t)
        for (int f = s.start; f < s.start + s.width; ++f) result.features.at(t, f) = result.fill_value;
    }
  }
  return result;
}

FeatureMatrix SpecAugment(const FeatureMatrix& feat, const SpecAugmentConfig& cfg, Rng& rng) {
  return SpecAugmentWithMasks(feat, cfg, rng).features;
}

std::vector<AugmentedCopy> MakeAugmentedCopies(const Waveform& wave, const AugmentPolicy& policy,
                                               Rng& rng) {
  if (policy.copies < 0) throw ConfigError("augment: copies must be >= 0");
  const AugmentMethod base = WaveformPart(policy.method);
  std::vector<AugmentedCopy> copies;
  std::pair<PitchPerturbConfig, PitchPerturbConfig> shifts;
  for (int c = 0; c < policy.copies; ++c) {
    AugmentedCopy copy;
    copy.method = AugmentMethodName(policy.method);
    switch (base) {
      case AugmentMethod::kNone:
        copy.wave = wave;
        break;
      case AugmentMethod::kSP:
        copy.parameter = kPerturbRates[c % 2];
        copy.wave = SpeedPerturb(wave, {copy.parameter});
        break;
      case AugmentMethod::kVTLP:
        copy.parameter = kPerturbRates[c % 2];
        copy.wave = Vtlp(wave, {copy.parameter, 0.0});
        break;
      case AugmentMethod::kPP: {
        if (c % 2 == 0) shifts = SamplePitchShifts(rng);
        const PitchPerturbConfig pc = c % 2 == 0 ? shifts.first : shifts.second;
        copy.parameter = pc.n_semitones;
        copy.wave = PitchPerturb(wave, pc);
        break;
      }
      default:
        throw ConfigError("augment: unsupported waveform method");
    }
    if (UsesSpecAugment(policy.method))
      copy.features = SpecAugment(ComputeFbank(copy.wave, policy.fbank), policy.spec_augment, rng);
    copies.push_back(std::move(copy));
  }
  return copies;
}

}  // namespace kasr
