// kasr/signal.cc

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

#include "kasr/signal.h"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "kasr/common.h"

namespace kasr {

namespace {

constexpr double kPi = std::numbers::pi;

// FFTW planning is not thread-safe; execution with the new-array interface
// is.  Plans are cached per length for the life of the process.
struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
};

FftPlans GetPlans(int n) {
  static std::mutex mu;
  static std::map<int, FftPlans> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
  FftPlans p;
  p.forward = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  p.backward = fftw_plan_dft_c2r_1d(n, out, in, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  cache.emplace(n, p);
  return p;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

uint32_t ReadU32(const unsigned char* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}
uint16_t ReadU16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | p[1] << 8);
}
void PutU32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void PutU16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace

std::vector<std::complex<double>> RealFft(std::span<const double> frame) {
  const int n = static_cast<int>(frame.size());
  FftPlans plans = GetPlans(n);
  std::unique_ptr<double, FftwFree> in(fftw_alloc_real(n));
  std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(n / 2 + 1));
  std::copy(frame.begin(), frame.end(), in.get());
  fftw_execute_dft_r2c(plans.forward, in.get(), out.get());
  std::vector<std::complex<double>> bins(n / 2 + 1);
  for (int k = 0; k <= n / 2; ++k) bins[k] = {out.get()[k][0], out.get()[k][1]};
  return bins;
}

std::vector<double> InverseRealFft(std::span<const std::complex<double>> bins, int n) {
  if (static_cast<int>(bins.size()) != n / 2 + 1)
    throw ShapeError("InverseRealFft: expected " + std::to_string(n / 2 + 1) +
                     " bins, got " + std::to_string(bins.size()));
  FftPlans plans = GetPlans(n);
  std::unique_ptr<fftw_complex, FftwFree> in(fftw_alloc_complex(n / 2 + 1));
  std::unique_ptr<double, FftwFree> out(fftw_alloc_real(n));
  for (int k = 0; k <= n / 2; ++k) {
    in.get()[k][0] = bins[k].real();
    in.get()[k][1] = bins[k].imag();
  }
  fftw_execute_dft_c2r(plans.backward, in.get(), out.get());
  std::vector<double> result(out.get(), out.get() + n);
  for (double& v : result) v /= n;
  return result;
}

std::string WindowName(WindowType w) {
  return w == WindowType::kHann ? "hann" : "rectangular";
}

WindowType WindowFromName(const std::string& name) {
  if (name == "hann") return WindowType::kHann;
  if (name == "rectangular" || name == "rect") return WindowType::kRectangular;
  throw ArgumentError("unknown window '" + name + "'");
}

std::vector<double> MakeWindow(WindowType w, int length) {
  std::vector<double> win(length, 1.0);
  if (w == WindowType::kHann) {
    for (int i = 0; i < length; ++i)
      win[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / length);
  }
  return win;
}

Waveform LoadWav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const size_t size = bytes.size();
  if (size < 12) throw IoError(path.string() + ": truncated RIFF header");
  if (std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError(path.string() + ": not a RIFF/WAVE file");

  bool have_fmt = false;
  int sample_rate = 0;
  size_t pos = 12;
  while (pos + 8 <= size) {
    const uint32_t chunk_size = ReadU32(p + pos + 4);
    const unsigned char* body = p + pos + 8;
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (chunk_size < 16 || pos + 8 + 16 > size)
        throw IoError(path.string() + ": truncated fmt chunk");
      const uint16_t format = ReadU16(body);
      const uint16_t channels = ReadU16(body + 2);
      sample_rate = static_cast<int>(ReadU32(body + 4));
      const uint16_t bits = ReadU16(body + 14);
      if (format != 1) throw FormatError(path.string() + ": not PCM (format tag " + std::to_string(format) + ")");
      if (channels != 1) throw FormatError(path.string() + ": expected mono, got " + std::to_string(channels) + " channels");
      if (bits != 16) throw FormatError(path.string() + ": expected 16-bit samples, got " + std::to_string(bits));
      if (sample_rate <= 0) throw FormatError(path.string() + ": bad sample rate");
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(path.string() + ": data chunk before fmt chunk");
      if (pos + 8 + chunk_size > size) throw IoError(path.string() + ": truncated data chunk");
      Waveform wave;
      wave.sample_rate = sample_rate;
      wave.samples.resize(chunk_size / 2);
      for (size_t i = 0; i < wave.samples.size(); ++i) {
        const auto v = static_cast<int16_t>(ReadU16(body + 2 * i));
        wave.samples[i] = v / 32768.0;
      }
      return wave;
    }
    pos += 8 + chunk_size + (chunk_size & 1);
  }
  throw IoError(path.string() + ": no data chunk");
}

void SaveWav(const Waveform& wave, const std::filesystem::path& path) {
  const auto data_bytes = static_cast<uint32_t>(wave.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  PutU32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  PutU32(out, 16);
  PutU16(out, 1);
  PutU16(out, 1);
  PutU32(out, static_cast<uint32_t>(wave.sample_rate));
  PutU32(out, static_cast<uint32_t>(wave.sample_rate * 2));
  PutU16(out, 2);
  PutU16(out, 16);
  out += "data";
  PutU32(out, data_bytes);
  for (double s : wave.samples) {
    const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    PutU16(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<double> ResampleByRatio(std::span<const double> samples, double ratio) {
  if (!(ratio > 0.0) || !std::isfinite(ratio))
    throw ArgumentError("resample ratio must be positive");
  const auto in_len = static_cast<int64_t>(samples.size());
  const auto out_len = static_cast<int64_t>(std::llround(in_len * ratio));
  std::vector<double> out(out_len, 0.0);
  if (in_len == 0) return out;
  // 16 zero crossings per side of the low-pass sinc (32 taps at unit ratio);
  // the kernel widens when downsampling so the cutoff tracks the new Nyquist.
  constexpr int kZeroCrossings = 16;
  const double cutoff = std::min(1.0, ratio);
  const double half_width = kZeroCrossings / cutoff;
  for (int64_t n = 0; n < out_len; ++n) {
    const double t = n / ratio;
    const auto k_lo = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(t - half_width)));
    const auto k_hi = std::min<int64_t>(in_len - 1, static_cast<int64_t>(std::floor(t + half_width)));
    double acc = 0.0;
    for (int64_t k = k_lo; k <= k_hi; ++k) {
      const double x = t - k;
      const double u = x / half_width;
      if (std::abs(u) >= 1.0) continue;
      const double arg = kPi * cutoff * x;
      const double sinc = x == 0.0 ? 1.0 : std::sin(arg) / arg;
      const double win = 0.5 + 0.5 * std::cos(kPi * u);
      acc += samples[k] * cutoff * sinc * win;
    }
    out[n] = acc;
  }
  return out;
}

Waveform Resample(const Waveform& wave, int target_rate) {
  if (target_rate <= 0) throw ArgumentError("target sample rate must be positive");
  if (target_rate == wave.sample_rate) return wave;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples = ResampleByRatio(wave.samples, static_cast<double>(target_rate) / wave.sample_rate);
  return out;
}

ComplexSpectrogram Stft(const Waveform& wave, int frame_len, int hop, WindowType window) {
  if (frame_len <= 0 || hop <= 0 || hop > frame_len)
    throw ArgumentError("stft: need 0 < hop <= frame_len");
  if (static_cast<int64_t>(wave.samples.size()) < frame_len)
    throw ArgumentError("stft: waveform of " + std::to_string(wave.samples.size()) +
                        " samples is shorter than one frame (" + std::to_string(frame_len) + ")");
  ComplexSpectrogram spec;
  spec.frame_len = frame_len;
  spec.hop = hop;
  spec.window = window;
  spec.sample_rate = wave.sample_rate;
  spec.num_bins = frame_len / 2 + 1;
  spec.num_frames = 1 + static_cast<int>((wave.samples.size() - frame_len) / hop);
  spec.bins.resize(static_cast<size_t>(spec.num_frames) * spec.num_bins);
  const std::vector<double> win = MakeWindow(window, frame_len);
  std::vector<double> frame(frame_len);
  for (int m = 0; m < spec.num_frames; ++m) {
    const size_t start = static_cast<size_t>(m) * hop;
    for (int i = 0; i < frame_len; ++i) frame[i] = wave.samples[start + i] * win[i];
    const auto bins = RealFft(frame);
    std::copy(bins.begin(), bins.end(), spec.bins.begin() + static_cast<size_t>(m) * spec.num_bins);
  }
  return spec;
}

bool IsCola(WindowType window, int frame_len, int hop) {
  if (hop <= 0 || hop > frame_len) return false;
  const std::vector<double> win = MakeWindow(window, frame_len);
  double lo = INFINITY, hi = 0.0;
  for (int n = 0; n < hop; ++n) {
    double s = 0.0;
    for (int i = n; i < frame_len; i += hop) s += win[i] * win[i];
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return lo > 0.0 && (hi - lo) <= 1e-9 * hi;
}

Waveform Istft(const ComplexSpectrogram& spec) {
  if (!IsCola(spec.window, spec.frame_len, spec.hop))
    throw ConfigError("istft: " + WindowName(spec.window) + " window of " +
                      std::to_string(spec.frame_len) + " with hop " + std::to_string(spec.hop) +
                      " does not satisfy constant overlap-add");
  Waveform out;
  out.sample_rate = spec.sample_rate;
  if (spec.num_frames == 0) return out;
  const size_t len = static_cast<size_t>(spec.num_frames - 1) * spec.hop + spec.frame_len;
  out.samples.assign(len, 0.0);
  std::vector<double> wsum(len, 0.0);
  const std::vector<double> win = MakeWindow(spec.window, spec.frame_len);
  for (int m = 0; m < spec.num_frames; ++m) {
    std::span<const std::complex<double>> row(spec.bins.data() + static_cast<size_t>(m) * spec.num_bins,
                                              static_cast<size_t>(spec.num_bins));
    const std::vector<double> frame = InverseRealFft(row, spec.frame_len);
    const size_t start = static_cast<size_t>(m) * spec.hop;
    for (int i = 0; i < spec.frame_len; ++i) {
      out.samples[start + i] += frame[i] * win[i];
      wsum[start + i] += win[i] * win[i];
    }
  }
  for (size_t i = 0; i < len; ++i)
    out.samples[i] = wsum[i] > 1e-12 ? out.samples[i] / wsum[i] : 0.0;
  return out;
}

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelToHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> MelFilterbank(int n_mels, int frame_len, int sample_rate, double f_min,
                                  double f_max) {
  const int num_bins = frame_len / 2 + 1;
  const double mel_lo = HzToMel(f_min), mel_hi = HzToMel(f_max);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[i] = MelToHz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  std::vector<double> weights(static_cast<size_t>(n_mels) * num_bins, 0.0);
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < num_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / frame_len;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      weights[static_cast<size_t>(m) * num_bins + k] = std::max(0.0, std::min(up, down));
    }
  }
  return weights;
}

FeatureMatrix LogMel(const ComplexSpectrogram& spec, int n_mels, double f_min, double f_max) {
  if (n_mels < 2) throw ArgumentError("log_mel: n_mels must be >= 2");
  const double nyquist = spec.sample_rate / 2.0;
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= nyquist))
    throw ArgumentError("log_mel: need 0 <= f_min < f_max <= Nyquist");
  const std::vector<double> fb = MelFilterbank(n_mels, spec.frame_len, spec.sample_rate, f_min, f_max);
  FeatureMatrix feat;
  feat.num_frames = spec.num_frames;
  feat.num_bins = n_mels;
  feat.frame_shift_s = static_cast<double>(spec.hop) / spec.sample_rate;
  feat.values.resize(static_cast<size_t>(spec.num_frames) * n_mels);
  std::vector<double> power(spec.num_bins);
  for (int t = 0; t < spec.num_frames; ++t) {
    for (int k = 0; k < spec.num_bins; ++k) power[k] = std::norm(spec.at(t, k));
    for (int m = 0; m < n_mels; ++m) {
      const double* w = fb.data() + static_cast<size_t>(m) * spec.num_bins;
      double e = 0.0;
      for (int k = 0; k < spec.num_bins; ++k) e += w[k] * power[k];
      feat.at(t, m) = std::log(std::max(e, kLogFloor));
    }
  }
  return feat;
}

void ApplyCmvn(FeatureMatrix& feat) {
  if (feat.empty()) return;
  for (int f = 0; f < feat.num_bins; ++f) {
    double mean = 0.0;
    for (int t = 0; t < feat.num_frames; ++t) mean += feat.at(t, f);
    mean /= feat.num_frames;
    double var = 0.0;
    for (int t = 0; t < feat.num_frames; ++t) var += (feat.at(t, f) - mean) * (feat.at(t, f) - mean);
    var /= feat.num_frames;
    const double inv_std = var > 1e-16 ? 1.0 / std::sqrt(var) : 1.0;
    for (int t = 0; t < feat.num_frames; ++t) feat.at(t, f) = (feat.at(t, f) - mean) * inv_std;
  }
}

FeatureMatrix ComputeFbank(const Waveform& wave, const FbankOptions& opts) {
  FeatureMatrix feat = LogMel(Stft(wave, opts.frame_len, opts.hop, WindowType::kHann), opts.n_mels,
                              opts.f_min, std::min(opts.f_max, wave.sample_rate / 2.0));
  if (opts.cmvn) ApplyCmvn(feat);
  return feat;
}

double EstimateF0(const Waveform& wave, double f_lo, double f_hi) {
  if (!(f_lo > 0.0 && f_lo < f_hi)) throw ArgumentError("estimate_f0: need 0 < f_lo < f_hi");
  const double sr = wave.sample_rate;
  const size_t len = wave.samples.size();
  if (static_cast<double>(len) < 3.0 * sr / f_lo)
    throw ArgumentError("estimate_f0: need at least three periods of f_lo");
  double mean = 0.0;
  for (double s : wave.samples) mean += s;
  mean /= static_cast<double>(len);
  std::vector<double> x(len);
  double energy = 0.0;
  for (size_t i = 0; i < len; ++i) {
    x[i] = wave.samples[i] - mean;
    energy += x[i] * x[i];
  }
  if (energy <= 1e-12 * static_cast<double>(len)) throw NoPitchError("estimate_f0: no signal energy");

  const int min_lag = std::max(2, static_cast<int>(std::floor(sr / f_hi)));
  const int max_lag = static_cast<int>(std::ceil(sr / f_lo));
  // Normalised autocorrelation over lags [min_lag - 1, max_lag + 1].
  std::vector<double> r(max_lag + 2, 0.0);
  for (int lag = min_lag - 1; lag <= max_lag + 1; ++lag) {
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (size_t n = 0; n + lag < len; ++n) {
      xy += x[n] * x[n + lag];
      xx += x[n] * x[n];
      yy += x[n + lag] * x[n + lag];
    }
    r[lag] = (xx > 0.0 && yy > 0.0) ? xy / std::sqrt(xx * yy) : 0.0;
  }
  double best = -1.0;
  for (int lag = min_lag; lag <= max_lag; ++lag) best = std::max(best, r[lag]);
  if (best < 0.5) throw NoPitchError("estimate_f0: no periodicity found (peak correlation " +
                                     std::to_string(best) + ")");
  // The shortest lag whose local peak is close to the global one avoids
  // picking a multiple of the period.
  int lag_peak = -1;
  for (int lag = min_lag; lag <= max_lag; ++lag) {
    if (r[lag] >= 0.9 * best && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1]) {
      lag_peak = lag;
      break;
    }
  }
  if (lag_peak < 0) throw NoPitchError("estimate_f0: no autocorrelation peak in range");
  const double a = r[lag_peak - 1], b = r[lag_peak], c = r[lag_peak + 1];
  const double denom = a - 2.0 * b + c;
  const double delta = denom != 0.0 ? 0.5 * (a - c) / denom : 0.0;
  const double f0 = sr / (lag_peak + delta);
  return std::clamp(f0, f_lo, f_hi);
}

int PeakBin(std::span<const double> samples, size_t start, int n) {
  if (start + n > samples.size()) throw ArgumentError("PeakBin: window exceeds signal");
  const std::vector<double> win = MakeWindow(WindowType::kHann, n);
  std::vector<double> frame(n);
  for (int i = 0; i < n; ++i) frame[i] = samples[start + i] * win[i];
  const auto bins = RealFft(frame);
  int best = 0;
  for (int k = 1; k < static_cast<int>(bins.size()); ++k)
    if (std::abs(bins[k]) > std::abs(bins[best])) best = k;
  return best;
}

}  // namespace kasr
