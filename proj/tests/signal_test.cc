// tests/signal_test.cc

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

#include <complex>
#include <fstream>

#include "doctest.h"
#include "kasr/signal.h"
#include "test_util.h"

using namespace kasr;
using kasr::testing::Noise;
using kasr::testing::ScratchDir;
using kasr::testing::Sine;

namespace {

// O(N^2) DFT used as an independent reference for the FFT.
std::vector<std::complex<double>> NaiveDft(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> out(n / 2 + 1);
  for (size_t k = 0; k < out.size(); ++k)
    for (size_t t = 0; t < n; ++t)
      out[k] += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * k * t / n);
  return out;
}

void WriteBytes(const std::filesystem::path& p, const std::vector<uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

std::vector<uint8_t> ReadBytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Minimal RIFF header writer, independent of SaveWav.
std::vector<uint8_t> WavHeader(uint16_t format, uint16_t channels, uint32_t rate, uint16_t bits,
                               uint32_t data_bytes) {
  std::vector<uint8_t> h;
  auto u32 = [&](uint32_t v) { for (int i = 0; i < 4; ++i) h.push_back(static_cast<uint8_t>(v >> (8 * i))); };
  auto u16 = [&](uint16_t v) { for (int i = 0; i < 2; ++i) h.push_back(static_cast<uint8_t>(v >> (8 * i))); };
  auto tag = [&](const char* s) { h.insert(h.end(), s, s + 4); };
  tag("RIFF");
  u32(36 + data_bytes);
  tag("WAVE");
  tag("fmt ");
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<uint16_t>(channels * bits / 8));
  u16(bits);
  tag("data");
  u32(data_bytes);
  return h;
}

}  // namespace

TEST_CASE("wav: header arithmetic and silent payload") {
  const auto dir = ScratchDir("wav_basic");
  std::vector<uint8_t> bytes = WavHeader(1, 1, 16000, 16, 32000);
  bytes.resize(bytes.size() + 32000, 0);
  WriteBytes(dir / "silence.wav", bytes);
  const Waveform w = LoadWav(dir / "silence.wav");
  CHECK(w.sample_rate == 16000);
  CHECK(w.samples.size() == 16000);
  CHECK(w.DurationSeconds() == 1.0);
  for (double s : w.samples) CHECK(s == 0.0);
}

TEST_CASE("wav: save/load round trip") {
  const auto dir = ScratchDir("wav_roundtrip");
  const Waveform x = Noise(4000, 7, 0.25);
  SaveWav(x, dir / "a.wav");
  const Waveform y = LoadWav(dir / "a.wav");
  REQUIRE(y.samples.size() == x.samples.size());
  double worst = 0.0;
  for (size_t i = 0; i < x.samples.size(); ++i) worst = std::max(worst, std::abs(x.samples[i] - y.samples[i]));
  CHECK(worst <= 1.0 / 32768);

  // Re-saving a loaded file reproduces the payload bit for bit.
  SaveWav(y, dir / "b.wav");
  CHECK(ReadBytes(dir / "a.wav") == ReadBytes(dir / "b.wav"));
}

TEST_CASE("wav: saturation, empty payload and malformed files") {
  const auto dir = ScratchDir("wav_edge");
  Waveform clip;
  clip.samples = {1.0, -1.0, 2.0, -3.0};
  SaveWav(clip, dir / "clip.wav");
  const std::vector<uint8_t> bytes = ReadBytes(dir / "clip.wav");
  auto sample = [&](int i) {
    return static_cast<int16_t>(bytes[44 + 2 * i] | (bytes[45 + 2 * i] << 8));
  };
  CHECK(sample(0) == 32767);
  CHECK(sample(1) == -32768);
  CHECK(sample(2) == 32767);
  CHECK(sample(3) == -32768);

  SaveWav(Waveform{}, dir / "empty.wav");
  CHECK(LoadWav(dir / "empty.wav").samples.empty());

  std::vector<uint8_t> stereo = WavHeader(1, 2, 16000, 16, 8);
  stereo.resize(stereo.size() + 8, 0);
  WriteBytes(dir / "stereo.wav", stereo);
  CHECK_THROWS_AS(LoadWav(dir / "stereo.wav"), FormatError);

  std::vector<uint8_t> flt = WavHeader(3, 1, 16000, 32, 8);
  flt.resize(flt.size() + 8, 0);
  WriteBytes(dir / "float.wav", flt);
  CHECK_THROWS_AS(LoadWav(dir / "float.wav"), FormatError);

  std::vector<uint8_t> truncated = WavHeader(1, 1, 16000, 16, 1000);
  truncated.resize(truncated.size() + 10, 0);
  WriteBytes(dir / "short.wav", truncated);
  CHECK_THROWS_AS(LoadWav(dir / "short.wav"), IoError);
  CHECK_THROWS_AS(LoadWav(dir / "missing.wav"), IoError);
}

TEST_CASE("resample: lengths, identity and tone preservation") {
  const Waveform x = Sine(440.0, 1.0);
  CHECK(Resample(x, 16000).samples == x.samples);
  const Waveform y = Resample(x, 8000);
  CHECK(y.sample_rate == 8000);
  CHECK(y.samples.size() == 8000);
  // 4096-point analysis at 8 kHz: 440 Hz sits at bin 225.3.
  const int bin = PeakBin(y.samples, 2000, 4096);
  CHECK(std::abs(bin - 440.0 * 4096 / 8000) <= 1.0);
  CHECK_THROWS_AS(Resample(x, 0), ArgumentError);
  CHECK_THROWS_AS(Resample(x, -8000), ArgumentError);
}

TEST_CASE("resample: linear in the input") {
  const Waveform x = Noise(3000, 3);
  Waveform ax = x;
  for (double& s : ax.samples) s *= -2.5;
  for (double ratio : {0.5, 0.9, 1.1, 1.7}) {
    const std::vector<double> a = ResampleByRatio(x.samples, ratio);
    const std::vector<double> b = ResampleByRatio(ax.samples, ratio);
    REQUIRE(a.size() == b.size());
    CHECK(a.size() == static_cast<size_t>(std::llround(3000 * ratio)));
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(-2.5 * a[i] - b[i]));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("fft: agrees with a direct DFT and inverts") {
  const Waveform x = Noise(64, 11);
  const auto fast = RealFft(x.samples);
  const auto slow = NaiveDft(x.samples);
  REQUIRE(fast.size() == slow.size());
  for (size_t k = 0; k < fast.size(); ++k) CHECK(std::abs(fast[k] - slow[k]) < 1e-10);
  const std::vector<double> back = InverseRealFft(fast, 64);
  for (size_t i = 0; i < back.size(); ++i) CHECK(back[i] == doctest::Approx(x.samples[i]).epsilon(1e-12));
}

TEST_CASE("stft: frame count, tone bin, silence") {
  const Waveform tone = Sine(1000.0, 0.25);
  const ComplexSpectrogram s = Stft(tone, 512, 128);
  CHECK(s.num_bins == 257);
  CHECK(s.num_frames == 1 + (4000 - 512) / 128);
  for (int f = 0; f < s.num_frames; ++f) {
    int best = 0;
    for (int k = 1; k < s.num_bins; ++k)
      if (std::abs(s.at(f, k)) > std::abs(s.at(f, best))) best = k;
    CHECK(best == 32);
  }
  Waveform zero;
  zero.samples.assign(2000, 0.0);
  for (const auto& c : Stft(zero, 400, 160).bins) CHECK(c == std::complex<double>(0.0, 0.0));
  Waveform tiny;
  tiny.samples.assign(100, 0.1);
  CHECK_THROWS_AS(Stft(tiny, 400, 160), ArgumentError);
}

TEST_CASE("stft: Parseval per frame") {
  const Waveform x = Noise(3000, 5);
  const int n = 400, hop = 160;
  const ComplexSpectrogram s = Stft(x, n, hop);
  const std::vector<double> w = MakeWindow(WindowType::kHann, n);
  for (int f = 0; f < s.num_frames; ++f) {
    double direct = 0.0;
    for (int i = 0; i < n; ++i) direct += std::pow(w[i] * x.samples[f * hop + i], 2);
    double spectral = std::norm(s.at(f, 0)) + std::norm(s.at(f, n / 2));
    for (int k = 1; k < n / 2; ++k) spectral += 2.0 * std::norm(s.at(f, k));
    spectral /= n;
    CHECK(std::abs(spectral - direct) / direct < 1e-6);
  }
}

TEST_CASE("istft: round trips for COLA settings") {
  for (auto [n, hop] : {std::pair{512, 128}, std::pair{400, 100}, std::pair{256, 64}}) {
    REQUIRE(IsCola(WindowType::kHann, n, hop));
    const Waveform x = Noise(5000, 17 + n);
    const Waveform y = Istft(Stft(x, n, hop));
    REQUIRE(y.samples.size() <= x.samples.size());
    double worst = 0.0;
    for (size_t i = n; i + n < y.samples.size(); ++i) worst = std::max(worst, std::abs(x.samples[i] - y.samples[i]));
    CHECK(worst < 1e-6);
  }
  Waveform impulse;
  impulse.samples.assign(4096, 0.0);
  impulse.samples[2000] = 1.0;
  const Waveform back = Istft(Stft(impulse, 512, 128));
  for (size_t i = 512; i + 512 < back.samples.size(); ++i) CHECK(std::abs(back.samples[i] - impulse.samples[i]) < 1e-6);

  ComplexSpectrogram zero = Stft(impulse, 512, 128);
  for (auto& c : zero.bins) c = 0.0;
  for (double v : Istft(zero).samples) CHECK(v == 0.0);

  CHECK_FALSE(IsCola(WindowType::kHann, 512, 300));
  CHECK_THROWS_AS(Istft(Stft(impulse, 512, 300)), ConfigError);
}

TEST_CASE("log_mel: floor, channel centres, power scaling") {
  Waveform silence;
  silence.samples.assign(4000, 0.0);
  const FeatureMatrix f0 = LogMel(Stft(silence, 400, 160), 16, 0.0, 8000.0);
  for (double v : f0.values) CHECK(v == std::log(kLogFloor));

  // A tone at each filter's centre frequency wins its own channel.
  const double step = HzToMel(8000.0) / 17.0;
  for (int m = 2; m < 16; ++m) {
    const double hz = MelToHz(step * (m + 1));
    const FeatureMatrix f = LogMel(Stft(Sine(hz, 0.2), 400, 160), 16, 0.0, 8000.0);
    for (int t = 0; t < f.num_frames; ++t) {
      const auto row = f.Row(t);
      CHECK(std::max_element(row.begin(), row.end()) - row.begin() == m);
    }
  }

  Waveform a = Noise(4000, 9), b = a;
  for (double& s : b.samples) s *= 2.0;
  const FeatureMatrix fa = LogMel(Stft(a, 400, 160), 16, 0.0, 8000.0);
  const FeatureMatrix fb = LogMel(Stft(b, 400, 160), 16, 0.0, 8000.0);
  for (size_t i = 0; i < fa.values.size(); ++i) CHECK(std::abs(fb.values[i] - fa.values[i] - std::log(4.0)) < 1e-6);

  CHECK_THROWS_AS(LogMel(Stft(a, 400, 160), 1, 0.0, 8000.0), ArgumentError);
  CHECK_THROWS_AS(LogMel(Stft(a, 400, 160), 16, 4000.0, 3000.0), ArgumentError);
}

TEST_CASE("log_mel: monotone in power") {
  ComplexSpectrogram s = Stft(Noise(2000, 21), 400, 160);
  const FeatureMatrix before = LogMel(s, 16, 0.0, 8000.0);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    ComplexSpectrogram up = s;
    const int f = static_cast<int>(rng.UniformInt(0, s.num_frames - 1));
    const int k = static_cast<int>(rng.UniformInt(0, s.num_bins - 1));
    up.at(f, k) *= 1.0 + 3.0 * rng.Uniform();
    const FeatureMatrix after = LogMel(up, 16, 0.0, 8000.0);
    for (size_t i = 0; i < before.values.size(); ++i) CHECK(after.values[i] >= before.values[i]);
  }
}

TEST_CASE("fbank: cmvn normalises every channel") {
  FbankOptions o;
  o.cmvn = true;
  const FeatureMatrix f = ComputeFbank(Noise(8000, 2), o);
  CHECK(f.num_bins == 16);
  CHECK(f.num_frames == 1 + (8000 - 400) / 160);
  for (int m = 0; m < f.num_bins; ++m) {
    double mean = 0.0, var = 0.0;
    for (int t = 0; t < f.num_frames; ++t) mean += f.at(t, m);
    mean /= f.num_frames;
    for (int t = 0; t < f.num_frames; ++t) var += std::pow(f.at(t, m) - mean, 2);
    var /= f.num_frames;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("estimate_f0: synthetic tones and unvoiced input") {
  CHECK(std::abs(EstimateF0(Sine(220.0, 0.5), 60.0, 1000.0) - 220.0) <= 2.2);
  CHECK(std::abs(EstimateF0(Sine(440.0, 0.5), 60.0, 1000.0) - 440.0) <= 4.4);
  for (double f = 80.0; f <= 600.0; f += 26.0) {
    const double est = EstimateF0(Sine(f, 0.5, 0.5, kCanonicalSampleRate, 0.3), 60.0, 1000.0);
    CHECK(est >= 0.99 * f);
    CHECK(est <= 1.01 * f);
  }
  Waveform dc;
  dc.samples.assign(8000, 0.4);
  CHECK_THROWS_AS(EstimateF0(dc, 60.0, 1000.0), NoPitchError);
  CHECK_THROWS_AS(EstimateF0(Noise(8000, 31), 60.0, 1000.0), NoPitchError);
}
