// SPDX-License-Identifier: Apache-2.0
#include "nasinv/source_features.hpp"

#include <algorithm>
#include <cmath>

#include "nasinv/errors.hpp"
#include "nasinv/kernels.hpp"

namespace nasinv {
namespace {

constexpr double kRate = 16000.0;
constexpr int kFrameLen = 640;  // 40 ms
constexpr int kHop = 160;       // 10 ms
constexpr double kF0Min = 50.0;
constexpr double kF0Max = 500.0;
constexpr double kVoicingThreshold = 0.3;
// Silence floor relative to the loudest frame, so scaling the waveform by a
// power of two leaves every voiced/silent decision (and hence f0) unchanged.
constexpr double kSilenceRel = 1e-8;

// Median of the up-to-5-frame neighborhood clipped to the sequence ends.
std::vector<double> median5(const std::vector<double>& x) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> y(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double win[5];
    int m = 0;
    for (std::ptrdiff_t j = i - 2; j <= i + 2; ++j) {
      if (j >= 0 && j < n) win[m++] = x[static_cast<std::size_t>(j)];
    }
    std::sort(win, win + m);
    y[static_cast<std::size_t>(i)] = win[m / 2];
  }
  return y;
}

}  // namespace

SourceFrames estimate_source_frames(const Signal& audio) {
  if (audio.sample_rate_hz != kRate) {
    throw RateMismatch("estimate_source_frames: expected 16 kHz input, got " +
                       std::to_string(audio.sample_rate_hz) + " Hz");
  }
  if (audio.samples.empty()) throw EmptyInput("estimate_source_frames: empty audio");

  const auto n_frames = static_cast<std::size_t>(
      std::floor(static_cast<double>(audio.size()) / kRate * 100.0));
  SourceFrames out;
  out.f0_hz.assign(n_frames, 0.0);
  out.periodicity.assign(n_frames, 0.0);
  out.aperiodicity.assign(n_frames, 0.0);
  if (n_frames == 0) return out;

  const int min_lag = static_cast<int>(kRate / kF0Max);  // 32
  const int max_lag = static_cast<int>(kRate / kF0Min);  // 320
  std::vector<double> energy;
  const auto nacf = kernels::nacf_frames(audio.samples, n_frames, kFrameLen,
                                         kHop, min_lag, max_lag, &energy);

  const double max_energy = *std::max_element(energy.begin(), energy.end());
  const double floor = kSilenceRel * max_energy;

  for (std::size_t t = 0; t < n_frames; ++t) {
    if (!(energy[t] > floor) || max_energy == 0.0) continue;  // silent frame

    const auto& row = nacf[t];
    std::size_t peak = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[peak]) peak = j;
    }
    const double peak_val = row[peak];
    // A pure tone peaks near 1 at every multiple of its period; take the
    // shortest local maximum within 5% of the global peak so the fundamental
    // wins over its subharmonics.
    for (std::size_t j = 0; j < row.size(); ++j) {
      const bool left_ok = j == 0 || row[j] >= row[j - 1];
      const bool right_ok = j + 1 == row.size() || row[j] >= row[j + 1];
      if (left_ok && right_ok && row[j] >= 0.95 * peak_val) {
        peak = j;
        break;
      }
    }
    if (peak_val >= kVoicingThreshold) {
      double lag = static_cast<double>(min_lag) + static_cast<double>(peak);
      if (peak > 0 && peak + 1 < row.size()) {
        // Parabolic refinement of the peak lag from its two neighbors.
        const double a = row[peak - 1], b = row[peak], c = row[peak + 1];
        const double den = a - 2.0 * b + c;
        if (den != 0.0) {
          lag += std::clamp(0.5 * (a - c) / den, -0.5, 0.5);
        }
      }
      out.f0_hz[t] = std::clamp(kRate / lag, kF0Min, kF0Max);
      out.periodicity[t] = std::clamp(peak_val, 0.0, 1.0);  // global peak value
    }
    out.aperiodicity[t] = 1.0 - out.periodicity[t];
  }

  out.f0_hz = median5(out.f0_hz);
  return out;
}

}  // namespace nasinv
