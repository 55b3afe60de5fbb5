// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "nasinv/signal.hpp"

namespace nasinv {

// Per-frame voicing description at 100 frames/s (10 ms hop, 40 ms window).
// f0_hz == 0 marks an unvoiced frame; periodicity and aperiodicity are
// energy-fraction style values in [0, 1] with periodicity + aperiodicity <= 1.
struct SourceFrames {
  static constexpr double kHopMs = 10.0;
  std::vector<double> f0_hz;
  std::vector<double> periodicity;
  std::vector<double> aperiodicity;

  std::size_t size() const { return f0_hz.size(); }
};

// Autocorrelation-based voicing estimator for 16 kHz audio. Per 40 ms frame:
// the normalized autocorrelation peak over lags covering [50, 500] Hz gives
// periodicity; a peak >= 0.3 marks the frame voiced with f0 from the
// (parabolically refined) peak lag; aperiodicity = 1 - periodicity on frames
// with energy above a relative silence floor, else 0. F0 is median-filtered
// over 5 frames. Throws RateMismatch unless the input is at 16 kHz.
SourceFrames estimate_source_frames(const Signal& audio);

}  // namespace nasinv
