// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "nasinv/signal.hpp"

namespace nasinv {

// Corpus-wide min/max captured during normalization, kept so held-out data
// can be mapped with the same affine transform.
struct NormStats {
  double min = 0.0;
  double max = 0.0;
};

// Zero-phase 4th-order Butterworth high-pass (two biquad sections applied
// forward and backward with steady-state initialization and odd-symmetric
// edge extension). Output has the same length and rate as the input.
Signal highpass(const Signal& signal, double cutoff_hz);

// sqrt of the moving average of squared samples over a centered rectangular
// window of `window_ms`, reflect-padded at the edges.
Signal rms_envelope(const Signal& signal, double window_ms);

// Magnitude of the analytic signal (FFT-based Hilbert transform).
Signal hilbert_envelope(const Signal& signal);

// Windowed-sinc low-pass at 45 Hz followed by uniform index mapping onto the
// 100 Hz grid. Output length = floor(duration_s * 100).
Series100 resample_to_100hz(const Signal& signal);

// General windowed-sinc resampler (cutoff 0.45 * min(in, out) rate). Used to
// bring corpus audio down to the model's 16 kHz input rate.
Signal resample_signal(const Signal& signal, double out_rate_hz);

// Map the corpus-wide [min, max] onto [-1, 1] linearly. All series share one
// stats record; max == min raises DegenerateRange.
std::pair<std::vector<Series100>, NormStats> minmax_normalize_corpus(
    const std::vector<Series100>& series_list);

// Apply / invert a previously captured normalization.
Series100 apply_normalization(const Series100& series, const NormStats& stats);
Series100 invert_normalization(const Series100& series, const NormStats& stats);

// Length-doubling linear interpolation; the final sample is repeated to keep
// the 2x length contract: [a, b] -> [a, (a+b)/2, b, b].
std::vector<double> upsample_x2(const std::vector<double>& series);

// Sample-wise sum of two equal-rate channels, peak-normalized to `peak`.
// This is the model-input convention for the combined oral+nasal signal.
Signal mix_peak_normalize(const Signal& a, const Signal& b, double peak);

}  // namespace nasinv
