// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace nasinv {

// Fold an out-of-range index back into [0, n) by mirroring about the ends
// without duplicating the edge sample (x[-k] -> x[k], x[n-1+k] -> x[n-1-k]).
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// Production kernels. Each output element is computed independently with a
// fixed inner summation order, so results are bit-identical for any thread
// count and match the serial references in nasinv::serial exactly.
namespace kernels {

// Centered moving sum of squares over a rectangular window of `w` samples,
// reflect-padded at the edges. y[i] = sum_{k} x[i - w/2 + k]^2, k in [0, w).
std::vector<double> window_sumsq(const std::vector<double>& x, int w);

// Windowed-sinc low-pass resampler. Output sample k sits at time k/out_rate;
// the kernel is a Hann-windowed sinc with the given cutoff and half-width
// (seconds), renormalized per output position so DC gain is exactly 1.
std::vector<double> sinc_resample(const std::vector<double>& x, double in_rate,
                                  double out_rate, double cutoff_hz,
                                  double half_width_s);

// Power spectra of windowed frames. Frame t covers samples
// [t*hop, t*hop + frame_len), reflect-padded past the end, multiplied by
// `window` (length frame_len), zero-padded to fft_len. Returns n_frames
// rows of fft_len/2 + 1 bins.
std::vector<std::vector<double>> power_frames(const std::vector<double>& x,
                                              std::size_t n_frames,
                                              int frame_len, int hop,
                                              int fft_len,
                                              const std::vector<double>& window);

// Normalized autocorrelation per frame over lags [min_lag, max_lag].
// nacf[t][j] = sum_i x_i*x_{i+lag} / sqrt(sum_i x_i^2 * sum_i x_{i+lag}^2)
// with i ranging over [0, frame_len - lag). Frames past the signal end are
// reflect-padded. `energy[t]` receives the mean squared sample of frame t.
std::vector<std::vector<double>> nacf_frames(const std::vector<double>& x,
                                             std::size_t n_frames,
                                             int frame_len, int hop,
                                             int min_lag, int max_lag,
                                             std::vector<double>* energy);

}  // namespace kernels

// Serial references for the kernels above. Plain loops, no OpenMP; kept for
// equivalence tests and the benchmark target.
namespace serial {

std::vector<double> window_sumsq(const std::vector<double>& x, int w);
std::vector<double> sinc_resample(const std::vector<double>& x, double in_rate,
                                  double out_rate, double cutoff_hz,
                                  double half_width_s);
std::vector<std::vector<double>> power_frames(const std::vector<double>& x,
                                              std::size_t n_frames,
                                              int frame_len, int hop,
                                              int fft_len,
                                              const std::vector<double>& window);
std::vector<std::vector<double>> nacf_frames(const std::vector<double>& x,
                                             std::size_t n_frames,
                                             int frame_len, int hop,
                                             int min_lag, int max_lag,
                                             std::vector<double>* energy);

}  // namespace serial
}  // namespace nasinv
