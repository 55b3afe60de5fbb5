// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "nasinv/errors.hpp"

namespace nasinv {

// A sampled waveform. Samples are dimensionless amplitudes; the rate must be
// positive and every sample finite.
struct Signal {
  std::vector<double> samples;
  double sample_rate_hz = 0.0;

  Signal() = default;
  Signal(std::vector<double> s, double rate)
      : samples(std::move(s)), sample_rate_hz(rate) {}

  std::size_t size() const { return samples.size(); }
  double duration_s() const {
    return sample_rate_hz > 0.0
               ? static_cast<double>(samples.size()) / sample_rate_hz
               : 0.0;
  }
};

// A trace pinned to the pipeline's 100 Hz target rate.
struct Series100 {
  static constexpr double kRateHz = 100.0;
  std::vector<double> values;

  Series100() = default;
  explicit Series100(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace nasinv
