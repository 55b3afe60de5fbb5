// SPDX-License-Identifier: Apache-2.0
//
// Serial-vs-parallel comparison for the four hot kernels, measured at the
// shapes the pipeline actually uses (10 s of 16 kHz audio). Run the pairs
// side by side to see the OpenMP speedup on this machine:
//
//   bench_kernels --benchmark_filter='window_sumsq'
//
#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <vector>

#include "nasinv/kernels.hpp"

namespace {

constexpr double kRate = 16000.0;
constexpr double kDurS = 10.0;

const std::vector<double>& test_signal() {
  static const std::vector<double> x = [] {
    const auto n = static_cast<std::size_t>(kRate * kDurS);
    std::vector<double> s(n);
    std::mt19937_64 rng(12345);
    std::uniform_real_distribution<double> noise(-0.01, 0.01);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = i / kRate;
      const double env = 0.5 * (1.0 + 0.3 * std::sin(2.0 * M_PI * 3.0 * t));
      s[i] = env * std::sin(2.0 * M_PI * 220.0 * t) + noise(rng);
    }
    return s;
  }();
  return x;
}

const std::vector<double>& hann_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(400);
    for (int i = 0; i < 400; ++i) {
      v[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / 400));
    }
    return v;
  }();
  return w;
}

// 25 ms moving energy window, the inner loop of the RMS envelope.
void bm_window_sumsq_serial(benchmark::State& state) {
  const auto& x = test_signal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(nasinv::serial::window_sumsq(x, 400));
  }
}
void bm_window_sumsq_parallel(benchmark::State& state) {
  const auto& x = test_signal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(nasinv::kernels::window_sumsq(x, 400));
  }
}

// 16 kHz -> 100 Hz windowed-sinc decimation of an envelope.
void bm_sinc_resample_serial(benchmark::State& state) {
  const auto& x = test_signal();
  const double half_width_s = 8.0 / (2.0 * 45.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        nasinv::serial::sinc_resample(x, kRate, 100.0, 45.0, half_width_s));
  }
}
void bm_sinc_resample_parallel(benchmark::State& state) {
  const auto& x = test_signal();
  const double half_width_s = 8.0 / (2.0 * 45.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        nasinv::kernels::sinc_resample(x, kRate, 100.0, 45.0, half_width_s));
  }
}

// 50 fps power spectra: 25 ms frames, 20 ms hop, 512-point FFT.
void bm_power_frames_serial(benchmark::State& state) {
  const auto& x = test_signal();
  const auto n_frames = static_cast<std::size_t>(kDurS * 50.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        nasinv::serial::power_frames(x, n_frames, 400, 320, 512, hann_window()));
  }
}
void bm_power_frames_parallel(benchmark::State& state) {
  const auto& x = test_signal();
  const auto n_frames = static_cast<std::size_t>(kDurS * 50.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(nasinv::kernels::power_frames(
        x, n_frames, 400, 320, 512, hann_window()));
  }
}

// 100 fps normalized autocorrelation: 40 ms frames, lags 32..320.
void bm_nacf_frames_serial(benchmark::State& state) {
  const auto& x = test_signal();
  const auto n_frames = static_cast<std::size_t>(kDurS * 100.0);
  std::vector<double> energy;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        nasinv::serial::nacf_frames(x, n_frames, 640, 160, 32, 320, &energy));
  }
}
void bm_nacf_frames_parallel(benchmark::State& state) {
  const auto& x = test_signal();
  const auto n_frames = static_cast<std::size_t>(kDurS * 100.0);
  std::vector<double> energy;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        nasinv::kernels::nacf_frames(x, n_frames, 640, 160, 32, 320, &energy));
  }
}

BENCHMARK(bm_window_sumsq_serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_window_sumsq_parallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_sinc_resample_serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_sinc_resample_parallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_power_frames_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_power_frames_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_nacf_frames_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_nacf_frames_parallel)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
