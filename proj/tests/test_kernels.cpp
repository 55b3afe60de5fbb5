// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "nasinv/kernels.hpp"
#include "oracles.hpp"

using namespace nasinv;

// The OpenMP kernels must agree bit for bit with the serial references for
// any thread count; each output element is computed independently.

TEST_CASE("window_sumsq parallel matches serial exactly") {
  const auto x = oracles::white_noise(5000, 7);
  for (int w : {1, 2, 25, 400}) {
    const auto a = kernels::window_sumsq(x, w);
    const auto b = serial::window_sumsq(x, w);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("sinc_resample parallel matches serial exactly") {
  const auto x = oracles::white_noise(44100, 9);
  const auto a = kernels::sinc_resample(x, 44100.0, 100.0, 45.0, 0.0889);
  const auto b = serial::sinc_resample(x, 44100.0, 100.0, 45.0, 0.0889);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("power_frames parallel matches serial exactly") {
  const auto x = oracles::white_noise(16000, 13);
  std::vector<double> window(400);
  for (std::size_t i = 0; i < window.size(); ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (window.size() - 1));
  }
  const auto a = kernels::power_frames(x, 50, 400, 320, 512, window);
  const auto b = serial::power_frames(x, 50, 400, 320, 512, window);
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    REQUIRE(a[t].size() == b[t].size());
    for (std::size_t k = 0; k < a[t].size(); ++k) CHECK(a[t][k] == b[t][k]);
  }
}

TEST_CASE("nacf_frames parallel matches serial exactly") {
  const auto x = oracles::sine(200.0, 16000.0, 1.0);
  std::vector<double> ea, eb;
  const auto a = kernels::nacf_frames(x, 100, 640, 160, 32, 320, &ea);
  const auto b = serial::nacf_frames(x, 100, 640, 160, 32, 320, &eb);
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(ea[t] == eb[t]);
    for (std::size_t k = 0; k < a[t].size(); ++k) CHECK(a[t][k] == b[t][k]);
  }
}

TEST_CASE("reflect_index mirrors without repeating the edge") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-2, 5) == 2);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(6, 5) == 2);
  CHECK(reflect_index(0, 1) == 0);
  CHECK(reflect_index(-3, 1) == 0);
  CHECK(reflect_index(2, 2) == 0);
}
