// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nasinv/errors.hpp"
#include "nasinv/feature_frontend.hpp"
#include "oracles.hpp"

using namespace nasinv;

namespace {

constexpr double kFs = 16000.0;

Signal demo_audio(double dur_s = 1.0, std::uint64_t seed = 17) {
  Signal s{oracles::sine(220.0, kFs, dur_s, 0.4), kFs};
  const auto noise = oracles::white_noise(s.samples.size(), seed, 0.2);
  for (std::size_t i = 0; i < s.samples.size(); ++i) s.samples[i] += noise[i];
  return s;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("shape contract: 50 fps, default 25 layers") {
  const FrontendConfig cfg;
  const auto stack = extract_feature_stack(demo_audio(1.0), cfg);
  CHECK(stack.L() == 25);
  CHECK(stack.T() == 50);
  CHECK(stack.D() == 40);

  const auto stack2 = extract_feature_stack(demo_audio(2.0), cfg);
  CHECK(stack2.T() == 100);
}

TEST_CASE("digital silence stays finite") {
  const Signal silence{std::vector<double>(16000, 0.0), kFs};
  const auto stack = extract_feature_stack(silence, FrontendConfig{});
  for (const auto& layer : stack.layers) {
    CHECK(layer.allFinite());
  }
}

TEST_CASE("extraction is deterministic for a fixed seed and distinct across layers") {
  const auto a = extract_feature_stack(demo_audio(), FrontendConfig{});
  const auto b = extract_feature_stack(demo_audio(), FrontendConfig{});
  REQUIRE(a.L() == b.L());
  for (std::size_t l = 0; l < a.L(); ++l) {
    CHECK(a.layers[l] == b.layers[l]);
  }
  // Different seed changes the mixes.
  FrontendConfig other;
  other.seed = 999;
  const auto c = extract_feature_stack(demo_audio(), other);
  CHECK(a.layers[0] != c.layers[0]);
  // Layers within one stack differ from each other.
  CHECK(a.layers[0] != a.layers[1]);
  CHECK(a.layers[1] != a.layers[24]);
}

TEST_CASE("non-16kHz audio is rejected") {
  CHECK_THROWS_AS(extract_feature_stack(
                      Signal{oracles::sine(100.0, 8000.0, 1.0), 8000.0},
                      FrontendConfig{}),
                  RateMismatch);
}

TEST_CASE("stack file round-trips bit-identically") {
  FrontendConfig cfg;
  cfg.n_layers = 4;
  const auto stack = extract_feature_stack(demo_audio(0.5), cfg);
  const auto path = temp_path("nasinv_stack.nstk");
  export_feature_stack(path, stack);
  const auto back = import_feature_stack(path);
  REQUIRE(back.L() == stack.L());
  REQUIRE(back.T() == stack.T());
  REQUIRE(back.D() == stack.D());
  for (std::size_t l = 0; l < stack.L(); ++l) {
    CHECK(back.layers[l] == stack.layers[l]);
  }
  std::remove(path.c_str());
}

TEST_CASE("truncated payload raises ShapeError, bad header FormatError") {
  FrontendConfig cfg;
  cfg.n_layers = 3;
  const auto stack = extract_feature_stack(demo_audio(0.3), cfg);
  const auto path = temp_path("nasinv_stack_trunc.nstk");
  export_feature_stack(path, stack);

  // Chop off the last layer's worth of floats: header now over-claims.
  const auto full = std::filesystem::file_size(path);
  const auto one_layer = 4ULL * stack.T() * stack.D();
  std::filesystem::resize_file(path, full - one_layer);
  CHECK_THROWS_AS(import_feature_stack(path), ShapeError);

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "WRONG";
  }
  CHECK_THROWS_AS(import_feature_stack(path), FormatError);

  std::filesystem::resize_file(path, 0);
  CHECK_THROWS_AS(import_feature_stack(path), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("one-hot weights select a layer; uniform weights average") {
  FrontendConfig cfg;
  cfg.n_layers = 5;
  const auto stack = extract_feature_stack(demo_audio(0.4), cfg);

  std::vector<double> one_hot(5, 0.0);
  one_hot[3] = 1.0;
  const Eigen::MatrixXd picked = layer_weighted_sum(stack, one_hot);
  CHECK((picked - stack.layers[3].cast<double>()).cwiseAbs().maxCoeff() == 0.0);

  const std::vector<double> uniform(5, 1.0 / 5.0);
  const Eigen::MatrixXd mean = layer_weighted_sum(stack, uniform);
  Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(picked.rows(), picked.cols());
  for (const auto& layer : stack.layers) expect += layer.cast<double>();
  expect /= 5.0;
  CHECK((mean - expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("weighted sum is linear in the weights") {
  FrontendConfig cfg;
  cfg.n_layers = 3;
  const auto stack = extract_feature_stack(demo_audio(0.4), cfg);
  const std::vector<double> w1 = {0.2, -0.5, 1.1};
  const std::vector<double> w2 = {0.9, 0.3, -0.7};
  const double a = 1.25, b = -0.5;
  std::vector<double> combo(3);
  for (int i = 0; i < 3; ++i) combo[i] = a * w1[i] + b * w2[i];

  const Eigen::MatrixXd lhs = layer_weighted_sum(stack, combo);
  const Eigen::MatrixXd rhs =
      a * layer_weighted_sum(stack, w1) + b * layer_weighted_sum(stack, w2);
  const double scale = rhs.cwiseAbs().maxCoeff();
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-9 * std::max(scale, 1.0));
}

TEST_CASE("weight gradient matches central finite differences") {
  FrontendConfig cfg;
  cfg.n_layers = 4;
  const auto stack = extract_feature_stack(demo_audio(0.3), cfg);

  // Scalar loss: 0.5 * || fused ||^2, so upstream gradient = fused itself.
  std::vector<double> w = {0.3, -0.2, 0.8, 0.1};
  const Eigen::MatrixXd fused = layer_weighted_sum(stack, w);
  const auto grad = layer_weight_grad(stack, fused);

  const double eps = 1e-4;
  for (std::size_t l = 0; l < w.size(); ++l) {
    auto wp = w, wm = w;
    wp[l] += eps;
    wm[l] -= eps;
    const double lp = 0.5 * layer_weighted_sum(stack, wp).squaredNorm();
    const double lm = 0.5 * layer_weighted_sum(stack, wm).squaredNorm();
    const double fd = (lp - lm) / (2.0 * eps);
    CHECK(std::abs(grad[l] - fd) <= 1e-5 * std::max(std::abs(fd), 1.0));
  }
}

TEST_CASE("weight count mismatch raises ShapeError") {
  FrontendConfig cfg;
  cfg.n_layers = 3;
  const auto stack = extract_feature_stack(demo_audio(0.3), cfg);
  CHECK_THROWS_AS(layer_weighted_sum(stack, {1.0, 2.0}), ShapeError);
}
