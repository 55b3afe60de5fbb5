// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "nasinv/signal.hpp"

namespace nasinv {

// L pseudo-layers of T x D frame features at 50 frames/s. Stored in float, the
// same precision as the stack file format, so export -> import round-trips
// bit-identically.
struct FeatureStack {
  static constexpr double kFrameRateHz = 50.0;
  std::vector<Eigen::MatrixXf> layers;  // each T x D

  std::size_t L() const { return layers.size(); }
  std::size_t T() const { return layers.empty() ? 0 : layers[0].rows(); }
  std::size_t D() const { return layers.empty() ? 0 : layers[0].cols(); }
};

struct FrontendConfig {
  int n_layers = 25;
  int n_mels = 40;
  std::uint64_t seed = 2024;
};

// Built-in extractor: log-mel filterbank (25 ms window, 20 ms hop, FFT 512)
// standardized per utterance, then one pseudo-layer per l in [0, L): the base
// features smoothed over a centered window of 2l+1 frames and mixed through a
// seeded random orthogonal D x D transform. Layers are genuinely distinct but
// derived from the same audio, standing in for a deep feature hierarchy.
// Throws RateMismatch unless the audio is at 16 kHz.
FeatureStack extract_feature_stack(const Signal& audio,
                                   const FrontendConfig& config);

// Stack tensor file: magic "NSTK1", u32 L, u32 T, u32 D (little-endian), then
// L*T*D 32-bit floats in layer-major, frame-next, dim-last order.
void export_feature_stack(const std::string& path, const FeatureStack& stack);
FeatureStack import_feature_stack(const std::string& path);

// out[t,d] = sum_l w[l] * stack[l][t,d], in double for downstream autodiff.
Eigen::MatrixXd layer_weighted_sum(const FeatureStack& stack,
                                   const std::vector<double>& weights);

// Gradient of a scalar loss w.r.t. the fusion weights given the upstream
// gradient on the fused T x D output: g[l] = sum_{t,d} up[t,d]*stack[l][t,d].
std::vector<double> layer_weight_grad(const FeatureStack& stack,
                                      const Eigen::MatrixXd& upstream);

}  // namespace nasinv
