// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nasinv/feature_frontend.hpp"
#include "nasinv/target_pipeline.hpp"

namespace nasinv {

// The five recognized regression targets. The adult model uses all of them;
// the EGG-free variant drops egg_env.
const std::vector<std::string>& known_head_names();

struct ModelConfig {
  int hidden = 32;    // GRU units per direction
  int dense = 32;     // dense layer width
  int feature_dim = 40;
  int fusion_layers = 25;
  double dropout_p = 0.3;
  std::vector<std::string> heads = {"vp", "egg_env", "per", "aper", "f0"};
  std::uint64_t seed = 1;
};

// One gated recurrent cell: update (z), reset (r), candidate (n) blocks.
//   z = sigm(wz x + uz h + bz), r = sigm(wr x + ur h + br),
//   n = tanh(wn x + un (r .* h) + bn), h' = (1-z) .* n + z .* h
struct GruCell {
  Eigen::MatrixXd wz, wr, wn;  // H x in
  Eigen::MatrixXd uz, ur, un;  // H x H
  Eigen::VectorXd bz, br, bn;  // H
};

struct Head {
  Eigen::VectorXd w;  // dense
  double b = 0.0;
};

struct ModelParameters {
  ModelConfig config;
  std::vector<double> layer_weights;  // fusion, length fusion_layers
  GruCell gru1_fwd, gru1_bwd;         // input feature_dim
  GruCell gru2_fwd, gru2_bwd;         // input 2*hidden
  Eigen::MatrixXd dense_w;            // dense x 2*hidden
  Eigen::VectorXd dense_b;
  Eigen::VectorXd bn_gamma, bn_beta;
  Eigen::VectorXd bn_running_mean, bn_running_var;  // buffers, not trained
  std::map<std::string, Head> heads;
};

// Flat named view over a tensor (column-major data as Eigen stores it).
struct TensorRef {
  std::string name;
  double* data;
  std::ptrdiff_t size;
};
struct ConstTensorRef {
  std::string name;
  const double* data;
  std::ptrdiff_t size;
};

// Every trainable tensor in a fixed canonical order (running stats excluded).
std::vector<TensorRef> trainable_tensors(ModelParameters& p);
std::vector<ConstTensorRef> trainable_tensors(const ModelParameters& p);

// Seeded fan-in-scaled uniform initialization; deterministic per seed.
ModelParameters init_params(const ModelConfig& config);

// Same structure as `p` with every tensor zeroed — the gradient container.
ModelParameters zeros_like(const ModelParameters& p);

enum class Mode { kTrain, kEval };

// Head name -> output series of length 2T (one entry per model head).
using HeadOutputs = std::map<std::string, Eigen::VectorXd>;

// Saved intermediate state for one item, enough to replay the graph backward.
struct GruDirTape {
  Eigen::MatrixXd h, z, r, n;  // T x H, rows indexed by time
};
struct ItemTape {
  const FeatureStack* stack = nullptr;
  Eigen::MatrixXd fused;                  // T x D
  GruDirTape g1f, g1b, g2f, g2b;
  Eigen::MatrixXd gru1_drop, gru2_drop;   // T x 2H, post-dropout
  Eigen::MatrixXd drop1_mask, drop2_mask;
  Eigen::MatrixXd dense_tanh;             // T x dense
  Eigen::MatrixXd bn_xhat;                // 2T x dense
  Eigen::MatrixXd bn_drop;                // 2T x dense, head input
  Eigen::MatrixXd drop3_mask;
  HeadOutputs head_out;
};
struct BatchTape {
  Mode mode = Mode::kEval;
  std::vector<ItemTape> items;
  Eigen::VectorXd bn_mean, bn_sigma;  // stats used for normalization
};

// Batch forward pass: fuse each stack with the trainable layer weights, run
// biGRU -> dropout -> biGRU -> dropout -> dense+tanh -> 2x upsample ->
// batchnorm -> dropout -> per-head linear. Train mode draws dropout masks
// from `rng` (skipped when dropout_p == 0), normalizes with batch statistics
// over all items' frames, and updates the running stats (momentum 0.1). Eval
// mode is deterministic and uses the running stats.
BatchTape forward_batch(ModelParameters& params,
                        const std::vector<const FeatureStack*>& stacks,
                        Mode mode, std::mt19937_64& rng);

// Single-item convenience wrapper (a batch of one).
HeadOutputs forward(ModelParameters& params, const FeatureStack& stack,
                    Mode mode, std::mt19937_64& rng);

// Reverse-mode gradients for every trainable tensor given upstream gradients
// on each item's head outputs. The tape must come from a train-mode forward
// (batch statistics are part of the differentiated graph).
ModelParameters backward_batch(const ModelParameters& params,
                               const BatchTape& tape,
                               const std::vector<HeadOutputs>& upstream);

// One bidirectional GRU layer without a tape: rows t of the result are
// [h_fwd_t | h_bwd_t]. Exposed for the time-reversal symmetry tests.
Eigen::MatrixXd run_bigru(const GruCell& fwd, const GruCell& bwd,
                          const Eigen::MatrixXd& input);

// A scalar training objective over batch head outputs, with its gradient.
struct BatchLoss {
  std::function<double(const std::vector<HeadOutputs>&)> value;
  std::function<std::vector<HeadOutputs>(const std::vector<HeadOutputs>&)> grad;
};

// Compare analytic gradients against central finite differences for every
// trainable parameter; returns the worst relative error (denominator floored
// at 1e-3 so noise-level gradients cannot fabricate failures). Requires
// dropout_p == 0 (masks would otherwise change between probe evaluations)
// and epsilon > 0, else InvalidArgument.
double gradient_check(const ModelParameters& params,
                      const std::vector<const FeatureStack*>& stacks,
                      const BatchLoss& loss, double epsilon);

// Versioned checkpoint: magic "NSCK1", config (and optional trace
// normalization stats) as JSON, then a named-tensor directory in f32.
// Pass the frontend seed so the checkpoint is self-describing for
// inference: feature extraction must replay the exact frontend (its seed
// drives the layer mixing), not just match the model's input shape.
void save_checkpoint(const std::string& path, const ModelParameters& params,
                     const TraceStats* norm_stats = nullptr,
                     const std::uint64_t* frontend_seed = nullptr);

struct LoadedCheckpoint {
  ModelParameters params;
  std::optional<TraceStats> norm_stats;
  std::optional<std::uint64_t> frontend_seed;
  bool dropped_egg_head = false;
};

// Load as stored. The expected-heads overload enforces the head-set rule:
// the only permitted mismatch is dropping a stored egg_env head when the
// expected set lacks it (the fine-tuning path); anything else is ShapeError.
LoadedCheckpoint load_checkpoint(const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::vector<std::string>& expected_heads);

}  // namespace nasinv
