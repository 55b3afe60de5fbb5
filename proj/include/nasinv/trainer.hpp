// SPDX-License-Identifier: Apache-2.0
//
// Training machinery for the sequence model: the correlation-plus-scale
// regression loss, random segment sampling, ADAM, learning-rate scheduling
// on dev-loss plateaus, and the epoch loop with early stopping.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "nasinv/si_model.hpp"
#include "nasinv/target_pipeline.hpp"

namespace nasinv {

// Loss for one head on one segment: (1 - pearson) + alpha * rmse, with the
// gradient taken with respect to the predictions. The prediction variance is
// floored at 1e-12 (a constant prediction scores pearson 0, not NaN); a
// TARGET whose centered energy is at or below that floor is numerically
// constant, has no defined correlation, and raises ZeroVariance.
struct TaskLoss {
  double value = 0.0;
  Eigen::VectorXd grad;
};
TaskLoss task_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& target,
                   double alpha);

// Batch objective: per segment, the vp term plus the mean over the auxiliary
// head terms; segments are summed. Heads whose target is missing or constant
// are skipped and reported in `skipped` as "<item>:<head>". Raises EmptyBatch
// on an empty batch and ShapeError on batch-size disagreement.
struct BatchLossResult {
  double value = 0.0;
  std::vector<HeadOutputs> grads;
  std::vector<std::string> skipped;
};
BatchLossResult total_loss(
    const std::vector<HeadOutputs>& outputs,
    const std::vector<std::map<std::string, Eigen::VectorXd>>& targets,
    double alpha);

// Flatten target traces into per-head vectors (egg_env only when present).
std::map<std::string, Eigen::VectorXd> trace_targets(const TargetTraces& traces);

// A training view: a contiguous slice of an utterance's feature stack plus
// the matching target slice at twice the frame rate.
struct SegmentView {
  FeatureStack features;
  std::map<std::string, Eigen::VectorXd> targets;
};

// Draw a random segment 2-5 s long, snapped to the 20 ms feature-frame grid
// (uniform integer length in [100, 250] frames). Utterances shorter than 2 s
// are used whole. Targets are sliced at twice the frame indices; the usable
// extent is the overlap of the feature and target streams.
SegmentView sample_segment(const FeatureStack& stack,
                           const std::map<std::string, Eigen::VectorXd>& targets,
                           std::mt19937_64& rng);

// The whole utterance as one segment (same overlap trimming as above).
SegmentView full_segment(const FeatureStack& stack,
                         const std::map<std::string, Eigen::VectorXd>& targets);

// ADAM with bias correction over the model's trainable tensors.
struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  ModelParameters m, v;
};
AdamState make_adam(const ModelParameters& params, double lr);
// Applies one update in place. A non-finite gradient raises NumericError
// before any state is touched.
void adam_step(ModelParameters& params, const ModelParameters& grads,
               AdamState& state);
// Scalar kernel used by adam_step, exposed for direct testing.
void adam_update(double* param, const double* grad, double* m, double* v,
                 std::ptrdiff_t n, long step, double lr, double beta1,
                 double beta2, double eps);

// Halve the learning rate after `patience` epochs without a dev-loss
// improvement of more than min_delta, never dropping below min_lr.
struct PlateauScheduler {
  double factor = 0.5;
  int patience = 2;
  double min_lr = 1e-6;
  double min_delta = 1e-5;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  double observe(double dev_loss, double lr);
};

struct TrainUtterance {
  FeatureStack features;
  std::map<std::string, Eigen::VectorXd> targets;
};
using Dataset = std::vector<TrainUtterance>;

struct TrainConfig {
  int max_epochs = 50;
  int batch_size = 8;
  double lr = 5e-4;
  double alpha = 0.2;
  int early_stop_patience = 5;
  std::uint64_t seed = 1;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParameters best_params;
  std::vector<EpochRecord> history;
  int best_epoch = -1;  // -1: the warm-start parameters were never beaten
  double best_dev_loss = 0.0;
  long skipped_head_terms = 0;
};

// Epoch loop: one random segment per training utterance per epoch, shuffled,
// in batches of `batch_size`; dev loss is the mean per-utterance objective in
// eval mode, evaluated once before training starts (the warm-start baseline)
// and after every epoch. Keeps the best-dev parameters, halves the learning
// rate on plateaus, and stops after `early_stop_patience` epochs without
// improvement. Deterministic for a fixed seed (timings aside).
TrainResult train_model(const ModelParameters& start, const Dataset& train,
                        const Dataset& dev, const TrainConfig& cfg);

// History CSV: "epoch,train_loss,dev_loss,lr,seconds", one row per epoch.
void write_history_csv(const std::string& path,
                       const std::vector<EpochRecord>& history);

}  // namespace nasinv
