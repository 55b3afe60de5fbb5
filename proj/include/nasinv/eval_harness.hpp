// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: Pearson correlation scoring per utterance and target,
// speaker-level cross-validation folds, fold aggregation, and the
// head-ablation comparison table.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nasinv/trainer.hpp"

namespace nasinv {

// Pearson product-moment correlation. Raises ShapeError on length mismatch,
// EmptyInput on empty vectors, ZeroVariance when either side is numerically
// constant (centered energy at or below the 1e-12 floor).
double ppmc(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Percentage change of `new_value` relative to `old_value`:
// 100 * (new - old) / old. Raises DivisionByZero when old_value is 0.
double relative_improvement(double new_value, double old_value);

// Mean and population standard deviation. Raises EmptyInput.
struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
};
Aggregate aggregate(const std::vector<double>& values);

// One speaker-level cross-validation split.
struct Fold {
  std::vector<std::string> train, dev, test;
};

// Shuffle the speakers once with the seed, then rotate: fold f tests
// speakers (3f..3f+2) mod N of the shuffled order, uses the next three as
// dev, and trains on the rest. Requires at least 7 distinct speakers
// (InsufficientSpeakers otherwise; duplicates raise InvalidArgument).
std::vector<Fold> make_folds(const std::vector<std::string>& speakers,
                             int n_folds, std::uint64_t seed);

// Correlation of model predictions against targets, one score per utterance
// per target, then averaged over utterances. Utterances where either the
// prediction or the target is constant have no defined correlation; they are
// excluded from that target's mean and counted in `excluded`.
struct EvalResult {
  std::map<std::string, double> mean_ppmc;            // targets with >=1 score
  std::map<std::string, int> scored;                  // utterances averaged
  std::map<std::string, int> excluded;                // utterances excluded
  std::map<std::string, std::vector<double>> per_utterance;
};
EvalResult evaluate_model(ModelParameters& params, const Dataset& data,
                          int batch_size = 8);

// The four head configurations compared in the ablation: the vp head alone,
// vp plus the source-feature heads, vp plus the EGG envelope head, and the
// full five-head model.
const std::vector<std::vector<std::string>>& ablation_head_sets();

// CSV comparison table: one row per variant, one column per known head,
// "-" where a variant does not carry that head.
struct AblationRow {
  std::string variant;
  std::vector<std::string> heads;
  std::map<std::string, double> mean_ppmc;
};
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace nasinv
