// SPDX-License-Identifier: Apache-2.0
#include "nasinv/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "nasinv/errors.hpp"

namespace nasinv {

// Inputs whose centered energy sits at or below this are numerically
// constant: mean subtraction of a constant non-dyadic value leaves ~1e-33
// of roundoff that must not pass for real variance.
constexpr double kVarianceFloor = 1e-12;

double ppmc(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ShapeError("ppmc: length mismatch");
  if (a.size() == 0) throw EmptyInput("ppmc: empty input");
  const Eigen::VectorXd da = a.array() - a.mean();
  const Eigen::VectorXd db = b.array() - b.mean();
  const double s_aa = da.squaredNorm();
  const double s_bb = db.squaredNorm();
  if (!(s_aa > kVarianceFloor) || !(s_bb > kVarianceFloor)) {
    throw ZeroVariance("ppmc: constant input has no defined correlation");
  }
  return da.dot(db) / std::sqrt(s_aa * s_bb);
}

double relative_improvement(double new_value, double old_value) {
  if (old_value == 0.0) {
    throw DivisionByZero("relative_improvement: old value is zero");
  }
  return 100.0 * (new_value - old_value) / old_value;
}

Aggregate aggregate(const std::vector<double>& values) {
  if (values.empty()) throw EmptyInput("aggregate: no values");
  Aggregate out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

std::vector<Fold> make_folds(const std::vector<std::string>& speakers,
                             int n_folds, std::uint64_t seed) {
  if (n_folds < 1) throw InvalidArgument("make_folds: n_folds must be >= 1");
  const std::set<std::string> unique(speakers.begin(), speakers.end());
  if (unique.size() != speakers.size()) {
    throw InvalidArgument("make_folds: duplicate speaker ids");
  }
  const std::size_t n = speakers.size();
  if (n < 7) {
    throw InsufficientSpeakers(
        "make_folds: need at least 7 speakers (3 test + 3 dev + 1 train), got " +
        std::to_string(n));
  }
  std::vector<std::string> order = speakers;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Fold> folds;
  folds.reserve(static_cast<std::size_t>(n_folds));
  for (int f = 0; f < n_folds; ++f) {
    Fold fold;
    std::set<std::size_t> held;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t idx = (3 * static_cast<std::size_t>(f) + i) % n;
      fold.test.push_back(order[idx]);
      held.insert(idx);
    }
    for (std::size_t i = 3; i < 6; ++i) {
      const std::size_t idx = (3 * static_cast<std::size_t>(f) + i) % n;
      fold.dev.push_back(order[idx]);
      held.insert(idx);
    }
    if (held.size() != 6) {
      throw InsufficientSpeakers(
          "make_folds: test and dev assignments overlap with only " +
          std::to_string(n) + " speakers");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!held.count(i)) fold.train.push_back(order[i]);
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

EvalResult evaluate_model(ModelParameters& params, const Dataset& data,
                          int batch_size) {
  if (batch_size < 1) throw InvalidArgument("evaluate_model: bad batch size");
  if (data.empty()) throw EmptyBatch("evaluate_model: empty dataset");

  EvalResult result;
  std::map<std::string, double> sums;
  std::mt19937_64 unused_rng(0);  // eval mode never draws

  std::vector<SegmentView> segments;
  segments.reserve(data.size());
  for (const auto& u : data) {
    segments.push_back(full_segment(u.features, u.targets));
  }
  for (std::size_t at = 0; at < segments.size();
       at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(segments.size(), at + static_cast<std::size_t>(batch_size));
    std::vector<const FeatureStack*> stacks;
    for (std::size_t i = at; i < end; ++i) {
      stacks.push_back(&segments[i].features);
    }
    const auto tape = forward_batch(params, stacks, Mode::kEval, unused_rng);
    for (std::size_t i = at; i < end; ++i) {
      const auto& outs = tape.items[i - at].head_out;
      for (const auto& [name, pred] : outs) {
        const auto t_it = segments[i].targets.find(name);
        if (t_it == segments[i].targets.end()) continue;
        if (pred.size() != t_it->second.size()) {
          throw ShapeError("evaluate_model: length mismatch on head '" + name +
                           "'");
        }
        double score;
        try {
          score = ppmc(pred, t_it->second);
        } catch (const ZeroVariance&) {
          result.excluded[name] += 1;
          continue;
        }
        sums[name] += score;
        result.scored[name] += 1;
        result.per_utterance[name].push_back(score);
      }
    }
  }
  for (const auto& [name, total] : sums) {
    result.mean_ppmc[name] = total / result.scored.at(name);
  }
  return result;
}

const std::vector<std::vector<std::string>>& ablation_head_sets() {
  static const std::vector<std::vector<std::string>> sets = {
      {"vp"},
      {"vp", "per", "aper", "f0"},
      {"vp", "egg_env"},
      {"vp", "egg_env", "per", "aper", "f0"},
  };
  return sets;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  const auto& columns = known_head_names();
  std::string out = "variant";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  char buf[64];
  for (const auto& row : rows) {
    out += row.variant;
    for (const auto& c : columns) {
      const bool carries =
          std::find(row.heads.begin(), row.heads.end(), c) != row.heads.end();
      const auto score = row.mean_ppmc.find(c);
      if (carries && score != row.mean_ppmc.end()) {
        std::snprintf(buf, sizeof(buf), ",%.4f", score->second);
        out += buf;
      } else {
        out += ",-";
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace nasinv
