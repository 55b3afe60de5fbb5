// SPDX-License-Identifier: Apache-2.0
#include "nasinv/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "nasinv/errors.hpp"

namespace nasinv {
namespace {

constexpr double kVarianceFloor = 1e-12;
constexpr double kImprovementDelta = 1e-5;
constexpr Eigen::Index kMinSegmentFrames = 100;  // 2 s at 50 frames/s
constexpr Eigen::Index kMaxSegmentFrames = 250;  // 5 s

// Numerically constant, not just bit-identical: mean subtraction of a
// constant non-dyadic value (e.g. 0.7) leaves ~1e-33 of roundoff, which an
// exact ">0" test would mistake for real variance.
bool has_variance(const Eigen::VectorXd& v) {
  return (v.array() - v.mean()).matrix().squaredNorm() > kVarianceFloor;
}

}  // namespace

TaskLoss task_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& target,
                   double alpha) {
  if (pred.size() != target.size()) {
    throw ShapeError("task_loss: prediction/target length mismatch");
  }
  const Eigen::Index n = pred.size();
  if (n == 0) throw EmptyInput("task_loss: empty segment");

  const Eigen::VectorXd dp = pred.array() - pred.mean();
  const Eigen::VectorXd dt = target.array() - target.mean();
  const double s_tt = dt.squaredNorm();
  if (!(s_tt > kVarianceFloor)) {
    throw ZeroVariance("task_loss: constant target has no defined correlation");
  }
  const double s_pp = std::max(dp.squaredNorm(), kVarianceFloor);
  const double s_pt = dp.dot(dt);
  const double denom = std::sqrt(s_pp * s_tt);
  const double pc = s_pt / denom;
  const double rmse = std::sqrt((pred - target).squaredNorm() / n);

  TaskLoss out;
  out.value = (1.0 - pc) + alpha * rmse;
  // d(pearson)/dp_i = [dt_i - pc * sqrt(s_tt/s_pp) * dp_i] / sqrt(s_pp*s_tt)
  const double ratio = pc * std::sqrt(s_tt / s_pp);
  Eigen::VectorXd grad = -(dt - ratio * dp) / denom;
  if (rmse > 0.0) {
    grad += (alpha / (n * rmse)) * (pred - target);
  }
  out.grad = std::move(grad);
  return out;
}

BatchLossResult total_loss(
    const std::vector<HeadOutputs>& outputs,
    const std::vector<std::map<std::string, Eigen::VectorXd>>& targets,
    double alpha) {
  if (outputs.empty()) throw EmptyBatch("total_loss: empty batch");
  if (outputs.size() != targets.size()) {
    throw ShapeError("total_loss: outputs/targets batch size mismatch");
  }
  BatchLossResult result;
  result.grads.resize(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    double aux_sum = 0.0;
    std::vector<std::pair<std::string, TaskLoss>> aux_terms;
    for (const auto& [name, pred] : outputs[i]) {
      const auto t_it = targets[i].find(name);
      if (t_it == targets[i].end()) {
        result.skipped.push_back(std::to_string(i) + ":" + name);
        continue;
      }
      if (pred.size() != t_it->second.size()) {
        throw ShapeError("total_loss: length mismatch on head '" + name +
                         "' of item " + std::to_string(i));
      }
      if (!has_variance(t_it->second)) {
        result.skipped.push_back(std::to_string(i) + ":" + name);
        continue;
      }
      TaskLoss term = task_loss(pred, t_it->second, alpha);
      if (name == "vp") {
        result.value += term.value;
        result.grads[i]["vp"] = std::move(term.grad);
      } else {
        aux_sum += term.value;
        aux_terms.emplace_back(name, std::move(term));
      }
    }
    if (!aux_terms.empty()) {
      const double scale = 1.0 / static_cast<double>(aux_terms.size());
      result.value += scale * aux_sum;
      for (auto& [name, term] : aux_terms) {
        result.grads[i][name] = scale * term.grad;
      }
    }
  }
  return result;
}

std::map<std::string, Eigen::VectorXd> trace_targets(const TargetTraces& traces) {
  std::map<std::string, Eigen::VectorXd> out;
  auto put = [&](const char* name, const Series100& v) {
    out[name] = Eigen::Map<const Eigen::VectorXd>(
        v.values.data(), static_cast<Eigen::Index>(v.values.size()));
  };
  put("vp", traces.vp);
  if (traces.egg_env) put("egg_env", *traces.egg_env);
  put("per", traces.per);
  put("aper", traces.aper);
  put("f0", traces.f0);
  return out;
}

namespace {

Eigen::Index usable_frames(const FeatureStack& stack,
                           const std::map<std::string, Eigen::VectorXd>& targets) {
  Eigen::Index frames = static_cast<Eigen::Index>(stack.T());
  for (const auto& [name, v] : targets) {
    frames = std::min(frames, v.size() / 2);
  }
  return frames;
}

SegmentView slice_segment(const FeatureStack& stack,
                          const std::map<std::string, Eigen::VectorXd>& targets,
                          Eigen::Index start, Eigen::Index len) {
  SegmentView seg;
  seg.features.layers.reserve(stack.layers.size());
  for (const auto& layer : stack.layers) {
    seg.features.layers.emplace_back(layer.middleRows(start, len));
  }
  for (const auto& [name, v] : targets) {
    seg.targets[name] = v.segment(2 * start, 2 * len);
  }
  return seg;
}

}  // namespace

SegmentView sample_segment(const FeatureStack& stack,
                           const std::map<std::string, Eigen::VectorXd>& targets,
                           std::mt19937_64& rng) {
  const Eigen::Index frames = usable_frames(stack, targets);
  if (frames <= 0) throw EmptyInput("sample_segment: no usable frames");
  std::uniform_int_distribution<Eigen::Index> len_dist(kMinSegmentFrames,
                                                       kMaxSegmentFrames);
  const Eigen::Index len = std::min(len_dist(rng), frames);
  Eigen::Index start = 0;
  if (frames > len) {
    std::uniform_int_distribution<Eigen::Index> start_dist(0, frames - len);
    start = start_dist(rng);
  }
  return slice_segment(stack, targets, start, len);
}

SegmentView full_segment(const FeatureStack& stack,
                         const std::map<std::string, Eigen::VectorXd>& targets) {
  const Eigen::Index frames = usable_frames(stack, targets);
  if (frames <= 0) throw EmptyInput("full_segment: no usable frames");
  return slice_segment(stack, targets, 0, frames);
}

AdamState make_adam(const ModelParameters& params, double lr) {
  AdamState s;
  s.lr = lr;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  return s;
}

void adam_update(double* param, const double* grad, double* m, double* v,
                 std::ptrdiff_t n, long step, double lr, double beta1,
                 double beta2, double eps) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
    v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
    const double m_hat = m[k] / bc1;
    const double v_hat = v[k] / bc2;
    param[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

void adam_step(ModelParameters& params, const ModelParameters& grads,
               AdamState& state) {
  auto g_refs = trainable_tensors(const_cast<ModelParameters&>(grads));
  for (const auto& ref : g_refs) {
    for (std::ptrdiff_t k = 0; k < ref.size; ++k) {
      if (!std::isfinite(ref.data[k])) {
        throw NumericError("adam_step: non-finite gradient in tensor '" +
                           ref.name + "'");
      }
    }
  }
  auto p_refs = trainable_tensors(params);
  auto m_refs = trainable_tensors(state.m);
  auto v_refs = trainable_tensors(state.v);
  ++state.step;
  for (std::size_t i = 0; i < p_refs.size(); ++i) {
    adam_update(p_refs[i].data, g_refs[i].data, m_refs[i].data, v_refs[i].data,
                p_refs[i].size, state.step, state.lr, state.beta1, state.beta2,
                state.eps);
  }
}

double PlateauScheduler::observe(double dev_loss, double lr) {
  if (dev_loss < best - min_delta) {
    best = dev_loss;
    bad_epochs = 0;
    return lr;
  }
  ++bad_epochs;
  if (bad_epochs > patience) {
    bad_epochs = 0;
    return std::max(lr * factor, min_lr);
  }
  return lr;
}

namespace {

struct DevEval {
  double mean_loss = 0.0;
  long skipped = 0;
};

DevEval dev_loss_mean(ModelParameters& params,
                      const std::vector<SegmentView>& segments, double alpha,
                      int batch_size) {
  std::mt19937_64 unused_rng(0);  // eval mode never draws
  DevEval out;
  double total = 0.0;
  for (std::size_t at = 0; at < segments.size();
       at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(segments.size(), at + static_cast<std::size_t>(batch_size));
    std::vector<const FeatureStack*> stacks;
    std::vector<std::map<std::string, Eigen::VectorXd>> targets;
    for (std::size_t i = at; i < end; ++i) {
      stacks.push_back(&segments[i].features);
      targets.push_back(segments[i].targets);
    }
    const auto tape = forward_batch(params, stacks, Mode::kEval, unused_rng);
    std::vector<HeadOutputs> outs;
    outs.reserve(tape.items.size());
    for (const auto& it : tape.items) outs.push_back(it.head_out);
    const auto bl = total_loss(outs, targets, alpha);
    total += bl.value;
    out.skipped += static_cast<long>(bl.skipped.size());
  }
  out.mean_loss = total / static_cast<double>(segments.size());
  return out;
}

}  // namespace

TrainResult train_model(const ModelParameters& start, const Dataset& train,
                        const Dataset& dev, const TrainConfig& cfg) {
  if (train.empty() || dev.empty()) {
    throw EmptyBatch("train_model: empty train or dev set");
  }
  if (cfg.batch_size < 1 || cfg.max_epochs < 0 || cfg.early_stop_patience < 1) {
    throw InvalidArgument("train_model: bad configuration");
  }

  ModelParameters params = start;
  std::vector<SegmentView> dev_segments;
  dev_segments.reserve(dev.size());
  for (const auto& u : dev) {
    dev_segments.push_back(full_segment(u.features, u.targets));
  }

  std::mt19937_64 rng(cfg.seed);
  AdamState adam = make_adam(params, cfg.lr);
  PlateauScheduler scheduler;
  double lr = cfg.lr;

  TrainResult result;
  const auto baseline =
      dev_loss_mean(params, dev_segments, cfg.alpha, cfg.batch_size);
  result.best_params = params;
  result.best_dev_loss = baseline.mean_loss;
  result.best_epoch = -1;
  result.skipped_head_terms += baseline.skipped;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  int stale_epochs = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);

    double train_total = 0.0;
    std::size_t n_segments = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      std::vector<SegmentView> segments;
      segments.reserve(end - at);
      for (std::size_t i = at; i < end; ++i) {
        const auto& u = train[order[i]];
        segments.push_back(sample_segment(u.features, u.targets, rng));
      }
      std::vector<const FeatureStack*> stacks;
      std::vector<std::map<std::string, Eigen::VectorXd>> targets;
      for (const auto& s : segments) {
        stacks.push_back(&s.features);
        targets.push_back(s.targets);
      }
      const auto tape = forward_batch(params, stacks, Mode::kTrain, rng);
      std::vector<HeadOutputs> outs;
      outs.reserve(tape.items.size());
      for (const auto& it : tape.items) outs.push_back(it.head_out);
      const auto bl = total_loss(outs, targets, cfg.alpha);
      result.skipped_head_terms += static_cast<long>(bl.skipped.size());
      const auto grads = backward_batch(params, tape, bl.grads);
      adam.lr = lr;
      adam_step(params, grads, adam);
      train_total += bl.value;
      n_segments += end - at;
    }

    const auto dev_eval =
        dev_loss_mean(params, dev_segments, cfg.alpha, cfg.batch_size);
    result.skipped_head_terms += dev_eval.skipped;
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.history.push_back({epoch,
                              train_total / static_cast<double>(n_segments),
                              dev_eval.mean_loss, lr, seconds});

    lr = scheduler.observe(dev_eval.mean_loss, lr);
    if (dev_eval.mean_loss < result.best_dev_loss - kImprovementDelta) {
      result.best_dev_loss = dev_eval.mean_loss;
      result.best_params = params;
      result.best_epoch = epoch;
      stale_epochs = 0;
    } else if (++stale_epochs >= cfg.early_stop_patience) {
      break;
    }
  }
  return result;
}

void write_history_csv(const std::string& path,
                       const std::vector<EpochRecord>& history) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_history_csv: cannot open " + path);
  f << "epoch,train_loss,dev_loss,lr,seconds\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.3f\n", r.epoch,
                  r.train_loss, r.dev_loss, r.lr, r.seconds);
    f << buf;
  }
  if (!f) throw IoError("write_history_csv: short write to " + path);
}

}  // namespace nasinv
