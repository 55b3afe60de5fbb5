// SPDX-License-Identifier: Apache-2.0
//
// Trainer: loss contract values and gradients, segment sampling, the ADAM
// recurrence, plateau scheduling, and the epoch loop (determinism, early
// stopping, and actual learning on a synthetic regression task).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "nasinv/errors.hpp"
#include "nasinv/trainer.hpp"
#include "oracles.hpp"

using namespace nasinv;

namespace {

Eigen::VectorXd random_vec(Eigen::Index n, std::uint64_t seed, double lo = -1.0,
                           double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

FeatureStack make_stack(int n_layers, int t_len, int dim, std::uint64_t seed) {
  FeatureStack s;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int l = 0; l < n_layers; ++l) {
    Eigen::MatrixXf m(t_len, dim);
    for (int t = 0; t < t_len; ++t) {
      for (int d = 0; d < dim; ++d) m(t, d) = static_cast<float>(u(rng));
    }
    s.layers.push_back(std::move(m));
  }
  return s;
}

// Synthetic regression task whose targets are smooth functions of the input
// features, so a trained model must achieve a large dev-loss drop.
TrainUtterance make_task_utterance(int n_layers, int t_len, int dim,
                                   std::uint64_t seed) {
  TrainUtterance u;
  u.features = make_stack(n_layers, t_len, dim, seed);
  const auto& base = u.features.layers[0];
  Eigen::VectorXd vp(2 * t_len), per(2 * t_len);
  for (int t = 0; t < t_len; ++t) {
    const double m = base.row(t).mean();
    const double a = std::tanh(3.0 * m);
    const double b = 0.5 + 0.5 * std::sin(3.0 * m);
    vp[2 * t] = vp[2 * t + 1] = a;
    per[2 * t] = per[2 * t + 1] = b;
  }
  u.targets["vp"] = vp;
  u.targets["per"] = per;
  return u;
}

ModelConfig task_config() {
  ModelConfig cfg;
  cfg.hidden = 6;
  cfg.dense = 6;
  cfg.feature_dim = 6;
  cfg.fusion_layers = 2;
  cfg.dropout_p = 0.0;
  cfg.heads = {"vp", "per"};
  cfg.seed = 3;
  return cfg;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("perfect predictions score zero loss") {
  const auto t = random_vec(40, 1);
  const auto l = task_loss(t, t, 0.2);
  CHECK(std::abs(l.value) < 1e-12);
}

TEST_CASE("a constant offset leaves only the scale term") {
  Eigen::VectorXd t = random_vec(25, 2);
  Eigen::VectorXd p = t.array() + 2.6;
  const auto l = task_loss(p, t, 0.2);
  // correlation 1, rms error 2.6: loss = 0 + 0.2 * 2.6 = 0.52
  CHECK(l.value == doctest::Approx(0.52).epsilon(1e-9));
}

TEST_CASE("perfectly anti-correlated predictions score 2 plus the scale term") {
  Eigen::VectorXd t = random_vec(30, 3);
  Eigen::VectorXd p = -t;
  const auto l = task_loss(p, t, 0.2);
  std::vector<double> pv(p.data(), p.data() + p.size());
  std::vector<double> tv(t.data(), t.data() + t.size());
  CHECK(l.value ==
        doctest::Approx(2.0 + 0.2 * oracles::rmse_direct(pv, tv)).epsilon(1e-12));
}

TEST_CASE("a constant prediction scores correlation zero, not NaN") {
  Eigen::VectorXd t = random_vec(20, 4);
  Eigen::VectorXd p = Eigen::VectorXd::Constant(20, 0.37);
  const auto l = task_loss(p, t, 0.2);
  std::vector<double> pv(p.data(), p.data() + p.size());
  std::vector<double> tv(t.data(), t.data() + t.size());
  CHECK(l.value ==
        doctest::Approx(1.0 + 0.2 * oracles::rmse_direct(pv, tv)).epsilon(1e-9));
  CHECK(l.grad.allFinite());
}

TEST_CASE("a constant target raises ZeroVariance") {
  Eigen::VectorXd t = Eigen::VectorXd::Constant(15, 0.5);
  Eigen::VectorXd p = random_vec(15, 5);
  CHECK_THROWS_AS((void)task_loss(p, t, 0.2), ZeroVariance);
  // Non-dyadic constants leave ~1e-33 of roundoff after mean subtraction;
  // they must still count as constant.
  Eigen::VectorXd t2 = Eigen::VectorXd::Constant(15, 0.7);
  CHECK_THROWS_AS((void)task_loss(p, t2, 0.2), ZeroVariance);
}

TEST_CASE("task loss validates its inputs") {
  CHECK_THROWS_AS((void)task_loss(Eigen::VectorXd(), Eigen::VectorXd(), 0.2),
                  EmptyInput);
  CHECK_THROWS_AS(
      (void)task_loss(random_vec(5, 1), random_vec(6, 1), 0.2), ShapeError);
}

TEST_CASE("the scale term is linear in alpha") {
  const auto p = random_vec(30, 6);
  const auto t = random_vec(30, 7);
  const double l0 = task_loss(p, t, 0.0).value;
  const double l2 = task_loss(p, t, 0.2).value;
  const double l4 = task_loss(p, t, 0.4).value;
  CHECK(l4 - l0 == doctest::Approx(2.0 * (l2 - l0)).epsilon(1e-12));
}

TEST_CASE("task loss gradient matches central finite differences") {
  Eigen::VectorXd p = random_vec(20, 8);
  const auto t = random_vec(20, 9);
  const auto l = task_loss(p, t, 0.2);
  const double eps = 1e-6;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + eps;
    const double lp = task_loss(p, t, 0.2).value;
    p[i] = orig - eps;
    const double lm = task_loss(p, t, 0.2).value;
    p[i] = orig;
    const double fd = (lp - lm) / (2.0 * eps);
    CHECK(l.grad[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("the batch objective sums segments and averages auxiliary heads") {
  std::vector<HeadOutputs> outs(2);
  std::vector<std::map<std::string, Eigen::VectorXd>> tgts(2);
  for (int i = 0; i < 2; ++i) {
    for (const char* name : {"vp", "per", "aper", "f0"}) {
      outs[i][name] = random_vec(12, 100 + 10 * i + name[0]);
      tgts[i][name] = random_vec(12, 200 + 10 * i + name[0]);
    }
  }
  const auto bl = total_loss(outs, tgts, 0.2);
  double expect = 0.0;
  for (int i = 0; i < 2; ++i) {
    expect += task_loss(outs[i]["vp"], tgts[i]["vp"], 0.2).value;
    double aux = 0.0;
    for (const char* name : {"per", "aper", "f0"}) {
      aux += task_loss(outs[i][name], tgts[i][name], 0.2).value;
    }
    expect += aux / 3.0;
  }
  CHECK(bl.value == doctest::Approx(expect).epsilon(1e-12));
  CHECK(bl.skipped.empty());
  CHECK(bl.grads.size() == 2);
  CHECK(bl.grads[0].size() == 4);
  // Auxiliary gradients carry the 1/3 averaging factor.
  const auto solo = task_loss(outs[0]["per"], tgts[0]["per"], 0.2);
  CHECK((bl.grads[0].at("per") - solo.grad / 3.0).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("constant or missing targets are skipped and reported") {
  std::vector<HeadOutputs> outs(1);
  std::vector<std::map<std::string, Eigen::VectorXd>> tgts(1);
  outs[0]["vp"] = random_vec(10, 1);
  outs[0]["per"] = random_vec(10, 2);
  outs[0]["aper"] = random_vec(10, 3);
  tgts[0]["vp"] = random_vec(10, 4);
  tgts[0]["per"] = Eigen::VectorXd::Zero(10);  // constant: skipped
  // aper target missing entirely: skipped
  const auto bl = total_loss(outs, tgts, 0.2);
  const double expect = task_loss(outs[0]["vp"], tgts[0]["vp"], 0.2).value;
  CHECK(bl.value == doctest::Approx(expect).epsilon(1e-12));
  REQUIRE(bl.skipped.size() == 2);
  CHECK(bl.grads[0].count("per") == 0);
  CHECK(bl.grads[0].count("aper") == 0);

  // A constant vp target drops the vp term but keeps the auxiliaries.
  tgts[0]["vp"] = Eigen::VectorXd::Constant(10, 1.0);
  tgts[0]["per"] = random_vec(10, 5);
  tgts[0].erase("aper");
  const auto bl2 = total_loss(outs, tgts, 0.2);
  const double expect2 = task_loss(outs[0]["per"], tgts[0]["per"], 0.2).value;
  CHECK(bl2.value == doctest::Approx(expect2).epsilon(1e-12));

  CHECK_THROWS_AS((void)total_loss({}, {}, 0.2), EmptyBatch);
  CHECK_THROWS_AS((void)total_loss(outs, {}, 0.2), ShapeError);
}

TEST_CASE("trace targets expose one vector per trace kind") {
  TargetTraces tr;
  tr.vp = Series100({0.1, 0.2, 0.3});
  tr.per = Series100({0.4, 0.5, 0.6});
  tr.aper = Series100({0.6, 0.5, 0.4});
  tr.f0 = Series100({100.0, 110.0, 120.0});
  const auto m = trace_targets(tr);
  CHECK(m.size() == 4);
  CHECK(m.at("vp")[1] == 0.2);
  CHECK(m.at("f0")[2] == 120.0);
  TargetTraces tr2 = tr;
  tr2.egg_env = Series100({1.0, 2.0, 3.0});
  const auto m2 = trace_targets(tr2);
  CHECK(m2.size() == 5);
  CHECK(m2.at("egg_env")[0] == 1.0);
}

TEST_CASE("sampled segments stay on the grid and match the source content") {
  const int t_len = 500;  // 10 s of frames
  const auto stack = make_stack(2, t_len, 4, 11);
  std::map<std::string, Eigen::VectorXd> targets;
  targets["vp"] = random_vec(2 * t_len, 12);
  targets["per"] = random_vec(2 * t_len, 13);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto seg = sample_segment(stack, targets, rng);
    const auto len = static_cast<Eigen::Index>(seg.features.T());
    CHECK(len >= 100);
    CHECK(len <= 250);
    CHECK(seg.targets.at("vp").size() == 2 * len);
    CHECK(seg.targets.at("per").size() == 2 * len);
    // Locate the slice by matching the target content back to the source.
    const double probe = seg.targets.at("vp")[0];
    Eigen::Index start = -1;
    for (Eigen::Index s = 0; s + 2 * len <= 2 * t_len; s += 2) {
      if (targets["vp"][s] == probe &&
          (targets["vp"].segment(s, 2 * len) - seg.targets.at("vp")).norm() ==
              0.0) {
        start = s / 2;
        break;
      }
    }
    REQUIRE(start >= 0);
    CHECK((stack.layers[0].middleRows(start, len) - seg.features.layers[0])
              .cwiseAbs()
              .maxCoeff() == 0.0f);
  }

  // Same seed, same segments.
  std::mt19937_64 r1(3), r2(3);
  const auto a = sample_segment(stack, targets, r1);
  const auto b = sample_segment(stack, targets, r2);
  CHECK((a.targets.at("vp") - b.targets.at("vp")).norm() == 0.0);
}

TEST_CASE("short utterances are used whole and overlap is trimmed") {
  const auto stack = make_stack(2, 50, 4, 21);  // 1 s: below the 2 s floor
  std::map<std::string, Eigen::VectorXd> targets;
  targets["vp"] = random_vec(100, 22);
  std::mt19937_64 rng(1);
  const auto seg = sample_segment(stack, targets, rng);
  CHECK(seg.features.T() == 50);
  CHECK(seg.targets.at("vp").size() == 100);

  // Target stream one frame shorter than 2x features: trim to the overlap.
  std::map<std::string, Eigen::VectorXd> odd;
  odd["vp"] = random_vec(99, 23);
  const auto seg2 = full_segment(stack, odd);
  CHECK(seg2.features.T() == 49);
  CHECK(seg2.targets.at("vp").size() == 98);

  std::map<std::string, Eigen::VectorXd> empty_t;
  empty_t["vp"] = Eigen::VectorXd();
  CHECK_THROWS_AS((void)full_segment(stack, empty_t), EmptyInput);
}

TEST_CASE("the ADAM kernel reproduces the reference recurrence on a quadratic") {
  double x = 1.0, m = 0.0, v = 0.0;
  double xr = 1.0, mr = 0.0, vr = 0.0;
  for (long step = 1; step <= 200; ++step) {
    const double g = 2.0 * x;
    adam_update(&x, &g, &m, &v, 1, step, 0.1, 0.9, 0.999, 1e-8);
    const double gr = 2.0 * xr;
    mr = 0.9 * mr + 0.1 * gr;
    vr = 0.999 * vr + 0.001 * gr * gr;
    const double mh = mr / (1.0 - std::pow(0.9, static_cast<double>(step)));
    const double vh = vr / (1.0 - std::pow(0.999, static_cast<double>(step)));
    xr -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    // Equal up to floating-point contraction differences between translation
    // units (the compiler may fuse multiply-adds differently).
    CHECK(x == doctest::Approx(xr).epsilon(1e-10));
  }
  CHECK(std::abs(x) < 1e-3);
}

TEST_CASE("a non-finite gradient aborts the ADAM step untouched") {
  auto cfg = task_config();
  auto params = init_params(cfg);
  const auto before = params;
  auto grads = zeros_like(params);
  auto state = make_adam(params, 5e-4);
  grads.dense_b[0] = std::nan("");
  CHECK_THROWS_AS(adam_step(params, grads, state), NumericError);
  CHECK(state.step == 0);
  auto ra = trainable_tensors(params);
  auto rb = trainable_tensors(const_cast<ModelParameters&>(before));
  for (std::size_t i = 0; i < ra.size(); ++i) {
    for (std::ptrdiff_t k = 0; k < ra[i].size; ++k) {
      CHECK(ra[i].data[k] == rb[i].data[k]);
    }
  }
}

TEST_CASE("the scheduler halves the rate after the patience window") {
  PlateauScheduler s;
  double lr = 5e-4;
  lr = s.observe(1.0, lr);
  CHECK(lr == 5e-4);  // first observation sets the best
  lr = s.observe(1.0, lr);
  CHECK(lr == 5e-4);
  lr = s.observe(1.0, lr);
  CHECK(lr == 5e-4);
  lr = s.observe(1.0, lr);
  CHECK(lr == 2.5e-4);  // third stale epoch exceeds patience 2

  // An improvement resets the countdown.
  lr = s.observe(0.5, lr);
  CHECK(lr == 2.5e-4);
  lr = s.observe(0.5, lr);
  lr = s.observe(0.5, lr);
  CHECK(lr == 2.5e-4);

  // The rate never drops below the floor.
  PlateauScheduler s2;
  s2.min_lr = 1e-6;
  double lr2 = 4e-6;
  s2.observe(1.0, lr2);
  for (int i = 0; i < 40; ++i) lr2 = s2.observe(1.0, lr2);
  CHECK(lr2 == 1e-6);
}

TEST_CASE("zero epochs return the starting parameters unchanged") {
  auto cfg = task_config();
  const auto params = init_params(cfg);
  Dataset train = {make_task_utterance(cfg.fusion_layers, 60, cfg.feature_dim, 1)};
  Dataset dev = {make_task_utterance(cfg.fusion_layers, 60, cfg.feature_dim, 2)};
  TrainConfig tc;
  tc.max_epochs = 0;
  const auto res = train_model(params, train, dev, tc);
  CHECK(res.history.empty());
  CHECK(res.best_epoch == -1);
  auto ra = trainable_tensors(const_cast<ModelParameters&>(res.best_params));
  auto rb = trainable_tensors(const_cast<ModelParameters&>(params));
  for (std::size_t i = 0; i < ra.size(); ++i) {
    for (std::ptrdiff_t k = 0; k < ra[i].size; ++k) {
      CHECK(ra[i].data[k] == rb[i].data[k]);
    }
  }
}

TEST_CASE("a frozen model stops after exactly the patience window") {
  auto cfg = task_config();
  const auto params = init_params(cfg);
  Dataset train, dev;
  for (int i = 0; i < 4; ++i) {
    train.push_back(make_task_utterance(cfg.fusion_layers, 60, cfg.feature_dim,
                                        10 + i));
  }
  dev.push_back(make_task_utterance(cfg.fusion_layers, 60, cfg.feature_dim, 99));
  TrainConfig tc;
  tc.max_epochs = 50;
  tc.lr = 0.0;  // no updates: the dev loss can never improve
  tc.early_stop_patience = 5;
  const auto res = train_model(params, train, dev, tc);
  CHECK(res.history.size() == 5);
  CHECK(res.best_epoch == -1);
}

TEST_CASE("training halves the dev loss on a learnable synthetic task") {
  auto cfg = task_config();
  const auto params = init_params(cfg);
  Dataset train, dev;
  for (int i = 0; i < 16; ++i) {
    train.push_back(
        make_task_utterance(cfg.fusion_layers, 60, cfg.feature_dim, 100 + i));
  }
  for (int i = 0; i < 4; ++i) {
    dev.push_back(
        make_task_utterance(cfg.fusion_layers, 60, cfg.feature_dim, 900 + i));
  }
  TrainConfig tc;
  tc.max_epochs = 60;
  tc.batch_size = 8;
  tc.lr = 1e-3;
  tc.seed = 5;

  // Warm-start baseline: the dev loss of the untouched initialization.
  TrainConfig probe = tc;
  probe.max_epochs = 0;
  const double baseline =
      train_model(params, train, dev, probe).best_dev_loss;
  const auto res = train_model(params, train, dev, tc);
  REQUIRE(!res.history.empty());
  CHECK(res.best_dev_loss < 0.5 * baseline);
  CHECK(res.best_epoch >= 0);

  // Reruns are bit-identical in everything but wall time.
  const auto res2 = train_model(params, train, dev, tc);
  REQUIRE(res2.history.size() == res.history.size());
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    CHECK(res.history[i].epoch == res2.history[i].epoch);
    CHECK(res.history[i].train_loss == res2.history[i].train_loss);
    CHECK(res.history[i].dev_loss == res2.history[i].dev_loss);
    CHECK(res.history[i].lr == res2.history[i].lr);
  }
  auto ra = trainable_tensors(const_cast<ModelParameters&>(res.best_params));
  auto rb = trainable_tensors(const_cast<ModelParameters&>(res2.best_params));
  for (std::size_t i = 0; i < ra.size(); ++i) {
    for (std::ptrdiff_t k = 0; k < ra[i].size; ++k) {
      CHECK(ra[i].data[k] == rb[i].data[k]);
    }
  }
}

TEST_CASE("training history round-trips through its CSV file") {
  std::vector<EpochRecord> h = {{0, 1.25, 1.5, 5e-4, 0.125},
                                {1, 0.75, 0.9, 5e-4, 0.25}};
  const auto path = temp_path("nasinv_history_test.csv");
  write_history_csv(path, h);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "epoch,train_loss,dev_loss,lr,seconds");
  std::getline(f, line);
  CHECK(line == "0,1.25,1.5,0.00050000000000000001,0.125");
  std::getline(f, line);
  CHECK(line.substr(0, 2) == "1,");
  CHECK_THROWS_AS(write_history_csv("/nonexistent/dir/h.csv", h), IoError);
  std::remove(path.c_str());
}
