// SPDX-License-Identifier: Apache-2.0
#include "nasinv/si_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <set>

#include "nasinv/errors.hpp"

namespace nasinv {
namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

Eigen::VectorXd sigmoid(const Eigen::VectorXd& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

void validate_config(const ModelConfig& c) {
  if (c.hidden < 1 || c.dense < 1 || c.feature_dim < 1 || c.fusion_layers < 1) {
    throw InvalidArgument("model config: all dimensions must be positive");
  }
  if (!(c.dropout_p >= 0.0 && c.dropout_p < 1.0)) {
    throw InvalidArgument("model config: dropout_p must lie in [0, 1)");
  }
  if (c.heads.empty()) throw InvalidArgument("model config: no heads");
  std::set<std::string> seen;
  const auto& known = known_head_names();
  for (const auto& h : c.heads) {
    if (std::find(known.begin(), known.end(), h) == known.end()) {
      throw InvalidArgument("model config: unknown head '" + h + "'");
    }
    if (!seen.insert(h).second) {
      throw InvalidArgument("model config: duplicate head '" + h + "'");
    }
  }
  if (!seen.count("vp")) {
    throw InvalidArgument("model config: the vp head is mandatory");
  }
}

// Visit every tensor in canonical order. `f(name, data, size, rows, cols)`.
// Buffers (running stats) come last and only when requested.
template <typename Params, typename F>
void visit_tensors(Params& p, bool include_buffers, F&& f) {
  f("layer_weights", p.layer_weights.data(),
    static_cast<std::ptrdiff_t>(p.layer_weights.size()),
    static_cast<std::ptrdiff_t>(p.layer_weights.size()),
    static_cast<std::ptrdiff_t>(1));
  auto cell = [&](const char* prefix, auto& c) {
    auto m = [&](const char* leaf, auto& t) {
      f(std::string(prefix) + "." + leaf, t.data(),
        static_cast<std::ptrdiff_t>(t.size()),
        static_cast<std::ptrdiff_t>(t.rows()),
        static_cast<std::ptrdiff_t>(t.cols()));
    };
    m("wz", c.wz);
    m("wr", c.wr);
    m("wn", c.wn);
    m("uz", c.uz);
    m("ur", c.ur);
    m("un", c.un);
    m("bz", c.bz);
    m("br", c.br);
    m("bn", c.bn);
  };
  cell("gru1_fwd", p.gru1_fwd);
  cell("gru1_bwd", p.gru1_bwd);
  cell("gru2_fwd", p.gru2_fwd);
  cell("gru2_bwd", p.gru2_bwd);
  auto m = [&](const char* name, auto& t) {
    f(name, t.data(), static_cast<std::ptrdiff_t>(t.size()),
      static_cast<std::ptrdiff_t>(t.rows()), static_cast<std::ptrdiff_t>(t.cols()));
  };
  m("dense.w", p.dense_w);
  m("dense.b", p.dense_b);
  m("bn.gamma", p.bn_gamma);
  m("bn.beta", p.bn_beta);
  for (auto& [name, head] : p.heads) {
    f("head." + name + ".w", head.w.data(),
      static_cast<std::ptrdiff_t>(head.w.size()),
      static_cast<std::ptrdiff_t>(head.w.size()), static_cast<std::ptrdiff_t>(1));
    f("head." + name + ".b", &head.b, static_cast<std::ptrdiff_t>(1),
      static_cast<std::ptrdiff_t>(1), static_cast<std::ptrdiff_t>(1));
  }
  if (include_buffers) {
    m("bn.running_mean", p.bn_running_mean);
    m("bn.running_var", p.bn_running_var);
  }
}

}  // namespace

const std::vector<std::string>& known_head_names() {
  static const std::vector<std::string> names = {"vp", "egg_env", "per", "aper",
                                                 "f0"};
  return names;
}

std::vector<TensorRef> trainable_tensors(ModelParameters& p) {
  std::vector<TensorRef> out;
  visit_tensors(p, false,
                [&](const std::string& name, double* d, std::ptrdiff_t n,
                    std::ptrdiff_t, std::ptrdiff_t) { out.push_back({name, d, n}); });
  return out;
}

std::vector<ConstTensorRef> trainable_tensors(const ModelParameters& p) {
  std::vector<ConstTensorRef> out;
  visit_tensors(p, false,
                [&](const std::string& name, const double* d, std::ptrdiff_t n,
                    std::ptrdiff_t, std::ptrdiff_t) { out.push_back({name, d, n}); });
  return out;
}

ModelParameters init_params(const ModelConfig& config) {
  validate_config(config);
  ModelParameters p;
  p.config = config;
  const int h = config.hidden, d = config.dense, in = config.feature_dim;

  std::mt19937_64 rng(config.seed);
  auto uniform_mat = [&](Eigen::Index rows, Eigen::Index cols, double fan_in) {
    const double k = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-k, k);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    }
    return m;
  };
  auto make_cell = [&](int input_dim) {
    GruCell c;
    c.wz = uniform_mat(h, input_dim, input_dim);
    c.wr = uniform_mat(h, input_dim, input_dim);
    c.wn = uniform_mat(h, input_dim, input_dim);
    c.uz = uniform_mat(h, h, h);
    c.ur = uniform_mat(h, h, h);
    c.un = uniform_mat(h, h, h);
    c.bz = Eigen::VectorXd::Zero(h);
    c.br = Eigen::VectorXd::Zero(h);
    c.bn = Eigen::VectorXd::Zero(h);
    return c;
  };

  p.layer_weights.assign(static_cast<std::size_t>(config.fusion_layers),
                         1.0 / config.fusion_layers);
  p.gru1_fwd = make_cell(in);
  p.gru1_bwd = make_cell(in);
  p.gru2_fwd = make_cell(2 * h);
  p.gru2_bwd = make_cell(2 * h);
  p.dense_w = uniform_mat(d, 2 * h, 2.0 * h);
  p.dense_b = Eigen::VectorXd::Zero(d);
  p.bn_gamma = Eigen::VectorXd::Ones(d);
  p.bn_beta = Eigen::VectorXd::Zero(d);
  p.bn_running_mean = Eigen::VectorXd::Zero(d);
  p.bn_running_var = Eigen::VectorXd::Ones(d);
  for (const auto& name : config.heads) {
    Head head;
    head.w = uniform_mat(d, 1, d);
    head.b = 0.0;
    p.heads.emplace(name, std::move(head));
  }
  return p;
}

ModelParameters zeros_like(const ModelParameters& p) {
  ModelParameters z = p;
  visit_tensors(z, true,
                [](const std::string&, double* d, std::ptrdiff_t n,
                   std::ptrdiff_t, std::ptrdiff_t) { std::fill(d, d + n, 0.0); });
  return z;
}

namespace {

void gru_dir_forward(const GruCell& c, const Eigen::MatrixXd& input,
                     bool time_forward, GruDirTape& tape) {
  const Eigen::Index t_len = input.rows();
  const Eigen::Index h_dim = c.bz.size();
  tape.h.resize(t_len, h_dim);
  tape.z.resize(t_len, h_dim);
  tape.r.resize(t_len, h_dim);
  tape.n.resize(t_len, h_dim);
  Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(h_dim);
  for (Eigen::Index s = 0; s < t_len; ++s) {
    const Eigen::Index t = time_forward ? s : t_len - 1 - s;
    const Eigen::VectorXd x = input.row(t).transpose();
    const Eigen::VectorXd z = sigmoid(c.wz * x + c.uz * h_prev + c.bz);
    const Eigen::VectorXd r = sigmoid(c.wr * x + c.ur * h_prev + c.br);
    const Eigen::VectorXd n =
        (c.wn * x + c.un * r.cwiseProduct(h_prev) + c.bn).array().tanh();
    const Eigen::VectorXd h =
        (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(h_prev);
    tape.z.row(t) = z.transpose();
    tape.r.row(t) = r.transpose();
    tape.n.row(t) = n.transpose();
    tape.h.row(t) = h.transpose();
    h_prev = h;
  }
}

// Backpropagation through one GRU direction. `dout` is the T x H gradient on
// the direction's hidden states; `dinput` accumulates the T x in gradient.
void gru_dir_backward(const GruCell& c, const Eigen::MatrixXd& input,
                      const GruDirTape& tape, const Eigen::MatrixXd& dout,
                      bool time_forward, GruCell& dc, Eigen::MatrixXd& dinput) {
  const Eigen::Index t_len = input.rows();
  const Eigen::Index h_dim = c.bz.size();
  Eigen::VectorXd dh_carry = Eigen::VectorXd::Zero(h_dim);
  for (Eigen::Index s = t_len - 1; s >= 0; --s) {
    const Eigen::Index t = time_forward ? s : t_len - 1 - s;
    Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(h_dim);
    if (s > 0) h_prev = tape.h.row(time_forward ? s - 1 : t_len - s).transpose();
    const Eigen::VectorXd x = input.row(t).transpose();
    const Eigen::VectorXd z = tape.z.row(t).transpose();
    const Eigen::VectorXd r = tape.r.row(t).transpose();
    const Eigen::VectorXd n = tape.n.row(t).transpose();

    const Eigen::VectorXd dh = dout.row(t).transpose() + dh_carry;
    const Eigen::VectorXd dn = dh.cwiseProduct((1.0 - z.array()).matrix());
    const Eigen::VectorXd dz = dh.cwiseProduct(h_prev - n);
    Eigen::VectorXd dh_prev = dh.cwiseProduct(z);

    const Eigen::VectorXd da_n =
        dn.cwiseProduct((1.0 - n.array().square()).matrix());
    dc.wn += da_n * x.transpose();
    dc.un += da_n * r.cwiseProduct(h_prev).transpose();
    dc.bn += da_n;
    const Eigen::VectorXd drh = c.un.transpose() * da_n;
    const Eigen::VectorXd dr = drh.cwiseProduct(h_prev);
    dh_prev += drh.cwiseProduct(r);
    Eigen::VectorXd dx = c.wn.transpose() * da_n;

    const Eigen::VectorXd da_z =
        dz.cwiseProduct(z.cwiseProduct((1.0 - z.array()).matrix()));
    dc.wz += da_z * x.transpose();
    dc.uz += da_z * h_prev.transpose();
    dc.bz += da_z;
    dx += c.wz.transpose() * da_z;
    dh_prev += c.uz.transpose() * da_z;

    const Eigen::VectorXd da_r =
        dr.cwiseProduct(r.cwiseProduct((1.0 - r.array()).matrix()));
    dc.wr += da_r * x.transpose();
    dc.ur += da_r * h_prev.transpose();
    dc.br += da_r;
    dx += c.wr.transpose() * da_r;
    dh_prev += c.ur.transpose() * da_r;

    dinput.row(t) += dx.transpose();
    dh_carry = dh_prev;
  }
}

// Length-doubling linear interpolation over rows, final row repeated:
// y[2t] = x[t], y[2t+1] = (x[t]+x[t+1])/2 (or x[T-1] at the end).
Eigen::MatrixXd upsample_rows(const Eigen::MatrixXd& x) {
  const Eigen::Index t_len = x.rows();
  Eigen::MatrixXd y(2 * t_len, x.cols());
  for (Eigen::Index t = 0; t < t_len; ++t) {
    y.row(2 * t) = x.row(t);
    if (t + 1 < t_len) {
      y.row(2 * t + 1) = 0.5 * (x.row(t) + x.row(t + 1));
    } else {
      y.row(2 * t + 1) = x.row(t);
    }
  }
  return y;
}

Eigen::MatrixXd upsample_rows_backward(const Eigen::MatrixXd& dy,
                                       Eigen::Index t_len) {
  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(t_len, dy.cols());
  for (Eigen::Index t = 0; t < t_len; ++t) {
    dx.row(t) += dy.row(2 * t);
    if (t + 1 < t_len) {
      dx.row(t) += 0.5 * dy.row(2 * t + 1);
      dx.row(t + 1) += 0.5 * dy.row(2 * t + 1);
    } else {
      dx.row(t) += dy.row(2 * t + 1);
    }
  }
  return dx;
}

Eigen::MatrixXd draw_mask(Eigen::Index rows, Eigen::Index cols, double p,
                          std::mt19937_64& rng) {
  Eigen::MatrixXd m(rows, cols);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = u(rng) >= p ? keep_scale : 0.0;
    }
  }
  return m;
}

}  // namespace

Eigen::MatrixXd run_bigru(const GruCell& fwd, const GruCell& bwd,
                          const Eigen::MatrixXd& input) {
  GruDirTape a, b;
  gru_dir_forward(fwd, input, true, a);
  gru_dir_forward(bwd, input, false, b);
  Eigen::MatrixXd out(input.rows(), a.h.cols() + b.h.cols());
  out << a.h, b.h;
  return out;
}

BatchTape forward_batch(ModelParameters& params,
                        const std::vector<const FeatureStack*>& stacks,
                        Mode mode, std::mt19937_64& rng) {
  if (stacks.empty()) throw EmptyBatch("forward_batch: empty batch");
  const auto& cfg = params.config;
  const double p = cfg.dropout_p;
  const bool do_drop = mode == Mode::kTrain && p > 0.0;
  const Eigen::Index h2 = 2 * cfg.hidden;

  BatchTape tape;
  tape.mode = mode;
  tape.items.resize(stacks.size());
  std::vector<Eigen::MatrixXd> ups(stacks.size());

  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const FeatureStack& stack = *stacks[i];
    if (stack.T() == 0) throw EmptyInput("forward_batch: stack with T == 0");
    if (static_cast<int>(stack.D()) != cfg.feature_dim ||
        static_cast<int>(stack.L()) != cfg.fusion_layers) {
      throw ShapeError("forward_batch: stack shape L=" +
                       std::to_string(stack.L()) + ",D=" +
                       std::to_string(stack.D()) + " does not match the model");
    }
    ItemTape& it = tape.items[i];
    it.stack = &stack;
    it.fused = layer_weighted_sum(stack, params.layer_weights);
    if (!it.fused.allFinite()) {
      throw NumericError("forward_batch: non-finite values in fused features");
    }
    const Eigen::Index t_len = it.fused.rows();

    gru_dir_forward(params.gru1_fwd, it.fused, true, it.g1f);
    gru_dir_forward(params.gru1_bwd, it.fused, false, it.g1b);
    Eigen::MatrixXd cat1(t_len, h2);
    cat1 << it.g1f.h, it.g1b.h;
    it.drop1_mask = do_drop ? draw_mask(t_len, h2, p, rng)
                            : Eigen::MatrixXd::Ones(t_len, h2);
    it.gru1_drop = cat1.cwiseProduct(it.drop1_mask);

    gru_dir_forward(params.gru2_fwd, it.gru1_drop, true, it.g2f);
    gru_dir_forward(params.gru2_bwd, it.gru1_drop, false, it.g2b);
    Eigen::MatrixXd cat2(t_len, h2);
    cat2 << it.g2f.h, it.g2b.h;
    it.drop2_mask = do_drop ? draw_mask(t_len, h2, p, rng)
                            : Eigen::MatrixXd::Ones(t_len, h2);
    it.gru2_drop = cat2.cwiseProduct(it.drop2_mask);

    it.dense_tanh = ((it.gru2_drop * params.dense_w.transpose()).rowwise() +
                     params.dense_b.transpose())
                        .array()
                        .tanh()
                        .matrix();
    ups[i] = upsample_rows(it.dense_tanh);
  }

  // Batch normalization statistics over every item's upsampled frames.
  const Eigen::Index d_len = params.bn_gamma.size();
  if (mode == Mode::kTrain) {
    double n_rows = 0.0;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d_len);
    for (const auto& up : ups) {
      mean += up.colwise().sum().transpose();
      n_rows += static_cast<double>(up.rows());
    }
    mean /= n_rows;
    Eigen::VectorXd var = Eigen::VectorXd::Zero(d_len);
    for (const auto& up : ups) {
      var += (up.rowwise() - mean.transpose()).array().square().colwise().sum()
                 .matrix()
                 .transpose();
    }
    var /= n_rows;  // population variance
    params.bn_running_mean =
        (1.0 - kBnMomentum) * params.bn_running_mean + kBnMomentum * mean;
    params.bn_running_var =
        (1.0 - kBnMomentum) * params.bn_running_var + kBnMomentum * var;
    tape.bn_mean = mean;
    tape.bn_sigma = (var.array() + kBnEps).sqrt();
  } else {
    tape.bn_mean = params.bn_running_mean;
    tape.bn_sigma = (params.bn_running_var.array() + kBnEps).sqrt();
  }

  const Eigen::VectorXd inv_sigma = tape.bn_sigma.cwiseInverse();
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    ItemTape& it = tape.items[i];
    const Eigen::Index rows = ups[i].rows();
    it.bn_xhat =
        (ups[i].rowwise() - tape.bn_mean.transpose()) * inv_sigma.asDiagonal();
    Eigen::MatrixXd bn_out =
        (it.bn_xhat * params.bn_gamma.asDiagonal()).rowwise() +
        params.bn_beta.transpose();
    it.drop3_mask = do_drop ? draw_mask(rows, d_len, p, rng)
                            : Eigen::MatrixXd::Ones(rows, d_len);
    it.bn_drop = bn_out.cwiseProduct(it.drop3_mask);
    for (const auto& [name, head] : params.heads) {
      it.head_out[name] =
          (it.bn_drop * head.w).col(0) + Eigen::VectorXd::Constant(rows, head.b);
    }
  }
  return tape;
}

HeadOutputs forward(ModelParameters& params, const FeatureStack& stack,
                    Mode mode, std::mt19937_64& rng) {
  const auto tape = forward_batch(params, {&stack}, mode, rng);
  return tape.items[0].head_out;
}

ModelParameters backward_batch(const ModelParameters& params,
                               const BatchTape& tape,
                               const std::vector<HeadOutputs>& upstream) {
  if (tape.items.empty()) throw StateError("backward_batch: no recorded tape");
  if (tape.mode != Mode::kTrain) {
    throw StateError("backward_batch: tape was recorded in eval mode");
  }
  if (upstream.size() != tape.items.size()) {
    throw ShapeError("backward_batch: upstream batch size mismatch");
  }

  ModelParameters grads = zeros_like(params);
  const Eigen::Index d_len = params.bn_gamma.size();

  // Heads and the batchnorm affine, collecting dxhat for the joint stats pass.
  std::vector<Eigen::MatrixXd> dxhats(tape.items.size());
  double n_rows = 0.0;
  for (std::size_t i = 0; i < tape.items.size(); ++i) {
    const ItemTape& it = tape.items[i];
    const Eigen::Index rows = it.bn_drop.rows();
    n_rows += static_cast<double>(rows);
    Eigen::MatrixXd d_bndrop = Eigen::MatrixXd::Zero(rows, d_len);
    for (const auto& [name, dout] : upstream[i]) {
      const auto head_it = params.heads.find(name);
      if (head_it == params.heads.end()) {
        throw ShapeError("backward_batch: upstream gradient for unknown head '" +
                         name + "'");
      }
      if (dout.size() != rows) {
        throw ShapeError("backward_batch: upstream length mismatch on head '" +
                         name + "'");
      }
      grads.heads.at(name).w += it.bn_drop.transpose() * dout;
      grads.heads.at(name).b += dout.sum();
      d_bndrop += dout * head_it->second.w.transpose();
    }
    const Eigen::MatrixXd dy_bn = d_bndrop.cwiseProduct(it.drop3_mask);
    grads.bn_gamma +=
        dy_bn.cwiseProduct(it.bn_xhat).colwise().sum().transpose();
    grads.bn_beta += dy_bn.colwise().sum().transpose();
    dxhats[i] = dy_bn * params.bn_gamma.asDiagonal();
  }

  // Train-mode batchnorm couples every row through the batch statistics:
  // dx = (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat)) / sigma.
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d_len);
  Eigen::VectorXd s2 = Eigen::VectorXd::Zero(d_len);
  for (std::size_t i = 0; i < tape.items.size(); ++i) {
    s1 += dxhats[i].colwise().sum().transpose();
    s2 += dxhats[i].cwiseProduct(tape.items[i].bn_xhat).colwise().sum().transpose();
  }
  s1 /= n_rows;
  s2 /= n_rows;

  const Eigen::VectorXd inv_sigma = tape.bn_sigma.cwiseInverse();
  for (std::size_t i = 0; i < tape.items.size(); ++i) {
    const ItemTape& it = tape.items[i];
    const Eigen::Index t_len = it.fused.rows();
    const Eigen::MatrixXd dup =
        ((dxhats[i].rowwise() - s1.transpose()) -
         it.bn_xhat * s2.asDiagonal()) *
        inv_sigma.asDiagonal();

    const Eigen::MatrixXd d_tanh = upsample_rows_backward(dup, t_len);
    const Eigen::MatrixXd d_pre =
        d_tanh.cwiseProduct((1.0 - it.dense_tanh.array().square()).matrix());
    grads.dense_w += d_pre.transpose() * it.gru2_drop;
    grads.dense_b += d_pre.colwise().sum().transpose();
    const Eigen::MatrixXd d_gru2drop = d_pre * params.dense_w;

    const Eigen::MatrixXd dcat2 = d_gru2drop.cwiseProduct(it.drop2_mask);
    const Eigen::Index h_dim = params.config.hidden;
    Eigen::MatrixXd d_gru1drop = Eigen::MatrixXd::Zero(t_len, 2 * h_dim);
    gru_dir_backward(params.gru2_fwd, it.gru1_drop, it.g2f,
                     dcat2.leftCols(h_dim), true, grads.gru2_fwd, d_gru1drop);
    gru_dir_backward(params.gru2_bwd, it.gru1_drop, it.g2b,
                     dcat2.rightCols(h_dim), false, grads.gru2_bwd, d_gru1drop);

    const Eigen::MatrixXd dcat1 = d_gru1drop.cwiseProduct(it.drop1_mask);
    Eigen::MatrixXd d_fused =
        Eigen::MatrixXd::Zero(t_len, params.config.feature_dim);
    gru_dir_backward(params.gru1_fwd, it.fused, it.g1f, dcat1.leftCols(h_dim),
                     true, grads.gru1_fwd, d_fused);
    gru_dir_backward(params.gru1_bwd, it.fused, it.g1b, dcat1.rightCols(h_dim),
                     false, grads.gru1_bwd, d_fused);

    const auto lw_grad = layer_weight_grad(*it.stack, d_fused);
    for (std::size_t l = 0; l < lw_grad.size(); ++l) {
      grads.layer_weights[l] += lw_grad[l];
    }
  }
  return grads;
}

double gradient_check(const ModelParameters& params,
                      const std::vector<const FeatureStack*>& stacks,
                      const BatchLoss& loss, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw InvalidArgument("gradient_check: epsilon must be positive");
  }
  if (params.config.dropout_p != 0.0) {
    throw InvalidArgument(
        "gradient_check: dropout must be disabled (masks would change between "
        "probe evaluations)");
  }
  ModelParameters work = params;

  auto run_loss = [&]() {
    std::mt19937_64 rng(0);
    const auto tape = forward_batch(work, stacks, Mode::kTrain, rng);
    std::vector<HeadOutputs> outs;
    outs.reserve(tape.items.size());
    for (const auto& it : tape.items) outs.push_back(it.head_out);
    return std::make_pair(tape, outs);
  };

  auto [tape, outs] = run_loss();
  const auto upstream = loss.grad(outs);
  ModelParameters grads = backward_batch(work, tape, upstream);

  auto probe = [&]() {
    std::mt19937_64 rng(0);
    const auto t2 = forward_batch(work, stacks, Mode::kTrain, rng);
    std::vector<HeadOutputs> o2;
    o2.reserve(t2.items.size());
    for (const auto& it : t2.items) o2.push_back(it.head_out);
    return loss.value(o2);
  };

  double worst = 0.0;
  auto work_refs = trainable_tensors(work);
  auto grad_refs = trainable_tensors(grads);
  for (std::size_t t = 0; t < work_refs.size(); ++t) {
    for (std::ptrdiff_t k = 0; k < work_refs[t].size; ++k) {
      const double orig = work_refs[t].data[k];
      work_refs[t].data[k] = orig + epsilon;
      const double lp = probe();
      work_refs[t].data[k] = orig - epsilon;
      const double lm = probe();
      work_refs[t].data[k] = orig;
      const double fd = (lp - lm) / (2.0 * epsilon);
      const double g = grad_refs[t].data[k];
      const double denom = std::max({std::abs(g), std::abs(fd), 1e-3});
      worst = std::max(worst, std::abs(g - fd) / denom);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------
namespace {

nlohmann::json stats_to_json(const TraceStats& s) {
  nlohmann::json j;
  auto put = [&](const char* k, const NormStats& n) {
    j[k] = {n.min, n.max};
  };
  put("vp", s.vp);
  put("per", s.per);
  put("aper", s.aper);
  put("f0", s.f0);
  if (s.egg_env) put("egg_env", *s.egg_env);
  return j;
}

TraceStats stats_from_json(const nlohmann::json& j) {
  TraceStats s;
  auto get = [&](const char* k) {
    return NormStats{j.at(k).at(0).get<double>(), j.at(k).at(1).get<double>()};
  };
  s.vp = get("vp");
  s.per = get("per");
  s.aper = get("aper");
  s.f0 = get("f0");
  if (j.contains("egg_env")) s.egg_env = get("egg_env");
  return s;
}

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("load_checkpoint: truncated file " + path);
  }
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParameters& params,
                     const TraceStats* norm_stats,
                     const std::uint64_t* frontend_seed) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);

  nlohmann::json j;
  j["hidden"] = params.config.hidden;
  j["dense"] = params.config.dense;
  j["feature_dim"] = params.config.feature_dim;
  j["fusion_layers"] = params.config.fusion_layers;
  j["dropout_p"] = params.config.dropout_p;
  j["heads"] = params.config.heads;
  j["seed"] = std::to_string(params.config.seed);
  if (frontend_seed) j["frontend_seed"] = std::to_string(*frontend_seed);
  if (norm_stats) j["norm"] = stats_to_json(*norm_stats);
  const std::string json_text = j.dump();

  f.write("NSCK1", 5);
  put_u32(f, 1);  // format version
  put_u32(f, static_cast<std::uint32_t>(json_text.size()));
  f.write(json_text.data(), static_cast<std::streamsize>(json_text.size()));

  std::uint32_t count = 0;
  visit_tensors(const_cast<ModelParameters&>(params), true,
                [&](const std::string&, double*, std::ptrdiff_t, std::ptrdiff_t,
                    std::ptrdiff_t) { ++count; });
  put_u32(f, count);
  visit_tensors(
      const_cast<ModelParameters&>(params), true,
      [&](const std::string& name, double* data, std::ptrdiff_t n,
          std::ptrdiff_t rows, std::ptrdiff_t cols) {
        put_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(f, static_cast<std::uint32_t>(rows));
        put_u32(f, static_cast<std::uint32_t>(cols));
        for (std::ptrdiff_t k = 0; k < n; ++k) {
          const float v = static_cast<float>(data[k]);
          f.write(reinterpret_cast<const char*>(&v), 4);
        }
      });
  if (!f) throw IoError("save_checkpoint: short write to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  char magic[5];
  if (!f.read(magic, 5) || std::string(magic, 5) != "NSCK1") {
    throw FormatError("load_checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = get_u32(f, path);
  if (version != 1) {
    throw FormatError("load_checkpoint: unsupported version " +
                      std::to_string(version));
  }
  const std::uint32_t json_len = get_u32(f, path);
  std::string json_text(json_len, '\0');
  if (!f.read(json_text.data(), json_len)) {
    throw FormatError("load_checkpoint: truncated config block in " + path);
  }

  LoadedCheckpoint out;
  try {
    const auto j = nlohmann::json::parse(json_text);
    ModelConfig cfg;
    cfg.hidden = j.at("hidden").get<int>();
    cfg.dense = j.at("dense").get<int>();
    cfg.feature_dim = j.at("feature_dim").get<int>();
    cfg.fusion_layers = j.at("fusion_layers").get<int>();
    cfg.dropout_p = j.at("dropout_p").get<double>();
    cfg.heads = j.at("heads").get<std::vector<std::string>>();
    cfg.seed = std::stoull(j.at("seed").get<std::string>());
    out.params = init_params(cfg);
    if (j.contains("frontend_seed")) {
      out.frontend_seed = std::stoull(j.at("frontend_seed").get<std::string>());
    }
    if (j.contains("norm")) out.norm_stats = stats_from_json(j["norm"]);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_checkpoint: bad config block: ") +
                      e.what());
  }

  const std::uint32_t count = get_u32(f, path);
  std::map<std::string, std::pair<std::vector<float>, std::pair<std::uint32_t, std::uint32_t>>>
      stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(f, path);
    std::string name(name_len, '\0');
    if (!f.read(name.data(), name_len)) {
      throw FormatError("load_checkpoint: truncated tensor name in " + path);
    }
    const std::uint32_t rows = get_u32(f, path);
    const std::uint32_t cols = get_u32(f, path);
    std::vector<float> data(static_cast<std::size_t>(rows) * cols);
    if (!f.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * 4))) {
      throw FormatError("load_checkpoint: truncated tensor data in " + path);
    }
    stored.emplace(std::move(name), std::make_pair(std::move(data),
                                                   std::make_pair(rows, cols)));
  }

  visit_tensors(out.params, true,
                [&](const std::string& name, double* data, std::ptrdiff_t n,
                    std::ptrdiff_t rows, std::ptrdiff_t cols) {
                  const auto it = stored.find(name);
                  if (it == stored.end()) {
                    throw FormatError("load_checkpoint: missing tensor '" +
                                      name + "' in " + path);
                  }
                  const auto& [data_f, shape] = it->second;
                  if (shape.first != static_cast<std::uint32_t>(rows) ||
                      shape.second != static_cast<std::uint32_t>(cols)) {
                    throw ShapeError("load_checkpoint: tensor '" + name +
                                     "' has shape " +
                                     std::to_string(shape.first) + "x" +
                                     std::to_string(shape.second) +
                                     ", expected " + std::to_string(rows) +
                                     "x" + std::to_string(cols));
                  }
                  for (std::ptrdiff_t k = 0; k < n; ++k) {
                    data[k] = static_cast<double>(data_f[static_cast<std::size_t>(k)]);
                  }
                  stored.erase(it);
                });
  if (!stored.empty()) {
    throw FormatError("load_checkpoint: unexpected tensor '" +
                      stored.begin()->first + "' in " + path);
  }
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::vector<std::string>& expected_heads) {
  LoadedCheckpoint ck = load_checkpoint(path);
  const std::set<std::string> have(ck.params.config.heads.begin(),
                                   ck.params.config.heads.end());
  const std::set<std::string> want(expected_heads.begin(), expected_heads.end());
  if (have == want) return ck;

  std::set<std::string> extra, missing;
  std::set_difference(have.begin(), have.end(), want.begin(), want.end(),
                      std::inserter(extra, extra.end()));
  std::set_difference(want.begin(), want.end(), have.begin(), have.end(),
                      std::inserter(missing, missing.end()));
  if (missing.empty() && extra == std::set<std::string>{"egg_env"}) {
    // The documented fine-tuning path: drop the stored EGG head.
    ck.params.heads.erase("egg_env");
    auto& names = ck.params.config.heads;
    names.erase(std::remove(names.begin(), names.end(), "egg_env"),
                names.end());
    ck.dropped_egg_head = true;
    return ck;
  }
  throw ShapeError(
      "load_checkpoint: stored head set does not match the requested heads "
      "(only dropping a stored egg_env head is permitted)");
}

}  // namespace nasinv
