// SPDX-License-Identifier: Apache-2.0
#include "nasinv/feature_frontend.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "nasinv/errors.hpp"
#include "nasinv/kernels.hpp"

namespace nasinv {
namespace {

constexpr double kRate = 16000.0;
constexpr int kFrameLen = 400;  // 25 ms
constexpr int kHop = 320;       // 20 ms -> 50 fps
constexpr int kFftLen = 512;
constexpr double kLogFloor = 1e-10;

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular mel filters as a (n_mels x n_bins) weight matrix.
Eigen::MatrixXd mel_filterbank(int n_mels, int n_bins) {
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(kRate / 2.0);
  std::vector<double> centers_hz(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    centers_hz[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, n_bins);
  const double bin_hz = kRate / kFftLen;
  for (int m = 0; m < n_mels; ++m) {
    const double lo = centers_hz[static_cast<std::size_t>(m)];
    const double mid = centers_hz[static_cast<std::size_t>(m) + 1];
    const double hi = centers_hz[static_cast<std::size_t>(m) + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double f = b * bin_hz;
      if (f > lo && f < mid) {
        fb(m, b) = (f - lo) / (mid - lo);
      } else if (f >= mid && f < hi) {
        fb(m, b) = (hi - f) / (hi - mid);
      }
    }
  }
  return fb;
}

// Log-mel features, standardized per dimension over the utterance.
Eigen::MatrixXd base_features(const Signal& audio, int n_mels) {
  const auto n_frames = static_cast<std::size_t>(
      std::floor(static_cast<double>(audio.size()) / kRate *
                 FeatureStack::kFrameRateHz));
  std::vector<double> window(kFrameLen);
  for (int i = 0; i < kFrameLen; ++i) {
    window[static_cast<std::size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * M_PI * i / kFrameLen));
  }
  const auto power = kernels::power_frames(audio.samples, n_frames, kFrameLen,
                                           kHop, kFftLen, window);
  const int n_bins = kFftLen / 2 + 1;
  const Eigen::MatrixXd fb = mel_filterbank(n_mels, n_bins);

  Eigen::MatrixXd feats(static_cast<Eigen::Index>(n_frames), n_mels);
  for (std::size_t t = 0; t < n_frames; ++t) {
    Eigen::Map<const Eigen::VectorXd> p(power[t].data(), n_bins);
    feats.row(static_cast<Eigen::Index>(t)) =
        (fb * p).array().max(kLogFloor).log().transpose();
  }

  // Per-utterance standardization; the epsilon keeps digital silence finite.
  for (Eigen::Index d = 0; d < feats.cols(); ++d) {
    const double mean = feats.col(d).mean();
    const double var =
        (feats.col(d).array() - mean).square().sum() / feats.rows();
    feats.col(d) = (feats.col(d).array() - mean) / std::max(std::sqrt(var), 1e-8);
  }
  return feats;
}

// Centered moving average over time with reflect padding, half-width h.
Eigen::MatrixXd smooth_time(const Eigen::MatrixXd& x, int h) {
  if (h == 0) return x;
  const auto t_len = static_cast<std::ptrdiff_t>(x.rows());
  Eigen::MatrixXd y(x.rows(), x.cols());
  for (std::ptrdiff_t t = 0; t < t_len; ++t) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(x.cols());
    for (std::ptrdiff_t k = -h; k <= h; ++k) {
      acc += x.row(static_cast<Eigen::Index>(reflect_index(t + k, t_len)));
    }
    y.row(static_cast<Eigen::Index>(t)) = acc / (2.0 * h + 1.0);
  }
  return y;
}

// Random orthogonal D x D matrix: QR of a seeded Gaussian draw, columns
// sign-fixed by the R diagonal so the factorization is unambiguous.
Eigen::MatrixXd random_orthogonal(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd g(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) g(i, j) = gauss(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

}  // namespace

FeatureStack extract_feature_stack(const Signal& audio,
                                   const FrontendConfig& config) {
  if (audio.sample_rate_hz != kRate) {
    throw RateMismatch("extract_feature_stack: expected 16 kHz input, got " +
                       std::to_string(audio.sample_rate_hz) + " Hz");
  }
  if (audio.samples.empty()) {
    throw EmptyInput("extract_feature_stack: empty audio");
  }
  if (config.n_layers < 1 || config.n_mels < 1) {
    throw InvalidArgument("extract_feature_stack: L and D must be positive");
  }

  const Eigen::MatrixXd base = base_features(audio, config.n_mels);
  std::mt19937_64 rng(config.seed);

  FeatureStack stack;
  stack.layers.reserve(static_cast<std::size_t>(config.n_layers));
  for (int l = 0; l < config.n_layers; ++l) {
    const Eigen::MatrixXd mix = random_orthogonal(config.n_mels, rng);
    const Eigen::MatrixXd layer = smooth_time(base, l) * mix;
    stack.layers.push_back(layer.cast<float>());
  }
  return stack;
}

void export_feature_stack(const std::string& path, const FeatureStack& stack) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("export_feature_stack: cannot open " + path);
  f.write("NSTK1", 5);
  const auto put_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    f.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(static_cast<std::uint32_t>(stack.L()));
  put_u32(static_cast<std::uint32_t>(stack.T()));
  put_u32(static_cast<std::uint32_t>(stack.D()));
  for (const auto& layer : stack.layers) {
    for (Eigen::Index t = 0; t < layer.rows(); ++t) {
      for (Eigen::Index d = 0; d < layer.cols(); ++d) {
        const float v = layer(t, d);
        f.write(reinterpret_cast<const char*>(&v), 4);
      }
    }
  }
  if (!f) throw IoError("export_feature_stack: short write to " + path);
}

FeatureStack import_feature_stack(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("import_feature_stack: cannot open " + path);
  char magic[5];
  if (!f.read(magic, 5) || std::string(magic, 5) != "NSTK1") {
    throw FormatError("import_feature_stack: bad magic in " + path);
  }
  const auto get_u32 = [&]() -> std::uint32_t {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) {
      throw FormatError("import_feature_stack: truncated header in " + path);
    }
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  };
  const std::uint32_t layer_count = get_u32();
  const std::uint32_t t_len = get_u32();
  const std::uint32_t d_len = get_u32();

  // Validate the payload size before allocating what the header claims.
  const std::uintmax_t actual = std::filesystem::file_size(path);
  const std::uintmax_t expected =
      17 + 4ULL * layer_count * t_len * d_len;
  if (actual < expected) {
    throw ShapeError("import_feature_stack: payload shorter than header "
                     "claims in " +
                     path);
  }
  if (actual > expected) {
    throw ShapeError("import_feature_stack: trailing bytes beyond the declared "
                     "shape in " +
                     path);
  }

  FeatureStack stack;
  stack.layers.reserve(layer_count);
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    Eigen::MatrixXf layer(t_len, d_len);
    for (std::uint32_t t = 0; t < t_len; ++t) {
      for (std::uint32_t d = 0; d < d_len; ++d) {
        float v;
        if (!f.read(reinterpret_cast<char*>(&v), 4)) {
          throw ShapeError("import_feature_stack: payload shorter than header "
                           "claims in " +
                           path);
        }
        layer(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d)) = v;
      }
    }
    stack.layers.push_back(std::move(layer));
  }
  return stack;
}

Eigen::MatrixXd layer_weighted_sum(const FeatureStack& stack,
                                   const std::vector<double>& weights) {
  if (weights.size() != stack.L()) {
    throw ShapeError("layer_weighted_sum: " + std::to_string(weights.size()) +
                     " weights for " + std::to_string(stack.L()) + " layers");
  }
  if (stack.L() == 0) throw EmptyInput("layer_weighted_sum: empty stack");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(stack.T()), static_cast<Eigen::Index>(stack.D()));
  for (std::size_t l = 0; l < stack.L(); ++l) {
    out += weights[l] * stack.layers[l].cast<double>();
  }
  return out;
}

std::vector<double> layer_weight_grad(const FeatureStack& stack,
                                      const Eigen::MatrixXd& upstream) {
  if (stack.L() == 0) throw EmptyInput("layer_weight_grad: empty stack");
  if (upstream.rows() != static_cast<Eigen::Index>(stack.T()) ||
      upstream.cols() != static_cast<Eigen::Index>(stack.D())) {
    throw ShapeError("layer_weight_grad: upstream shape mismatch");
  }
  std::vector<double> g(stack.L());
  for (std::size_t l = 0; l < stack.L(); ++l) {
    g[l] = (upstream.array() * stack.layers[l].cast<double>().array()).sum();
  }
  return g;
}

}  // namespace nasinv
