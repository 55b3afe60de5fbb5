// SPDX-License-Identifier: Apache-2.0
#include "nasinv/target_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "nasinv/errors.hpp"
#include "nasinv/source_features.hpp"

namespace nasinv {
namespace {

constexpr double kRmsWindowMs = 25.0;
constexpr double kEggCutoffHz = 20.0;
constexpr double kModelRateHz = 16000.0;
constexpr double kCombinedPeak = 0.9;
constexpr double kSilenceRel = 1e-4;
constexpr double kSilenceAbs = 1e-12;

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid),
                   v.end());
  return v[mid];
}

void require_aligned(const Signal& oral, const Signal& nasal) {
  if (oral.size() != nasal.size() ||
      oral.sample_rate_hz != nasal.sample_rate_hz) {
    throw ChannelMismatch("oral and nasal channels disagree in length or rate");
  }
}

}  // namespace

Nasalance compute_nasalance(const Signal& oral, const Signal& nasal,
                            double hp_cutoff_hz) {
  require_aligned(oral, nasal);
  const Signal ae_oral = rms_envelope(highpass(oral, hp_cutoff_hz), kRmsWindowMs);
  const Signal ae_nasal =
      rms_envelope(highpass(nasal, hp_cutoff_hz), kRmsWindowMs);

  Signal ratio{std::vector<double>(oral.size()), oral.sample_rate_hz};
  Signal den{std::vector<double>(oral.size()), oral.sample_rate_hz};
  for (std::size_t i = 0; i < oral.size(); ++i) {
    const double d = ae_nasal.samples[i] + ae_oral.samples[i];
    den.samples[i] = d;
    ratio.samples[i] = d > 0.0 ? ae_nasal.samples[i] / d : 0.5;
  }

  Nasalance out;
  out.raw = resample_to_100hz(ratio);
  const Series100 den100 = resample_to_100hz(den);
  const double floor =
      std::max(kSilenceRel * median_of(den100.values), kSilenceAbs);
  out.silence_flag.assign(out.raw.values.size(), 0);
  for (std::size_t i = 0; i < out.raw.values.size(); ++i) {
    out.raw.values[i] = std::clamp(out.raw.values[i], 0.0, 1.0);
    if (den100.values[i] < floor) {
      out.raw.values[i] = 0.0;
      out.silence_flag[i] = 1;
    }
  }
  return out;
}

Series100 compute_egg_envelope(const Signal& egg) {
  if (egg.samples.empty()) throw MissingChannel("EGG channel is empty");
  Series100 env = resample_to_100hz(hilbert_envelope(highpass(egg, kEggCutoffHz)));
  for (double& v : env.values) v = std::max(v, 0.0);
  return env;
}

TargetTraces prepare_targets(const UtteranceRecord& rec) {
  require_aligned(rec.oral, rec.nasal);
  if (rec.egg.has_value()) {
    const double dur_gap =
        std::abs(rec.egg->duration_s() - rec.oral.duration_s());
    if (dur_gap > 0.010) {
      throw ChannelMismatch("EGG duration deviates from oral by " +
                            std::to_string(dur_gap) + " s (limit 10 ms)");
    }
  }

  TargetTraces out;
  Nasalance nas =
      compute_nasalance(rec.oral, rec.nasal, profile_cutoff_hz(rec.profile));
  out.vp = std::move(nas.raw);
  out.silence_flag = std::move(nas.silence_flag);

  if (rec.profile == Profile::kAdult && rec.egg.has_value()) {
    out.egg_env = compute_egg_envelope(*rec.egg);
  }

  const Signal combined =
      mix_peak_normalize(rec.oral, rec.nasal, kCombinedPeak);
  const SourceFrames sf =
      estimate_source_frames(resample_signal(combined, kModelRateHz));
  out.per.values = sf.periodicity;
  out.aper.values = sf.aperiodicity;
  out.f0.values = sf.f0_hz;

  std::size_t min_len = std::min({out.vp.values.size(), out.per.values.size(),
                                  out.aper.values.size(), out.f0.values.size()});
  if (out.egg_env) min_len = std::min(min_len, out.egg_env->values.size());
  out.vp.values.resize(min_len);
  out.per.values.resize(min_len);
  out.aper.values.resize(min_len);
  out.f0.values.resize(min_len);
  out.silence_flag.resize(min_len);
  if (out.egg_env) out.egg_env->values.resize(min_len);
  return out;
}

namespace {

// Widen [min, max] over one series.
void scan(const Series100& s, double& mn, double& mx) {
  for (double v : s.values) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
}

NormStats finalize_stats(double mn, double mx, const char* kind) {
  if (!(mx > mn)) {
    throw DegenerateRange(std::string("normalize_dataset: trace kind '") +
                          kind + "' is constant across the corpus");
  }
  return NormStats{mn, mx};
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

std::pair<std::vector<TargetTraces>, TraceStats> normalize_dataset(
    const std::vector<TargetTraces>& traces_list) {
  if (traces_list.empty()) throw EmptyInput("normalize_dataset: empty corpus");

  double vp_mn = kInf, vp_mx = -kInf, per_mn = kInf, per_mx = -kInf;
  double ap_mn = kInf, ap_mx = -kInf, f0_mn = kInf, f0_mx = -kInf;
  double eg_mn = kInf, eg_mx = -kInf;
  bool any_egg = false;
  for (const auto& t : traces_list) {
    scan(t.vp, vp_mn, vp_mx);
    scan(t.per, per_mn, per_mx);
    scan(t.aper, ap_mn, ap_mx);
    scan(t.f0, f0_mn, f0_mx);
    if (t.egg_env) {
      any_egg = true;
      scan(*t.egg_env, eg_mn, eg_mx);
    }
  }

  TraceStats stats;
  stats.vp = finalize_stats(vp_mn, vp_mx, "vp");
  stats.per = finalize_stats(per_mn, per_mx, "per");
  stats.aper = finalize_stats(ap_mn, ap_mx, "aper");
  stats.f0 = finalize_stats(f0_mn, f0_mx, "f0");
  if (any_egg) stats.egg_env = finalize_stats(eg_mn, eg_mx, "egg_env");

  std::vector<TargetTraces> out;
  out.reserve(traces_list.size());
  for (const auto& t : traces_list) {
    out.push_back(apply_trace_normalization(t, stats));
  }
  return {std::move(out), stats};
}

TargetTraces apply_trace_normalization(const TargetTraces& traces,
                                       const TraceStats& stats) {
  TargetTraces out = traces;
  out.vp = apply_normalization(traces.vp, stats.vp);
  out.per = apply_normalization(traces.per, stats.per);
  out.aper = apply_normalization(traces.aper, stats.aper);
  out.f0 = apply_normalization(traces.f0, stats.f0);
  if (traces.egg_env) {
    if (!stats.egg_env) {
      throw MissingChannel(
          "apply_trace_normalization: traces carry EGG but stats do not");
    }
    out.egg_env = apply_normalization(*traces.egg_env, *stats.egg_env);
  }
  return out;
}

void write_traces_csv(const std::string& path, const TargetTraces& traces) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_traces_csv: cannot open " + path);
  f << "t_s,vp,";
  if (traces.has_egg()) f << "egg_env,";
  f << "per,aper,f0,silence_flag\n";
  char buf[64];
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.4f", static_cast<double>(i) / 100.0);
    f << buf;
    auto col = [&](double v) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      f << buf;
    };
    col(traces.vp.values[i]);
    if (traces.has_egg()) col(traces.egg_env->values[i]);
    col(traces.per.values[i]);
    col(traces.aper.values[i]);
    col(traces.f0.values[i]);
    f << ',' << static_cast<int>(traces.silence_flag[i]) << '\n';
  }
  if (!f) throw IoError("write_traces_csv: short write to " + path);
}

TargetTraces read_traces_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_traces_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw FormatError("read_traces_csv: empty file");

  bool has_egg = false;
  if (line == "t_s,vp,egg_env,per,aper,f0,silence_flag") {
    has_egg = true;
  } else if (line != "t_s,vp,per,aper,f0,silence_flag") {
    throw FormatError("read_traces_csv: unrecognized header: " + line);
  }

  TargetTraces out;
  if (has_egg) out.egg_env = Series100{};
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    auto next = [&]() -> double {
      if (!std::getline(ss, cell, ',')) {
        throw FormatError("read_traces_csv: short row in " + path);
      }
      return std::stod(cell);
    };
    next();  // t_s, implied by row index
    out.vp.values.push_back(next());
    if (has_egg) out.egg_env->values.push_back(next());
    out.per.values.push_back(next());
    out.aper.values.push_back(next());
    out.f0.values.push_back(next());
    out.silence_flag.push_back(static_cast<std::uint8_t>(next() != 0.0));
  }
  return out;
}

}  // namespace nasinv
