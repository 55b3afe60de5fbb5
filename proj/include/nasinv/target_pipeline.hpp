// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nasinv/dsp.hpp"
#include "nasinv/signal.hpp"

namespace nasinv {

enum class Profile { kAdult, kChild };

// High-pass cutoff used on the oral/nasal channels for each speaker profile.
inline double profile_cutoff_hz(Profile p) {
  return p == Profile::kAdult ? 20.0 : 10.0;
}

// One recording session unit: paired oral/nasal channels plus an optional
// electroglottograph channel and speaker metadata.
struct UtteranceRecord {
  std::string id;
  std::string speaker_id;
  Profile profile = Profile::kAdult;
  Signal oral;
  Signal nasal;
  std::optional<Signal> egg;
  std::string transcript;
};

// Aligned 100 Hz ground-truth series for one utterance. egg_env is absent for
// the child profile. silence_flag marks frames where the oral+nasal envelope
// fell below the silence floor (vp forced to 0 there).
struct TargetTraces {
  Series100 vp;
  std::optional<Series100> egg_env;
  Series100 per;
  Series100 aper;
  Series100 f0;
  std::vector<std::uint8_t> silence_flag;

  std::size_t size() const { return vp.values.size(); }
  bool has_egg() const { return egg_env.has_value(); }
};

// Raw nasalance plus its silence flags, before corpus normalization.
struct Nasalance {
  Series100 raw;  // in [0, 1]
  std::vector<std::uint8_t> silence_flag;
};

// Nasal-to-total acoustic energy ratio at 100 Hz: high-pass both channels at
// `hp_cutoff_hz`, take 25 ms RMS envelopes, form nasal/(nasal+oral) at the
// full rate, resample to 100 Hz, clamp to [0,1]. Frames whose resampled
// envelope sum falls below max(1e-4 x utterance median, 1e-12) are zeroed and
// flagged. Where the full-rate denominator is exactly 0 the ratio is defined
// as 0.5 so that channel swapping maps n -> 1-n everywhere.
Nasalance compute_nasalance(const Signal& oral, const Signal& nasal,
                            double hp_cutoff_hz);

// 20 Hz high-pass -> Hilbert envelope -> 100 Hz, clamped nonnegative.
Series100 compute_egg_envelope(const Signal& egg);

// Full raw-target recipe for one record: nasalance with the profile cutoff,
// EGG envelope for adult records that carry EGG, and source features from the
// combined (oral+nasal, peak 0.9) signal resampled to 16 kHz. All traces are
// truncated to the shortest length.
TargetTraces prepare_targets(const UtteranceRecord& rec);

// Corpus-wide min/max per trace kind, captured by normalize_dataset.
struct TraceStats {
  NormStats vp;
  std::optional<NormStats> egg_env;
  NormStats per;
  NormStats aper;
  NormStats f0;
};

// Map each trace kind independently onto [-1, 1] using corpus-wide min/max.
// egg_env stats cover only the utterances that carry EGG. A kind whose corpus
// min equals its max raises DegenerateRange naming the kind.
std::pair<std::vector<TargetTraces>, TraceStats> normalize_dataset(
    const std::vector<TargetTraces>& traces_list);

// Apply previously captured stats (held-out data joins the same map).
TargetTraces apply_trace_normalization(const TargetTraces& traces,
                                       const TraceStats& stats);

// One CSV per utterance: t_s, vp, [egg_env,] per, aper, f0, silence_flag at
// 100 rows per second; the egg_env column is present only when the traces
// carry it.
void write_traces_csv(const std::string& path, const TargetTraces& traces);
TargetTraces read_traces_csv(const std::string& path);

}  // namespace nasinv
