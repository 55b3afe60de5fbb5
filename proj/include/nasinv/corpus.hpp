// SPDX-License-Identifier: Apache-2.0
//
// Corpus plumbing: JSONL manifests, synthetic corpus generation with known
// ground-truth nasalance trajectories, the versioned key-value config file,
// and run-directory bookkeeping (reproducibility records).
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nasinv/feature_frontend.hpp"
#include "nasinv/si_model.hpp"
#include "nasinv/target_pipeline.hpp"
#include "nasinv/trainer.hpp"

namespace nasinv {

struct ManifestEntry {
  std::string utterance_id;
  std::string speaker_id;
  Profile profile = Profile::kAdult;
  std::string oral_path;
  std::string nasal_path;
  std::optional<std::string> egg_path;
  std::optional<std::string> language;
  std::optional<std::string> transcript;
};

struct CorpusManifest {
  std::string dataset_name;
  std::vector<ManifestEntry> entries;
};

// JSONL: a header object {"dataset_name": ...} followed by one entry object
// per line. Relative paths are interpreted against the manifest's directory.
// Duplicate utterance ids or unknown profiles raise FormatError. A child
// entry carrying an EGG path raises InvalidArgument unless allow_child_egg
// (the caller is expected to warn when it passes true). With check_files,
// missing referenced audio raises IoError.
CorpusManifest read_manifest(const std::string& path,
                             bool allow_child_egg = false,
                             bool check_files = true);
void write_manifest(const std::string& path, const CorpusManifest& manifest);

// Resolve an entry path against the manifest location.
std::string resolve_manifest_path(const std::string& manifest_path,
                                  const std::string& entry_path);

// Synthetic corpus with analytically known nasalance: two amplitude-modulated
// tone carriers (oral and nasal, a 3:4 frequency pair sharing a fundamental)
// whose envelope split is the programmed nasalance curve, so the ratio
// pipeline recovers it. Adult corpora can carry an EGG-like carrier at the
// shared fundamental.
struct SyntheticSpec {
  int n_speakers = 14;
  int n_utterances = 15;  // per speaker
  double min_duration_s = 3.0;
  double max_duration_s = 6.0;
  double sample_rate = 16000.0;
  Profile profile = Profile::kAdult;
  bool with_egg = true;  // only honored for adult corpora
  std::uint64_t seed = 2024;
  // Domain-shift knobs for the "other domain" corpus.
  double carrier_scale = 1.0;  // scales all carrier frequencies
  double nasal_bias = 0.0;     // shifts the nasalance curves
  double noise_db = -35.0;     // additive white-noise floor
  std::optional<double> fixed_nasalance;  // constant plateau instead of curves
  std::string dataset_name = "synthetic";
  std::string speaker_prefix = "spk";
};

// Writes float32 WAVs plus manifest.jsonl into out_dir and returns the
// manifest. Deterministic per seed (byte-identical files). Counts must be
// positive (InvalidArgument); an unwritable directory raises IoError.
CorpusManifest make_synthetic_corpus(const std::string& out_dir,
                                     const SyntheticSpec& spec);

// Full pipeline configuration, one key per field:
//   mels, feature_layers, frontend_seed       (feature extraction; mels also
//                                              fixes the model input width)
//   hidden, dense, dropout, heads, model_seed (model)
//   epochs, batch, lr, alpha, patience, train_seed (training)
struct PipelineConfig {
  FrontendConfig frontend;
  ModelConfig model;
  TrainConfig train;
};

// First line must read "nasinv-config v1"; then "key = value" lines, with
// '#' comments and blank lines ignored. Unknown keys, malformed lines, or a
// bad version banner raise FormatError.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::string& path);
std::string serialize_config(const PipelineConfig& config);

// Run-directory bookkeeping: refuses to reuse a non-empty directory unless
// force (RunExists), creating it otherwise.
void ensure_run_dir(const std::string& path, bool force);

// repro.json: command, argv, seed, and a hash of the config text, so a run
// can be reproduced bit-identically (timestamps aside).
void write_repro_record(const std::string& run_dir, const std::string& command,
                        const std::vector<std::string>& args,
                        std::uint64_t seed, const std::string& config_text);

// FNV-1a 64-bit, used for the config hash in repro records.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace nasinv
