// SPDX-License-Identifier: Apache-2.0
//
// nasinv: command-line front end for the nasalance inversion pipeline.
//
// Commands:
//   synth     generate a synthetic paired-channel corpus with known nasalance
//   split     compute speaker-level cross-validation folds -> folds.json
//   prepare   compute raw ground-truth target traces -> targets/<id>.csv
//   features  extract layered feature stacks -> features/<id>.nstk
//   train     train a model on one fold -> checkpoint.nsck + history.csv
//   finetune  continue training from a checkpoint on a new corpus
//   eval      score a checkpoint (or a ground-truth echo stub) -> report.csv
//   ablate    train/evaluate the four head-subset variants -> ablation.csv
//   trace     per-utterance figure data: trace.csv, figure.csv, trace.svg
//
// Every command writes repro.json (command, argv, seed, config hash) into its
// run directory, and refuses to reuse a non-empty run directory unless
// --force is given.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nasinv/corpus.hpp"
#include "nasinv/dsp.hpp"
#include "nasinv/errors.hpp"
#include "nasinv/eval_harness.hpp"
#include "nasinv/feature_frontend.hpp"
#include "nasinv/fft.hpp"
#include "nasinv/si_model.hpp"
#include "nasinv/target_pipeline.hpp"
#include "nasinv/trainer.hpp"
#include "nasinv/wav.hpp"

namespace {

using namespace nasinv;
namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> g_argv;  // argv[1:], recorded in repro.json

std::string path_in(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

Signal to_model_rate(const Signal& s) {
  return s.sample_rate_hz == 16000.0 ? s : resample_signal(s, 16000.0);
}

UtteranceRecord load_record(const std::string& manifest_path,
                            const ManifestEntry& e) {
  UtteranceRecord r;
  r.id = e.utterance_id;
  r.speaker_id = e.speaker_id;
  r.profile = e.profile;
  r.oral = ingest_wav(resolve_manifest_path(manifest_path, e.oral_path), 1)[0];
  r.nasal =
      ingest_wav(resolve_manifest_path(manifest_path, e.nasal_path), 1)[0];
  if (e.egg_path) {
    r.egg = ingest_wav(resolve_manifest_path(manifest_path, *e.egg_path), 1)[0];
  }
  if (e.transcript) r.transcript = *e.transcript;
  return r;
}

// Manifest + per-utterance raw targets (+ feature stacks when requested),
// loaded in parallel across utterances.
struct CorpusData {
  CorpusManifest manifest;
  std::vector<TargetTraces> raw_traces;
  std::vector<FeatureStack> stacks;  // empty unless requested
};

CorpusData load_corpus(const std::string& manifest_path, bool allow_child_egg,
                       const FrontendConfig& frontend, bool with_features) {
  CorpusData c;
  c.manifest = read_manifest(manifest_path, allow_child_egg);
  const auto n = static_cast<std::int64_t>(c.manifest.entries.size());
  if (n == 0) throw EmptyInput("manifest has no entries: " + manifest_path);
  c.raw_traces.resize(static_cast<std::size_t>(n));
  if (with_features) c.stacks.resize(static_cast<std::size_t>(n));
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    bool bail;
#pragma omp critical(nasinv_cli_err)
    bail = static_cast<bool>(err);
    if (bail) continue;
    try {
      const auto rec = load_record(manifest_path, c.manifest.entries[i]);
      c.raw_traces[i] = prepare_targets(rec);
      if (with_features) {
        const auto mixed = mix_peak_normalize(rec.oral, rec.nasal, 0.9);
        c.stacks[i] = extract_feature_stack(to_model_rate(mixed), frontend);
      }
    } catch (...) {
#pragma omp critical(nasinv_cli_err)
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  return c;
}

std::vector<std::string> unique_speakers(const CorpusManifest& m) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (seen.insert(e.speaker_id).second) out.push_back(e.speaker_id);
  }
  return out;
}

std::vector<std::size_t> indices_for(const CorpusData& c,
                                     const std::vector<std::string>& speakers) {
  const std::set<std::string> want(speakers.begin(), speakers.end());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < c.manifest.entries.size(); ++i) {
    if (want.count(c.manifest.entries[i].speaker_id)) idx.push_back(i);
  }
  return idx;
}

TraceStats stats_from(const CorpusData& c,
                      const std::vector<std::size_t>& idx) {
  std::vector<TargetTraces> raws;
  raws.reserve(idx.size());
  for (auto i : idx) raws.push_back(c.raw_traces[i]);
  return normalize_dataset(raws).second;
}

Dataset dataset_from(const CorpusData& c, const std::vector<std::size_t>& idx,
                     const TraceStats& stats) {
  Dataset d;
  d.reserve(idx.size());
  for (auto i : idx) {
    TrainUtterance u;
    u.features = c.stacks[i];
    u.targets = trace_targets(apply_trace_normalization(c.raw_traces[i], stats));
    d.push_back(std::move(u));
  }
  return d;
}

bool corpus_has_egg(const CorpusManifest& m) {
  return std::any_of(m.entries.begin(), m.entries.end(),
                     [](const ManifestEntry& e) { return e.egg_path.has_value(); });
}

// Drop the EGG head from a head list when the corpus supplies no EGG channel
// (nothing could ever train or score it). Returns true if dropped.
bool drop_egg_head(std::vector<std::string>& heads) {
  const auto it = std::find(heads.begin(), heads.end(), "egg_env");
  if (it == heads.end()) return false;
  heads.erase(it);
  return true;
}

Fold pick_fold(const std::vector<std::string>& speakers, int n_folds,
               std::uint64_t fold_seed, int fold_index) {
  const auto folds = make_folds(speakers, n_folds, fold_seed);
  if (fold_index < 0 || fold_index >= static_cast<int>(folds.size())) {
    throw InvalidArgument("fold index " + std::to_string(fold_index) +
                          " out of range (have " +
                          std::to_string(folds.size()) + " folds)");
  }
  return folds[fold_index];
}

PipelineConfig effective_config(const std::string& config_path) {
  if (config_path.empty()) return PipelineConfig{};
  return load_config(config_path);
}

// Frontend a checkpoint's features must be extracted with. The checkpoint is
// authoritative: geometry comes from the stored model config, the seed from
// the stored frontend seed (the seed drives the layer mixing, so replaying
// it is a correctness requirement, not a convenience). A user-supplied
// config whose geometry contradicts the checkpoint is an incoherent request
// and fails loudly; checkpoints from before seeds were stored fall back to
// the config's seed with a note.
FrontendConfig frontend_for_checkpoint(const LoadedCheckpoint& ck,
                                       const PipelineConfig& cfg,
                                       bool explicit_config) {
  FrontendConfig fc = cfg.frontend;
  const auto& mc = ck.params.config;
  if (explicit_config &&
      (fc.n_mels != mc.feature_dim || fc.n_layers != mc.fusion_layers)) {
    throw ShapeError("checkpoint expects " + std::to_string(mc.fusion_layers) +
                     " layers x " + std::to_string(mc.feature_dim) +
                     " dims but the config extracts " +
                     std::to_string(fc.n_layers) + " x " +
                     std::to_string(fc.n_mels));
  }
  fc.n_mels = mc.feature_dim;
  fc.n_layers = mc.fusion_layers;
  if (ck.frontend_seed) {
    if (*ck.frontend_seed != fc.seed) {
      std::cerr << "note: using the checkpoint's frontend seed ("
                << *ck.frontend_seed << ")\n";
    }
    fc.seed = *ck.frontend_seed;
  } else {
    std::cerr << "note: checkpoint stores no frontend seed; extracting "
                 "features with seed " << fc.seed << "\n";
  }
  return fc;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path);
  f << text;
  if (!f) throw IoError("short write to " + path);
}

std::string format_double(double v, const char* fmt = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

void print_eval_summary(const std::map<std::string, double>& means,
                        const std::map<std::string, int>& scored,
                        const std::map<std::string, int>& excluded) {
  for (const auto& name : known_head_names()) {
    const auto it = means.find(name);
    const int ex = excluded.count(name) ? excluded.at(name) : 0;
    if (it == means.end()) {
      if (ex > 0) {
        std::cout << "  " << name << ": no defined correlation (" << ex
                  << " utterance(s) excluded)\n";
      }
      continue;
    }
    std::cout << "  " << name << ": mean PPMC "
              << format_double(it->second, "%.4f") << " over "
              << scored.at(name) << " utterance(s)";
    if (ex > 0) std::cout << " (" << ex << " excluded)";
    std::cout << "\n";
  }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------
struct SynthOpts {
  std::string out;
  SyntheticSpec spec;
  double fixed = 0.0;
  bool has_fixed = false;
  std::string profile = "adult";
  bool no_egg = false;
  bool force = false;
};

int run_synth(const SynthOpts& o) {
  SyntheticSpec spec = o.spec;
  spec.profile = o.profile == "child" ? Profile::kChild : Profile::kAdult;
  spec.with_egg = !o.no_egg;
  if (o.has_fixed) spec.fixed_nasalance = o.fixed;
  ensure_run_dir(o.out, o.force);
  const auto m = make_synthetic_corpus(o.out, spec);
  write_repro_record(o.out, "synth", g_argv, spec.seed, "");
  std::cout << "wrote " << m.entries.size() << " utterances ("
            << spec.n_speakers << " speakers) to " << o.out << "\n"
            << "manifest: " << path_in(o.out, "manifest.jsonl") << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------
struct SplitOpts {
  std::string manifest;
  std::string run_dir = "run-split";
  int speakers = 0;
  int folds = 5;
  std::uint64_t seed = 7;
  bool force = false;
  bool allow_egg = false;
};

int run_split(const SplitOpts& o) {
  std::vector<std::string> speakers;
  if (!o.manifest.empty()) {
    speakers = unique_speakers(read_manifest(o.manifest, o.allow_egg));
  } else if (o.speakers > 0) {
    for (int i = 1; i <= o.speakers; ++i) {
      char name[16];
      std::snprintf(name, sizeof(name), "s%02d", i);
      speakers.push_back(name);
    }
  } else {
    throw InvalidArgument("split: pass --manifest or --speakers N");
  }
  const auto folds = make_folds(speakers, o.folds, o.seed);
  ensure_run_dir(o.run_dir, o.force);
  json j = {{"seed", std::to_string(o.seed)},
            {"n_folds", o.folds},
            {"speakers", speakers}};
  j["folds"] = json::array();
  for (const auto& f : folds) {
    j["folds"].push_back(
        {{"train", f.train}, {"dev", f.dev}, {"test", f.test}});
  }
  write_text(path_in(o.run_dir, "folds.json"), j.dump(2) + "\n");
  write_repro_record(o.run_dir, "split", g_argv, o.seed, "");
  for (std::size_t i = 0; i < folds.size(); ++i) {
    std::cout << "fold " << i << ": train " << folds[i].train.size()
              << " / dev " << folds[i].dev.size() << " / test "
              << folds[i].test.size() << "\n";
  }
  std::cout << "folds: " << path_in(o.run_dir, "folds.json") << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// prepare / features
// ---------------------------------------------------------------------------
struct PrepareOpts {
  std::string manifest;
  std::string run_dir = "run-prepare";
  std::string config;
  bool force = false;
  bool allow_egg = false;
};

int run_prepare(const PrepareOpts& o) {
  ensure_run_dir(o.run_dir, o.force);
  const auto corpus =
      load_corpus(o.manifest, o.allow_egg, FrontendConfig{}, false);
  const auto dir = path_in(o.run_dir, "targets");
  fs::create_directories(dir);
  for (std::size_t i = 0; i < corpus.manifest.entries.size(); ++i) {
    write_traces_csv(
        path_in(dir, corpus.manifest.entries[i].utterance_id + ".csv"),
        corpus.raw_traces[i]);
  }
  write_repro_record(o.run_dir, "prepare", g_argv, 0, "");
  std::cout << "prepared " << corpus.manifest.entries.size()
            << " utterances -> " << dir << "\n";
  return 0;
}

int run_features(const PrepareOpts& o) {
  const auto cfg = effective_config(o.config);
  ensure_run_dir(o.run_dir, o.force);
  const auto corpus = load_corpus(o.manifest, o.allow_egg, cfg.frontend, true);
  const auto dir = path_in(o.run_dir, "features");
  fs::create_directories(dir);
  for (std::size_t i = 0; i < corpus.manifest.entries.size(); ++i) {
    export_feature_stack(
        path_in(dir, corpus.manifest.entries[i].utterance_id + ".nstk"),
        corpus.stacks[i]);
  }
  const auto cfg_text = serialize_config(cfg);
  write_repro_record(o.run_dir, "features", g_argv, cfg.frontend.seed,
                     cfg_text);
  std::cout << "extracted " << corpus.manifest.entries.size()
            << " feature stacks -> " << dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train / finetune
// ---------------------------------------------------------------------------
struct TrainOpts {
  std::string manifest;
  std::string config;
  std::string run_dir = "run-train";
  std::string checkpoint;  // finetune only
  int fold = 0;
  int folds = 5;
  std::uint64_t fold_seed = 7;
  std::uint64_t seed = 0;
  bool has_seed = false;
  bool force = false;
  bool allow_egg = false;
};

void report_training(const TrainResult& res, const std::string& run_dir) {
  std::cout << "epochs run: " << res.history.size() << "\n";
  if (res.best_epoch < 0) {
    std::cout << "best model: the starting parameters (dev loss "
              << format_double(res.best_dev_loss, "%.6f")
              << " was never improved)\n";
  } else {
    std::cout << "best dev loss " << format_double(res.best_dev_loss, "%.6f")
              << " at epoch " << res.best_epoch << "\n";
  }
  if (res.skipped_head_terms > 0) {
    std::cout << "note: " << res.skipped_head_terms
              << " head terms had no usable target and were skipped\n";
  }
  std::cout << "checkpoint: " << path_in(run_dir, "checkpoint.nsck") << "\n"
            << "history:    " << path_in(run_dir, "history.csv") << "\n";
}

int run_train(const TrainOpts& o) {
  auto cfg = effective_config(o.config);
  if (o.has_seed) cfg.train.seed = o.seed;
  ensure_run_dir(o.run_dir, o.force);
  const auto corpus = load_corpus(o.manifest, o.allow_egg, cfg.frontend, true);
  if (!corpus_has_egg(corpus.manifest) && drop_egg_head(cfg.model.heads)) {
    std::cerr << "note: corpus has no EGG channel; dropping the egg_env head\n";
  }
  const auto fold = pick_fold(unique_speakers(corpus.manifest), o.folds,
                              o.fold_seed, o.fold);
  const auto tr_idx = indices_for(corpus, fold.train);
  const auto dv_idx = indices_for(corpus, fold.dev);
  if (tr_idx.empty() || dv_idx.empty()) {
    throw EmptyInput("fold " + std::to_string(o.fold) +
                     " has an empty train or dev set for this manifest");
  }
  const auto stats = stats_from(corpus, tr_idx);
  const auto train_set = dataset_from(corpus, tr_idx, stats);
  const auto dev_set = dataset_from(corpus, dv_idx, stats);

  const auto start = init_params(cfg.model);
  const auto res = train_model(start, train_set, dev_set, cfg.train);

  save_checkpoint(path_in(o.run_dir, "checkpoint.nsck"), res.best_params,
                  &stats, &cfg.frontend.seed);
  write_history_csv(path_in(o.run_dir, "history.csv"), res.history);
  const auto cfg_text = serialize_config(cfg);
  write_text(path_in(o.run_dir, "config.txt"), cfg_text);
  write_repro_record(o.run_dir, "train", g_argv, cfg.train.seed, cfg_text);
  std::cout << "trained on " << train_set.size() << " utterances (fold "
            << o.fold << ": " << fold.train.size() << " train / "
            << fold.dev.size() << " dev speakers)\n";
  report_training(res, o.run_dir);
  return 0;
}

int run_finetune(const TrainOpts& o) {
  auto cfg = effective_config(o.config);
  if (o.has_seed) cfg.train.seed = o.seed;
  ensure_run_dir(o.run_dir, o.force);

  // Discover the stored head set, then load with the corpus-driven
  // expectation so an EGG head is dropped when the new corpus cannot feed it.
  const auto manifest = read_manifest(o.manifest, o.allow_egg);
  auto expected = load_checkpoint(o.checkpoint).params.config.heads;
  if (!corpus_has_egg(manifest)) drop_egg_head(expected);
  auto loaded = load_checkpoint(o.checkpoint, expected);
  if (loaded.dropped_egg_head) {
    std::cerr << "note: dropped the egg_env head (corpus has no EGG channel)\n";
  }
  cfg.model = loaded.params.config;
  cfg.frontend = frontend_for_checkpoint(loaded, cfg, !o.config.empty());
  const auto corpus = load_corpus(o.manifest, o.allow_egg, cfg.frontend, true);

  const auto fold = pick_fold(unique_speakers(corpus.manifest), o.folds,
                              o.fold_seed, o.fold);
  const auto tr_idx = indices_for(corpus, fold.train);
  const auto dv_idx = indices_for(corpus, fold.dev);
  if (tr_idx.empty() || dv_idx.empty()) {
    throw EmptyInput("fold " + std::to_string(o.fold) +
                     " has an empty train or dev set for this manifest");
  }
  const auto stats = stats_from(corpus, tr_idx);
  const auto train_set = dataset_from(corpus, tr_idx, stats);
  const auto dev_set = dataset_from(corpus, dv_idx, stats);

  const auto res = train_model(loaded.params, train_set, dev_set, cfg.train);

  save_checkpoint(path_in(o.run_dir, "checkpoint.nsck"), res.best_params,
                  &stats, &cfg.frontend.seed);
  write_history_csv(path_in(o.run_dir, "history.csv"), res.history);
  const auto cfg_text = serialize_config(cfg);
  write_text(path_in(o.run_dir, "config.txt"), cfg_text);
  write_repro_record(o.run_dir, "finetune", g_argv, cfg.train.seed, cfg_text);
  std::cout << "fine-tuned from " << o.checkpoint << " on " << train_set.size()
            << " utterances\n";
  report_training(res, o.run_dir);
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------
struct EvalOpts {
  std::string manifest;
  std::string config;
  std::string run_dir = "run-eval";
  std::string checkpoint;
  int fold = -1;  // -1: the whole manifest is the test set
  int folds = 5;
  std::uint64_t fold_seed = 7;
  bool echo = false;
  bool append = false;
  bool force = false;
  bool allow_egg = false;
};

// rows[fold][target] = mean PPMC
using ReportRows = std::map<int, std::map<std::string, double>>;

ReportRows read_report_rows(const std::string& path) {
  ReportRows rows;
  std::ifstream f(path);
  if (!f) return rows;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string fold_s, target, value_s;
    if (!std::getline(ss, fold_s, ',') || !std::getline(ss, target, ',') ||
        !std::getline(ss, value_s)) {
      throw FormatError("malformed report row in " + path + ": " + line);
    }
    rows[std::stoi(fold_s)][target] = std::stod(value_s);
  }
  return rows;
}

void write_report_and_aggregate(const std::string& run_dir,
                                const ReportRows& rows) {
  std::ostringstream rep;
  rep << "fold,target,ppmc\n";
  std::map<std::string, std::vector<double>> by_target;
  for (const auto& [fold, targets] : rows) {
    for (const auto& [target, value] : targets) {
      rep << fold << "," << target << "," << format_double(value, "%.6f")
          << "\n";
      by_target[target].push_back(value);
    }
  }
  write_text(path_in(run_dir, "report.csv"), rep.str());

  std::ostringstream agg;
  agg << "target,mean,std\n";
  for (const auto& [target, values] : by_target) {
    const auto a = aggregate(values);
    agg << target << "," << format_double(a.mean, "%.6f") << ","
        << format_double(a.stddev, "%.6f") << "\n";
  }
  write_text(path_in(run_dir, "aggregate.csv"), agg.str());
}

int run_eval(const EvalOpts& o) {
  const auto cfg = effective_config(o.config);
  ensure_run_dir(o.run_dir, o.force || o.append);

  // The checkpoint dictates the frontend its features were extracted with;
  // the echo stub touches no model and needs no feature extraction at all.
  std::optional<LoadedCheckpoint> loaded;
  FrontendConfig frontend = cfg.frontend;
  if (!o.echo) {
    if (o.checkpoint.empty()) {
      throw InvalidArgument("eval: pass --checkpoint or --echo-ground-truth");
    }
    loaded = load_checkpoint(o.checkpoint);
    frontend = frontend_for_checkpoint(*loaded, cfg, !o.config.empty());
  }
  const auto corpus = load_corpus(o.manifest, o.allow_egg, frontend, !o.echo);

  std::vector<std::string> test_speakers;
  if (o.fold >= 0) {
    test_speakers = pick_fold(unique_speakers(corpus.manifest), o.folds,
                              o.fold_seed, o.fold)
                        .test;
  } else {
    test_speakers = unique_speakers(corpus.manifest);
  }
  const auto idx = indices_for(corpus, test_speakers);
  if (idx.empty()) throw EmptyInput("no test utterances selected");

  std::map<std::string, double> means;
  std::map<std::string, int> scored, excluded;
  std::uint64_t repro_seed = 0;

  if (o.echo) {
    // Ground-truth echo stub: predictions are the targets themselves, so
    // every utterance with non-constant targets scores exactly 1.
    std::map<std::string, std::vector<double>> scores;
    for (auto i : idx) {
      for (const auto& [target, v] : trace_targets(corpus.raw_traces[i])) {
        try {
          scores[target].push_back(ppmc(v, v));
        } catch (const ZeroVariance&) {
          ++excluded[target];
        }
      }
    }
    for (const auto& [target, vs] : scores) {
      means[target] = aggregate(vs).mean;
      scored[target] = static_cast<int>(vs.size());
    }
    std::cout << "evaluated ground-truth echo stub on " << idx.size()
              << " utterances\n";
  } else {
    repro_seed = loaded->params.config.seed;
    TraceStats stats;
    if (loaded->norm_stats) {
      stats = *loaded->norm_stats;
    } else {
      std::cerr << "note: checkpoint has no normalization stats; deriving "
                   "them from the evaluation corpus\n";
      stats = stats_from(corpus, idx);
    }
    auto test_set = dataset_from(corpus, idx, stats);
    const auto res = evaluate_model(loaded->params, test_set);
    means = res.mean_ppmc;
    scored = res.scored;
    excluded = res.excluded;
    std::cout << "evaluated " << o.checkpoint << " on " << idx.size()
              << " utterances\n";
  }

  const int fold_col = std::max(o.fold, 0);
  ReportRows rows;
  if (o.append) rows = read_report_rows(path_in(o.run_dir, "report.csv"));
  rows[fold_col] = means;
  write_report_and_aggregate(o.run_dir, rows);
  write_repro_record(o.run_dir, "eval", g_argv, repro_seed,
                     o.config.empty() ? "" : serialize_config(cfg));
  print_eval_summary(means, scored, excluded);
  std::cout << "report:    " << path_in(o.run_dir, "report.csv") << "\n"
            << "aggregate: " << path_in(o.run_dir, "aggregate.csv") << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------
struct AblateOpts {
  std::string manifest;
  std::string config;
  std::string run_dir = "run-ablate";
  int fold = 0;
  int folds = 5;
  std::uint64_t fold_seed = 7;
  std::uint64_t seed = 0;
  bool has_seed = false;
  bool force = false;
  bool allow_egg = false;
};

int run_ablate(const AblateOpts& o) {
  auto cfg = effective_config(o.config);
  if (o.has_seed) {
    cfg.train.seed = o.seed;
    cfg.model.seed = o.seed;
  }
  ensure_run_dir(o.run_dir, o.force);
  const auto corpus = load_corpus(o.manifest, o.allow_egg, cfg.frontend, true);
  const auto fold = pick_fold(unique_speakers(corpus.manifest), o.folds,
                              o.fold_seed, o.fold);
  const auto tr_idx = indices_for(corpus, fold.train);
  const auto dv_idx = indices_for(corpus, fold.dev);
  const auto te_idx = indices_for(corpus, fold.test);
  if (tr_idx.empty() || dv_idx.empty() || te_idx.empty()) {
    throw EmptyInput("fold " + std::to_string(o.fold) +
                     " has an empty split for this manifest");
  }
  const auto stats = stats_from(corpus, tr_idx);
  const auto train_set = dataset_from(corpus, tr_idx, stats);
  const auto dev_set = dataset_from(corpus, dv_idx, stats);
  const auto test_set = dataset_from(corpus, te_idx, stats);

  static const std::vector<std::string> kVariantNames = {"vp-only", "vp+sf",
                                                         "vp+egg", "all"};
  const auto& head_sets = ablation_head_sets();
  std::vector<AblationRow> rows;
  for (std::size_t v = 0; v < head_sets.size(); ++v) {
    auto model_cfg = cfg.model;
    model_cfg.heads = head_sets[v];
    const auto res =
        train_model(init_params(model_cfg), train_set, dev_set, cfg.train);
    auto best = res.best_params;
    const auto ev = evaluate_model(best, test_set);
    rows.push_back({kVariantNames[v], head_sets[v], ev.mean_ppmc});
    std::cout << "variant " << kVariantNames[v] << ": done ("
              << res.history.size() << " epochs)\n";
  }
  const auto csv = ablation_csv(rows);
  write_text(path_in(o.run_dir, "ablation.csv"), csv);
  const auto cfg_text = serialize_config(cfg);
  write_repro_record(o.run_dir, "ablate", g_argv, cfg.train.seed, cfg_text);
  std::cout << csv << "ablation table: " << path_in(o.run_dir, "ablation.csv")
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// trace
// ---------------------------------------------------------------------------
struct TraceOpts {
  std::string manifest;
  std::string config;
  std::string run_dir = "run-trace";
  std::string checkpoint;
  std::string finetuned;
  std::string utterance;
  bool force = false;
  bool allow_egg = false;
};

std::vector<double> predict_vp(LoadedCheckpoint& loaded,
                               const FeatureStack& stack) {
  std::mt19937_64 rng(0);
  const auto out = forward(loaded.params, stack, Mode::kEval, rng);
  const auto& vp = out.at("vp");
  Series100 s(std::vector<double>(vp.data(), vp.data() + vp.size()));
  if (loaded.norm_stats) s = invert_normalization(s, loaded.norm_stats->vp);
  return s.values;
}

struct FigureSeries {
  std::string panel, series;
  std::vector<double> t, k, v;
};

// Coarse display spectrogram: 25 ms window / 10 ms hop log-magnitude,
// averaged down to at most `max_cols` x `bands` cells.
struct SpecGrid {
  std::vector<double> t;                     // column centers, seconds
  std::vector<std::vector<double>> cells;    // [col][band] dB
  double db_lo = 0.0, db_hi = 1.0;
};

SpecGrid spectrogram_grid(const Signal& s16, int max_cols, int bands) {
  const int win = 400, hop = 160, nfft = 512, nbins = nfft / 2 + 1;
  const auto& x = s16.samples;
  const int n_frames =
      x.size() >= static_cast<std::size_t>(win)
          ? 1 + static_cast<int>((x.size() - win) / hop)
          : 1;
  std::vector<std::vector<double>> frames(n_frames);
  std::vector<double> window(win);
  for (int i = 0; i < win; ++i) {
    window[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / (win - 1)));
  }
  for (int f = 0; f < n_frames; ++f) {
    std::vector<double> buf(nfft, 0.0);
    for (int i = 0; i < win; ++i) {
      const std::size_t j = static_cast<std::size_t>(f) * hop + i;
      if (j < x.size()) buf[i] = x[j] * window[i];
    }
    const auto spec = fft_real(buf);
    auto& mags = frames[f];
    mags.resize(nbins);
    for (int b = 0; b < nbins; ++b) {
      mags[b] = 20.0 * std::log10(std::abs(spec[b]) + 1e-10);
    }
  }
  SpecGrid g;
  const int cols = std::min(max_cols, n_frames);
  g.cells.resize(cols);
  g.db_lo = 1e30;
  g.db_hi = -1e30;
  for (int c = 0; c < cols; ++c) {
    const int f0 = c * n_frames / cols, f1 = std::max(f0 + 1, (c + 1) * n_frames / cols);
    g.t.push_back((f0 + (f1 - f0) * 0.5) * hop / s16.sample_rate_hz +
                  0.5 * win / s16.sample_rate_hz);
    auto& col = g.cells[c];
    col.assign(bands, 0.0);
    for (int b = 0; b < bands; ++b) {
      const int b0 = b * nbins / bands, b1 = std::max(b0 + 1, (b + 1) * nbins / bands);
      double acc = 0.0;
      int cnt = 0;
      for (int f = f0; f < f1; ++f) {
        for (int k = b0; k < b1; ++k) {
          acc += frames[f][k];
          ++cnt;
        }
      }
      col[b] = acc / std::max(cnt, 1);
      g.db_lo = std::min(g.db_lo, col[b]);
      g.db_hi = std::max(g.db_hi, col[b]);
    }
  }
  if (g.db_hi <= g.db_lo) g.db_hi = g.db_lo + 1.0;
  return g;
}

// SVG figure: six stacked panels. Pure polylines/rects, no external assets.
class SvgFigure {
 public:
  SvgFigure(int width, int panel_height, int n_panels)
      : w_(width), ph_(panel_height), n_(n_panels) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_
          << "\" height=\"" << total_height()
          << "\" viewBox=\"0 0 " << w_ << " " << total_height() << "\">\n"
          << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }

  int total_height() const { return n_ * (ph_ + kGap) + kTop; }

  // Panel-local coordinate mapping.
  double px(double t, double t_lo, double t_hi) const {
    return kLeft + (t - t_lo) / std::max(t_hi - t_lo, 1e-12) * (w_ - kLeft - 20);
  }
  double py(int panel, double v, double v_lo, double v_hi) const {
    const double top = panel_top(panel) + 16;
    const double bot = panel_top(panel) + ph_ - 6;
    return bot - (v - v_lo) / std::max(v_hi - v_lo, 1e-12) * (bot - top);
  }
  double panel_top(int panel) const { return kTop + panel * (ph_ + kGap); }

  void add_title(int panel, const std::string& text) {
    body_ << "<text x=\"" << kLeft << "\" y=\"" << panel_top(panel) + 11
          << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\">"
          << text << "</text>\n";
  }

  void add_polyline(int panel, const std::vector<double>& t,
                    const std::vector<double>& v, double t_lo, double t_hi,
                    double v_lo, double v_hi, const std::string& color) {
    body_ << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < t.size(); ++i) {
      body_ << format_double(px(t[i], t_lo, t_hi), "%.1f") << ","
            << format_double(py(panel, v[i], v_lo, v_hi), "%.1f") << " ";
    }
    body_ << "\"/>\n";
  }

  void add_axis_labels(int panel, double v_lo, double v_hi) {
    body_ << "<text x=\"4\" y=\"" << panel_top(panel) + 22
          << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#666\">"
          << format_double(v_hi, "%.3g") << "</text>\n"
          << "<text x=\"4\" y=\"" << panel_top(panel) + ph_ - 6
          << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#666\">"
          << format_double(v_lo, "%.3g") << "</text>\n";
  }

  void add_spectrogram(int panel, const SpecGrid& g, double t_lo, double t_hi) {
    const double top = panel_top(panel) + 16;
    const double bot = panel_top(panel) + ph_ - 6;
    const int bands = g.cells.empty() ? 0 : static_cast<int>(g.cells[0].size());
    const double cell_h = (bot - top) / std::max(bands, 1);
    for (std::size_t c = 0; c < g.cells.size(); ++c) {
      const double x0 = c == 0 ? kLeft : px(g.t[c - 1], t_lo, t_hi);
      const double x1 = c + 1 < g.t.size()
                            ? px(g.t[c + 1], t_lo, t_hi)
                            : static_cast<double>(w_ - 20);
      for (int b = 0; b < bands; ++b) {
        const double a =
            (g.cells[c][b] - g.db_lo) / std::max(g.db_hi - g.db_lo, 1e-12);
        const int shade = 255 - static_cast<int>(std::lround(a * 255));
        // Band 0 (DC) sits at the bottom.
        const double y = bot - (b + 1) * cell_h;
        body_ << "<rect x=\"" << format_double(x0, "%.1f") << "\" y=\""
              << format_double(y, "%.1f") << "\" width=\""
              << format_double(std::max(x1 - x0, 0.5) + 0.5, "%.1f")
              << "\" height=\"" << format_double(cell_h + 0.5, "%.1f")
              << "\" fill=\"rgb(" << shade << "," << shade << "," << shade
              << ")\"/>\n";
      }
    }
  }

  void add_time_axis(int panel, double t_lo, double t_hi) {
    const double y = panel_top(panel) + ph_ - 6;
    for (int i = 0; i <= 5; ++i) {
      const double t = t_lo + (t_hi - t_lo) * i / 5.0;
      body_ << "<text x=\"" << format_double(px(t, t_lo, t_hi), "%.1f")
            << "\" y=\"" << y + 14
            << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#666\" "
               "text-anchor=\"middle\">"
            << format_double(t, "%.2f") << "s</text>\n";
    }
  }

  std::string finish() {
    body_ << "</svg>\n";
    return body_.str();
  }

 private:
  static constexpr int kGap = 10, kTop = 8, kLeft = 46;
  int w_, ph_, n_;
  std::ostringstream body_;
};

int run_trace(const TraceOpts& o) {
  const auto cfg = effective_config(o.config);
  ensure_run_dir(o.run_dir, o.force);
  const auto manifest = read_manifest(o.manifest, o.allow_egg);
  const auto it = std::find_if(manifest.entries.begin(), manifest.entries.end(),
                               [&](const ManifestEntry& e) {
                                 return e.utterance_id == o.utterance;
                               });
  if (it == manifest.entries.end()) {
    throw InvalidArgument("utterance '" + o.utterance +
                          "' not found in manifest");
  }
  const auto rec = load_record(o.manifest, *it);
  const auto raw = prepare_targets(rec);
  const auto mixed = mix_peak_normalize(rec.oral, rec.nasal, 0.9);
  const auto m16 = to_model_rate(mixed);

  // Both models score the same feature stack, so they must agree on the
  // frontend that produces it.
  auto base_ck = load_checkpoint(o.checkpoint);
  const auto frontend = frontend_for_checkpoint(base_ck, cfg, !o.config.empty());
  std::optional<LoadedCheckpoint> ft_ck;
  if (!o.finetuned.empty()) {
    ft_ck = load_checkpoint(o.finetuned);
    const bool seed_clash = ft_ck->frontend_seed &&
                            *ft_ck->frontend_seed != frontend.seed;
    if (ft_ck->params.config.feature_dim != base_ck.params.config.feature_dim ||
        ft_ck->params.config.fusion_layers !=
            base_ck.params.config.fusion_layers ||
        seed_clash) {
      throw ShapeError(
          "trace: the two checkpoints were trained with different frontends");
    }
  }
  const auto stack = extract_feature_stack(m16, frontend);

  const auto vp_pred = predict_vp(base_ck, stack);
  std::optional<std::vector<double>> vp_ft;
  if (ft_ck) vp_ft = predict_vp(*ft_ck, stack);

  // trace.csv: ground truth vs prediction(s) on the common 100 Hz grid.
  std::size_t n = std::min(raw.vp.size(), vp_pred.size());
  if (vp_ft) n = std::min(n, vp_ft->size());
  std::ostringstream tr;
  tr << "t_s,nasalance_gt,vp_pred" << (vp_ft ? ",vp_pred_ft" : "") << "\n";
  for (std::size_t i = 0; i < n; ++i) {
    tr << format_double(i / 100.0) << "," << format_double(raw.vp.values[i])
       << "," << format_double(vp_pred[i]);
    if (vp_ft) tr << "," << format_double((*vp_ft)[i]);
    tr << "\n";
  }
  write_text(path_in(o.run_dir, "trace.csv"), tr.str());

  // The six figure panels.
  const double dur = rec.oral.duration_s();
  const auto cutoff = profile_cutoff_hz(rec.profile);
  const auto oral_env =
      resample_to_100hz(rms_envelope(highpass(rec.oral, cutoff), 25.0));
  const auto nasal_env =
      resample_to_100hz(rms_envelope(highpass(rec.nasal, cutoff), 25.0));

  std::vector<FigureSeries> series;
  {
    FigureSeries wf{"waveform", "combined", {}, {}, {}};
    const std::size_t stride = std::max<std::size_t>(1, mixed.size() / 2000);
    for (std::size_t i = 0; i < mixed.size(); i += stride) {
      wf.t.push_back(i / mixed.sample_rate_hz);
      wf.k.push_back(0);
      wf.v.push_back(mixed.samples[i]);
    }
    series.push_back(std::move(wf));
  }
  const auto grid = spectrogram_grid(m16, 128, 48);
  {
    FigureSeries sp{"spectrogram", "log_magnitude_db", {}, {}, {}};
    for (std::size_t c = 0; c < grid.cells.size(); ++c) {
      for (std::size_t b = 0; b < grid.cells[c].size(); ++b) {
        sp.t.push_back(grid.t[c]);
        sp.k.push_back(static_cast<double>(b));
        sp.v.push_back(grid.cells[c][b]);
      }
    }
    series.push_back(std::move(sp));
  }
  const auto add_series100 = [&](const std::string& panel,
                                 const std::string& name,
                                 const std::vector<double>& vals) {
    FigureSeries s{panel, name, {}, {}, {}};
    for (std::size_t i = 0; i < vals.size(); ++i) {
      s.t.push_back(i / 100.0);
      s.k.push_back(0);
      s.v.push_back(vals[i]);
    }
    series.push_back(std::move(s));
  };
  add_series100("oral_envelope", "oral", oral_env.values);
  add_series100("nasal_envelope", "nasal", nasal_env.values);
  add_series100("nasalance_gt", "ground_truth", raw.vp.values);
  add_series100("nasalance_pred", "predicted", vp_pred);
  if (vp_ft) add_series100("nasalance_pred", "predicted_finetuned", *vp_ft);

  std::ostringstream fig;
  fig << "panel,series,t_s,k,value\n";
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.t.size(); ++i) {
      fig << s.panel << "," << s.series << "," << format_double(s.t[i], "%.6g")
          << "," << format_double(s.k[i], "%g") << ","
          << format_double(s.v[i], "%.6g") << "\n";
    }
  }
  write_text(path_in(o.run_dir, "figure.csv"), fig.str());

  // trace.svg
  SvgFigure svg(960, 120, 6);
  const auto minmax = [](const std::vector<double>& v) {
    auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    double a = *lo, b = *hi;
    if (b <= a) b = a + 1e-9;
    const double pad = 0.05 * (b - a);
    return std::pair<double, double>{a - pad, b + pad};
  };
  const auto& wf = series[0];
  const auto [w_lo, w_hi] = minmax(wf.v);
  svg.add_title(0, "combined waveform (oral + nasal, peak 0.9)");
  svg.add_polyline(0, wf.t, wf.v, 0, dur, w_lo, w_hi, "#4477aa");
  svg.add_axis_labels(0, w_lo, w_hi);

  svg.add_title(1, "spectrogram (25 ms / 10 ms, log magnitude)");
  svg.add_spectrogram(1, grid, 0, dur);

  const auto [oe_lo, oe_hi] = minmax(oral_env.values);
  svg.add_title(2, "oral envelope (25 ms RMS)");
  {
    std::vector<double> t(oral_env.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = i / 100.0;
    svg.add_polyline(2, t, oral_env.values, 0, dur, 0, oe_hi, "#228833");
    svg.add_axis_labels(2, 0, oe_hi);
    const auto [ne_lo, ne_hi] = minmax(nasal_env.values);
    (void)ne_lo;
    (void)oe_lo;
    svg.add_title(3, "nasal envelope (25 ms RMS)");
    std::vector<double> tn(nasal_env.size());
    for (std::size_t i = 0; i < tn.size(); ++i) tn[i] = i / 100.0;
    svg.add_polyline(3, tn, nasal_env.values, 0, dur, 0, ne_hi, "#cc6677");
    svg.add_axis_labels(3, 0, ne_hi);
  }
  {
    std::vector<double> t(raw.vp.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = i / 100.0;
    svg.add_title(4, "ground-truth nasalance");
    svg.add_polyline(4, t, raw.vp.values, 0, dur, 0, 1, "#000000");
    svg.add_axis_labels(4, 0, 1);
  }
  {
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = i / 100.0;
    std::vector<double> gt(raw.vp.values.begin(), raw.vp.values.begin() + n);
    std::vector<double> pd(vp_pred.begin(), vp_pred.begin() + n);
    svg.add_title(5, vp_ft ? "predicted nasalance (red: base, blue: fine-tuned; "
                             "gray: ground truth)"
                           : "predicted nasalance (red; gray: ground truth)");
    svg.add_polyline(5, t, gt, 0, dur, 0, 1, "#bbbbbb");
    svg.add_polyline(5, t, pd, 0, dur, 0, 1, "#ee6677");
    if (vp_ft) {
      std::vector<double> ft(vp_ft->begin(), vp_ft->begin() + n);
      svg.add_polyline(5, t, ft, 0, dur, 0, 1, "#4477aa");
    }
    svg.add_axis_labels(5, 0, 1);
    svg.add_time_axis(5, 0, dur);
  }
  write_text(path_in(o.run_dir, "trace.svg"), svg.finish());
  write_repro_record(o.run_dir, "trace", g_argv, 0,
                     o.config.empty() ? "" : serialize_config(cfg));
  std::cout << "trace for " << o.utterance << ":\n"
            << "  " << path_in(o.run_dir, "trace.csv") << "\n"
            << "  " << path_in(o.run_dir, "figure.csv") << "\n"
            << "  " << path_in(o.run_dir, "trace.svg") << "\n";
  return 0;
}

void add_common(CLI::App* cmd, std::string* manifest, std::string* run_dir,
                bool* force, bool* allow_egg, std::string* config = nullptr) {
  cmd->add_option("--manifest", *manifest, "corpus manifest (JSONL)")
      ->required();
  cmd->add_option("--run-dir", *run_dir, "output directory for this run");
  cmd->add_flag("--force", *force, "reuse a non-empty run directory");
  cmd->add_flag("--allow-egg", *allow_egg,
                "accept child-profile entries that carry an EGG channel");
  if (config) {
    cmd->add_option("--config", *config, "pipeline config file (nasinv-config v1)");
  }
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) g_argv.emplace_back(argv[i]);

  CLI::App app{"acoustic-to-nasalance inversion pipeline"};
  app.require_subcommand(1);

  SynthOpts syn;
  auto* c_syn = app.add_subcommand("synth", "generate a synthetic corpus");
  c_syn->add_option("--out", syn.out, "output corpus directory")->required();
  c_syn->add_option("--speakers", syn.spec.n_speakers, "number of speakers");
  c_syn->add_option("--utterances", syn.spec.n_utterances,
                    "utterances per speaker");
  c_syn->add_option("--min-dur", syn.spec.min_duration_s, "seconds");
  c_syn->add_option("--max-dur", syn.spec.max_duration_s, "seconds");
  c_syn->add_option("--rate", syn.spec.sample_rate, "sample rate, Hz");
  c_syn->add_option("--seed", syn.spec.seed, "corpus seed");
  c_syn->add_option("--profile", syn.profile, "adult|child")
      ->check(CLI::IsMember({"adult", "child"}));
  c_syn->add_flag("--no-egg", syn.no_egg, "skip EGG channels");
  c_syn->add_option("--carrier-scale", syn.spec.carrier_scale,
                    "scales all carrier frequencies (domain shift)");
  c_syn->add_option("--nasal-bias", syn.spec.nasal_bias,
                    "shifts the nasalance curves (domain shift)");
  c_syn->add_option("--noise-db", syn.spec.noise_db, "noise floor, dBFS");
  auto* fixed_opt = c_syn->add_option("--fixed-nasalance", syn.fixed,
                                      "constant plateau in [0,1]")
                        ->check(CLI::Range(0.0, 1.0));
  c_syn->add_option("--name", syn.spec.dataset_name, "dataset name");
  c_syn->add_option("--prefix", syn.spec.speaker_prefix, "speaker id prefix");
  c_syn->add_flag("--force", syn.force, "reuse a non-empty directory");

  SplitOpts spl;
  auto* c_spl = app.add_subcommand("split", "compute cross-validation folds");
  c_spl->add_option("--manifest", spl.manifest, "corpus manifest (JSONL)");
  c_spl->add_option("--speakers", spl.speakers,
                    "speaker count (generates ids when no manifest)");
  c_spl->add_option("--folds", spl.folds, "number of folds");
  c_spl->add_option("--seed", spl.seed, "fold assignment seed");
  c_spl->add_option("--run-dir", spl.run_dir, "output directory");
  c_spl->add_flag("--force", spl.force, "reuse a non-empty run directory");
  c_spl->add_flag("--allow-egg", spl.allow_egg,
                  "accept child entries carrying EGG");

  PrepareOpts prep;
  auto* c_prep = app.add_subcommand(
      "prepare", "compute ground-truth target traces per utterance");
  prep.run_dir = "run-prepare";
  add_common(c_prep, &prep.manifest, &prep.run_dir, &prep.force,
             &prep.allow_egg);

  PrepareOpts feat;
  feat.run_dir = "run-features";
  auto* c_feat =
      app.add_subcommand("features", "extract feature stacks per utterance");
  add_common(c_feat, &feat.manifest, &feat.run_dir, &feat.force,
             &feat.allow_egg, &feat.config);

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train", "train a model on one fold");
  add_common(c_tr, &tr.manifest, &tr.run_dir, &tr.force, &tr.allow_egg,
             &tr.config);
  c_tr->add_option("--fold", tr.fold, "fold index to train");
  c_tr->add_option("--folds", tr.folds, "number of folds");
  c_tr->add_option("--fold-seed", tr.fold_seed, "fold assignment seed");
  auto* tr_seed = c_tr->add_option("--seed", tr.seed, "training seed override");

  TrainOpts ft;
  ft.run_dir = "run-finetune";
  auto* c_ft =
      app.add_subcommand("finetune", "continue training from a checkpoint");
  add_common(c_ft, &ft.manifest, &ft.run_dir, &ft.force, &ft.allow_egg,
             &ft.config);
  c_ft->add_option("--checkpoint", ft.checkpoint, "starting checkpoint")
      ->required();
  c_ft->add_option("--fold", ft.fold, "fold index to train");
  c_ft->add_option("--folds", ft.folds, "number of folds");
  c_ft->add_option("--fold-seed", ft.fold_seed, "fold assignment seed");
  auto* ft_seed = c_ft->add_option("--seed", ft.seed, "training seed override");

  EvalOpts ev;
  auto* c_ev = app.add_subcommand("eval", "score a checkpoint on a test set");
  add_common(c_ev, &ev.manifest, &ev.run_dir, &ev.force, &ev.allow_egg,
             &ev.config);
  c_ev->add_option("--checkpoint", ev.checkpoint, "checkpoint to score");
  c_ev->add_option("--fold", ev.fold,
                   "fold whose test speakers to score (default: everything)");
  c_ev->add_option("--folds", ev.folds, "number of folds");
  c_ev->add_option("--fold-seed", ev.fold_seed, "fold assignment seed");
  c_ev->add_flag("--echo-ground-truth", ev.echo,
                 "score a stub that predicts the ground truth itself");
  c_ev->add_flag("--append", ev.append,
                 "merge this fold's rows into an existing report.csv");

  AblateOpts ab;
  auto* c_ab =
      app.add_subcommand("ablate", "train and score the four head variants");
  add_common(c_ab, &ab.manifest, &ab.run_dir, &ab.force, &ab.allow_egg,
             &ab.config);
  c_ab->add_option("--fold", ab.fold, "fold index");
  c_ab->add_option("--folds", ab.folds, "number of folds");
  c_ab->add_option("--fold-seed", ab.fold_seed, "fold assignment seed");
  auto* ab_seed =
      c_ab->add_option("--seed", ab.seed, "model+training seed override");

  TraceOpts trc;
  auto* c_trc = app.add_subcommand(
      "trace", "per-utterance figure data (CSV + SVG) from a checkpoint");
  add_common(c_trc, &trc.manifest, &trc.run_dir, &trc.force, &trc.allow_egg,
             &trc.config);
  c_trc->add_option("--utterance", trc.utterance, "utterance id")->required();
  c_trc->add_option("--checkpoint", trc.checkpoint, "model checkpoint")
      ->required();
  c_trc->add_option("--finetuned", trc.finetuned,
                    "optional fine-tuned checkpoint for a second curve");

  CLI11_PARSE(app, argc, argv);

  try {
    syn.has_fixed = fixed_opt->count() > 0;
    tr.has_seed = tr_seed->count() > 0;
    ft.has_seed = ft_seed->count() > 0;
    ab.has_seed = ab_seed->count() > 0;
    if (app.got_subcommand(c_syn)) return run_synth(syn);
    if (app.got_subcommand(c_spl)) return run_split(spl);
    if (app.got_subcommand(c_prep)) return run_prepare(prep);
    if (app.got_subcommand(c_feat)) return run_features(feat);
    if (app.got_subcommand(c_tr)) return run_train(tr);
    if (app.got_subcommand(c_ft)) return run_finetune(ft);
    if (app.got_subcommand(c_ev)) return run_eval(ev);
    if (app.got_subcommand(c_ab)) return run_ablate(ab);
    if (app.got_subcommand(c_trc)) return run_trace(trc);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
