// SPDX-License-Identifier: Apache-2.0
#include "nasinv/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <set>
#include <sstream>

#include "nasinv/errors.hpp"
#include "nasinv/wav.hpp"

namespace nasinv {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::string profile_name(Profile p) {
  return p == Profile::kAdult ? "adult" : "child";
}

Profile profile_from_name(const std::string& s, const std::string& where) {
  if (s == "adult") return Profile::kAdult;
  if (s == "child") return Profile::kChild;
  throw FormatError("manifest: unknown profile '" + s + "' " + where);
}

}  // namespace

std::string resolve_manifest_path(const std::string& manifest_path,
                                  const std::string& entry_path) {
  const fs::path p(entry_path);
  if (p.is_absolute()) return entry_path;
  return (fs::path(manifest_path).parent_path() / p).string();
}

CorpusManifest read_manifest(const std::string& path, bool allow_child_egg,
                             bool check_files) {
  std::ifstream f(path);
  if (!f) throw IoError("read_manifest: cannot open " + path);
  CorpusManifest m;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("read_manifest: bad JSON on line " +
                        std::to_string(line_no) + ": " + e.what());
    }
    const std::string where = "(line " + std::to_string(line_no) + ")";
    if (j.contains("dataset_name") && !j.contains("utterance_id")) {
      m.dataset_name = j.at("dataset_name").get<std::string>();
      continue;
    }
    try {
      ManifestEntry e;
      e.utterance_id = j.at("utterance_id").get<std::string>();
      e.speaker_id = j.at("speaker_id").get<std::string>();
      e.profile = profile_from_name(j.at("profile").get<std::string>(), where);
      e.oral_path = j.at("oral_path").get<std::string>();
      e.nasal_path = j.at("nasal_path").get<std::string>();
      if (j.contains("egg_path")) e.egg_path = j["egg_path"].get<std::string>();
      if (j.contains("language")) e.language = j["language"].get<std::string>();
      if (j.contains("transcript")) {
        e.transcript = j["transcript"].get<std::string>();
      }
      if (!ids.insert(e.utterance_id).second) {
        throw FormatError("read_manifest: duplicate utterance id '" +
                          e.utterance_id + "' " + where);
      }
      if (e.profile == Profile::kChild && e.egg_path && !allow_child_egg) {
        throw InvalidArgument(
            "read_manifest: child entry '" + e.utterance_id +
            "' lists an EGG channel; pass --allow-egg to accept it");
      }
      m.entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw FormatError("read_manifest: missing or mistyped field " + where +
                        ": " + e.what());
    }
  }
  if (check_files) {
    for (const auto& e : m.entries) {
      for (const std::string* p : {&e.oral_path, &e.nasal_path}) {
        if (!fs::exists(resolve_manifest_path(path, *p))) {
          throw IoError("read_manifest: missing audio file " + *p +
                        " for utterance " + e.utterance_id);
        }
      }
      if (e.egg_path && !fs::exists(resolve_manifest_path(path, *e.egg_path))) {
        throw IoError("read_manifest: missing EGG file " + *e.egg_path +
                      " for utterance " + e.utterance_id);
      }
    }
  }
  return m;
}

void write_manifest(const std::string& path, const CorpusManifest& manifest) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_manifest: cannot open " + path);
  f << json{{"dataset_name", manifest.dataset_name}}.dump() << "\n";
  for (const auto& e : manifest.entries) {
    json j = {{"utterance_id", e.utterance_id},
              {"speaker_id", e.speaker_id},
              {"profile", profile_name(e.profile)},
              {"oral_path", e.oral_path},
              {"nasal_path", e.nasal_path}};
    if (e.egg_path) j["egg_path"] = *e.egg_path;
    if (e.language) j["language"] = *e.language;
    if (e.transcript) j["transcript"] = *e.transcript;
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("write_manifest: short write to " + path);
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

struct SpeakerTraits {
  double carrier_hz = 240.0;  // oral carrier; nasal = 4/3 of it
  double nasal_offset = 0.0;
};

SpeakerTraits speaker_traits(const SyntheticSpec& spec, int speaker) {
  std::mt19937_64 rng(spec.seed ^ (kGolden * static_cast<std::uint64_t>(
                                       speaker + 1)));
  std::uniform_real_distribution<double> jitter(-5.0, 5.0);
  std::uniform_real_distribution<double> offset(-0.15, 0.15);
  SpeakerTraits t;
  const double frac =
      spec.n_speakers > 1
          ? static_cast<double>(speaker) / (spec.n_speakers - 1)
          : 0.5;
  t.carrier_hz = (200.0 + 80.0 * frac + jitter(rng)) * spec.carrier_scale;
  t.nasal_offset = offset(rng);
  return t;
}

struct UtteranceAudio {
  Signal oral, nasal, egg;
};

UtteranceAudio synthesize_utterance(const SyntheticSpec& spec,
                                    const SpeakerTraits& traits, int speaker,
                                    int utterance) {
  std::mt19937_64 rng(spec.seed ^
                      (kGolden * (static_cast<std::uint64_t>(speaker) * 1000u +
                                  static_cast<std::uint64_t>(utterance) + 7u)));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  const double duration =
      spec.min_duration_s +
      (spec.max_duration_s - spec.min_duration_s) * u01(rng);
  const std::size_t n =
      static_cast<std::size_t>(std::llround(duration * spec.sample_rate));
  const double dt = 1.0 / spec.sample_rate;

  // Nasalance curve: a smooth random mixture squashed into (0, 1), or the
  // programmed plateau.
  double nf[3], na[3], np[3];
  for (int k = 0; k < 3; ++k) {
    nf[k] = 0.3 + 1.2 * u01(rng);
    na[k] = 0.4 + 0.5 * u01(rng);
    np[k] = kTwoPi * u01(rng);
  }
  const double phase_e = kTwoPi * u01(rng);
  const double phase_v = kTwoPi * u01(rng);
  const double phase_o = kTwoPi * u01(rng);
  const double phase_n = kTwoPi * u01(rng);
  const double phase_g = kTwoPi * u01(rng);
  const double phase_genv = kTwoPi * u01(rng);

  // Optional brief silence gap in the middle of the utterance. Plateau
  // corpora stay gap-free: they serve as calibration rulers and a gap would
  // leave mid-utterance frames where both channels are pure noise floor
  // (ratio drifts toward 0.5 without tripping the silence flag).
  const bool has_gap = !spec.fixed_nasalance && u01(rng) < 0.3;
  const double gap_start = duration * (0.25 + 0.4 * u01(rng));
  const double gap_len = 0.25;
  const double gap_ramp = 0.03;

  const double noise_amp = std::pow(10.0, spec.noise_db / 20.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> oral(n), nasal(n), egg(n);
  double phi_oral = phase_o, phi_nasal = phase_n, phi_egg = phase_g;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;

    double nas;
    if (spec.fixed_nasalance) {
      // Programmed plateaus are absolute calibration values: no speaker
      // jitter, no domain bias.
      nas = std::clamp(*spec.fixed_nasalance, 0.0, 1.0);
    } else {
      double mix = 0.0;
      for (int k = 0; k < 3; ++k) {
        mix += na[k] * std::sin(kTwoPi * nf[k] * t + np[k]);
      }
      nas = 0.5 + 0.45 * std::tanh(mix);
      nas = std::clamp(nas + spec.nasal_bias + traits.nasal_offset, 0.03, 0.97);
    }

    double env = 0.5 * (1.0 + 0.3 * std::sin(kTwoPi * 3.0 * t + phase_e));
    if (has_gap) {
      const double a = gap_start, b = gap_start + gap_len;
      if (t > a - gap_ramp && t < b + gap_ramp) {
        double g = 0.0;
        if (t < a) g = (a - t) / gap_ramp;
        if (t > b) g = (t - b) / gap_ramp;
        env *= 0.5 * (1.0 - std::cos(3.14159265358979323846 * g));
      }
    }

    // Shared vibrato keeps the oral:nasal carrier ratio (and therefore the
    // common fundamental) intact while the pitch moves.
    const double vib = 1.0 + 0.03 * std::sin(kTwoPi * 1.3 * t + phase_v);
    phi_oral += kTwoPi * traits.carrier_hz * vib * dt;
    phi_nasal += kTwoPi * (traits.carrier_hz * 4.0 / 3.0) * vib * dt;
    phi_egg += kTwoPi * (traits.carrier_hz / 3.0) * vib * dt;

    const double root2 = 1.4142135623730951;
    oral[i] = root2 * (1.0 - nas) * env * std::sin(phi_oral) +
              noise_amp * gauss(rng);
    nasal[i] = root2 * nas * env * std::sin(phi_nasal) + noise_amp * gauss(rng);
    const double egg_env =
        (0.6 + 0.4 * std::sin(kTwoPi * 0.5 * t + phase_genv)) * env;
    egg[i] = egg_env * std::sin(phi_egg);
  }

  UtteranceAudio out;
  out.oral = Signal(std::move(oral), spec.sample_rate);
  out.nasal = Signal(std::move(nasal), spec.sample_rate);
  out.egg = Signal(std::move(egg), spec.sample_rate);
  return out;
}

}  // namespace

CorpusManifest make_synthetic_corpus(const std::string& out_dir,
                                     const SyntheticSpec& spec) {
  if (spec.n_speakers < 1 || spec.n_utterances < 1 ||
      spec.min_duration_s <= 0.0 ||
      spec.max_duration_s < spec.min_duration_s || spec.sample_rate <= 0.0) {
    throw InvalidArgument("make_synthetic_corpus: bad spec");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw IoError("make_synthetic_corpus: cannot create " + out_dir);
  }

  const bool egg = spec.with_egg && spec.profile == Profile::kAdult;
  CorpusManifest manifest;
  manifest.dataset_name = spec.dataset_name;
  for (int s = 0; s < spec.n_speakers; ++s) {
    const auto traits = speaker_traits(spec, s);
    char spk[32];
    std::snprintf(spk, sizeof(spk), "%s%02d", spec.speaker_prefix.c_str(), s);
    for (int u = 0; u < spec.n_utterances; ++u) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s_u%03d", spk, u);
      const auto audio = synthesize_utterance(spec, traits, s, u);

      ManifestEntry e;
      e.utterance_id = id;
      e.speaker_id = spk;
      e.profile = spec.profile;
      e.oral_path = std::string(id) + "_oral.wav";
      e.nasal_path = std::string(id) + "_nasal.wav";
      write_wav((fs::path(out_dir) / e.oral_path).string(), {audio.oral},
                WavEncoding::kFloat32);
      write_wav((fs::path(out_dir) / e.nasal_path).string(), {audio.nasal},
                WavEncoding::kFloat32);
      if (egg) {
        e.egg_path = std::string(id) + "_egg.wav";
        write_wav((fs::path(out_dir) / *e.egg_path).string(), {audio.egg},
                  WavEncoding::kFloat32);
      }
      manifest.entries.push_back(std::move(e));
    }
  }
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), manifest);
  return manifest;
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------
namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_heads(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace

PipelineConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "nasinv-config v1") {
    throw FormatError("config: first line must be 'nasinv-config v1'");
  }
  PipelineConfig c;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config: line " + std::to_string(line_no) +
                        " is not 'key = value'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    try {
      if (key == "mels") {
        c.frontend.n_mels = std::stoi(value);
        c.model.feature_dim = c.frontend.n_mels;
      } else if (key == "feature_layers") {
        c.frontend.n_layers = std::stoi(value);
        c.model.fusion_layers = c.frontend.n_layers;
      } else if (key == "frontend_seed") {
        c.frontend.seed = std::stoull(value);
      } else if (key == "hidden") {
        c.model.hidden = std::stoi(value);
      } else if (key == "dense") {
        c.model.dense = std::stoi(value);
      } else if (key == "dropout") {
        c.model.dropout_p = std::stod(value);
      } else if (key == "heads") {
        c.model.heads = split_heads(value);
      } else if (key == "model_seed") {
        c.model.seed = std::stoull(value);
      } else if (key == "epochs") {
        c.train.max_epochs = std::stoi(value);
      } else if (key == "batch") {
        c.train.batch_size = std::stoi(value);
      } else if (key == "lr") {
        c.train.lr = std::stod(value);
      } else if (key == "alpha") {
        c.train.alpha = std::stod(value);
      } else if (key == "patience") {
        c.train.early_stop_patience = std::stoi(value);
      } else if (key == "train_seed") {
        c.train.seed = std::stoull(value);
      } else {
        throw FormatError("config: unknown key '" + key + "' on line " +
                          std::to_string(line_no));
      }
    } catch (const std::invalid_argument&) {
      throw FormatError("config: bad value for '" + key + "' on line " +
                        std::to_string(line_no));
    } catch (const std::out_of_range&) {
      throw FormatError("config: value out of range for '" + key +
                        "' on line " + std::to_string(line_no));
    }
  }
  return c;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const PipelineConfig& c) {
  std::ostringstream out;
  out << "nasinv-config v1\n";
  out << "mels = " << c.frontend.n_mels << "\n";
  out << "feature_layers = " << c.frontend.n_layers << "\n";
  out << "frontend_seed = " << c.frontend.seed << "\n";
  out << "hidden = " << c.model.hidden << "\n";
  out << "dense = " << c.model.dense << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", c.model.dropout_p);
  out << "dropout = " << buf << "\n";
  out << "heads = ";
  for (std::size_t i = 0; i < c.model.heads.size(); ++i) {
    out << (i ? "," : "") << c.model.heads[i];
  }
  out << "\n";
  out << "model_seed = " << c.model.seed << "\n";
  out << "epochs = " << c.train.max_epochs << "\n";
  out << "batch = " << c.train.batch_size << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", c.train.lr);
  out << "lr = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", c.train.alpha);
  out << "alpha = " << buf << "\n";
  out << "patience = " << c.train.early_stop_patience << "\n";
  out << "train_seed = " << c.train.seed << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Run directories and repro records
// ---------------------------------------------------------------------------

void ensure_run_dir(const std::string& path, bool force) {
  if (fs::exists(path)) {
    if (!fs::is_directory(path)) {
      throw RunExists("run directory path exists and is not a directory: " +
                      path);
    }
    if (!fs::is_empty(path) && !force) {
      throw RunExists("run directory " + path +
                      " is not empty; pass --force to reuse it");
    }
  }
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec || !fs::is_directory(path)) {
    throw IoError("cannot create run directory " + path);
  }
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_repro_record(const std::string& run_dir, const std::string& command,
                        const std::vector<std::string>& args,
                        std::uint64_t seed, const std::string& config_text) {
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_text)));
  json j = {{"tool", "nasinv"},
            {"version", "1.0.0"},
            {"command", command},
            {"args", args},
            {"seed", std::to_string(seed)},
            {"config_fnv1a64", hash}};
  const auto path = (fs::path(run_dir) / "repro.json").string();
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_repro_record: cannot open " + path);
  f << j.dump(2) << "\n";
}

}  // namespace nasinv
