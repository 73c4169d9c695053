#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ucdr/dataset.hpp"
#include "ucdr/pipeline.hpp"
#include "ucdr/train.hpp"

namespace ucdr {

// Free architecture knobs. Widths that must agree across components (token
// width, embedding width, prompt width, vocabulary sizes) are derived in
// resolve() so a config file cannot describe a mismatched model.
struct ModelSpec {
  int embed_dim = 32;
  int image_blocks = 2;
  int image_heads = 4;
  int image_ffn_hidden = 64;
  int text_dim = 32;
  int text_blocks = 2;
  int text_heads = 4;
  int text_ffn_hidden = 64;
  int context_tokens = 2;
  int prompt_dim = 16;
  double momentum_rate = 1e-3;
  int tpg_hidden = 64;
  int tpg_key_dim = 16;
};

struct SplitSpec {
  Protocol protocol = Protocol::kUcdr;
  std::optional<int> holdout_domain;  // null picks the highest domain id
  double holdout_class_fraction = 1.0 / 3.0;
  GalleryMode gallery_mode = GalleryMode::kUnseenOnly;
};

struct TrainSpec {
  int batch_size = 64;
  int max_epochs = 80;
  int early_stop_patience = 5;
  double lr_initial = 1e-2;
  double lr_final = 1e-4;
  int lr_decay_epochs = 40;
  int queue_capacity = 20;
  int val_queries = 200;
};

struct LossSpec {
  double margin = 0.5;
  double temperature = 0.07;
};

struct AblationSpec {
  bool use_mask = true;
  bool use_tst = true;
  int triplet_pairs = 2;
  bool use_momentum = true;
  bool crossed_tpg_pairing = false;
  bool one_phase_mode = false;
};

struct PathSpec {
  std::string data_dir = "data";
  std::string run_dir = "run";
};

// One JSON document that drives the whole pipeline. `seed` is the only seed
// a run ever specifies; every component stream is derived from it.
struct RunConfig {
  int schema_version = 1;
  std::uint64_t seed = 1;
  PathSpec paths;
  GeneratorConfig data;  // data.seed is derived, never read from the file
  SplitSpec split;
  ModelSpec model;
  TrainSpec phase1;
  // The generator needs only a brief calibration; longer schedules drift it
  // toward the seen classes and lose the transfer it exists to provide.
  TrainSpec phase2 = {.batch_size = 32, .max_epochs = 2, .early_stop_patience = 2, .lr_initial = 5e-3};
  LossSpec loss;
  std::vector<int> metric_ks{10, 50};
  AblationSpec ablation;
};

// Fully wired component configs with all cross-field constraints applied.
struct ResolvedRun {
  GeneratorConfig data;
  ModelConfig model;
  TrainConfig phase1;
  TrainConfig phase2;
  SplitSpec split;
  std::vector<int> metric_ks;
  bool one_phase_mode = false;
};

// Stateless mixer for component seed streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

// Validates every field and cross-field constraint; throws ConfigError.
void validate(const RunConfig& cfg);

// Validates and expands into per-component configs.
ResolvedRun resolve(const RunConfig& cfg);

// Parses a JSON document. Missing keys keep their defaults; unknown keys
// anywhere in the tree are rejected with ConfigError. The result is
// validated before it is returned.
RunConfig parse_run_config(const std::string& json_text);

// Reads a config file; IoError when unreadable, ConfigError when invalid.
RunConfig load_run_config(const std::string& path);

// Deterministic echo of the effective config: every key present, sorted,
// two-space indent, trailing newline. parse_run_config round-trips it.
std::string run_config_to_json(const RunConfig& cfg);

void save_run_config(const std::string& path, const RunConfig& cfg);

// UCDR_SEED environment override; empty when unset. Malformed values throw
// ConfigError rather than being ignored.
std::optional<std::uint64_t> env_seed_override();

}  // namespace ucdr
