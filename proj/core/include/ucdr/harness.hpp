#pragma once

#include <span>
#include <string>
#include <vector>

#include "ucdr/dataset.hpp"
#include "ucdr/retrieval.hpp"
#include "ucdr/run_config.hpp"
#include "ucdr/train.hpp"

namespace ucdr {

// One experiment-grid row: which parts of the pipeline run and under which
// toggles before the test-split evaluation.
enum class AblationRow {
  kZeroShot,  // untrained encoders, prompts ignored
  kOnePhase,  // prompt bank only, label-free mean prompt at test time
  kTwoPhase,  // full pipeline, generated prompts at test time
  kNoMask,    // two-phase without training-time row exclusion
  kNoTst,     // two-phase without trainable text context
};

std::string to_string(AblationRow row);
AblationRow ablation_row_from_string(const std::string& s);

struct RowResult {
  std::string name;
  PromptMode mode = PromptMode::kNone;
  RetrievalMetrics metrics;
  std::int64_t phase1_epochs = 0;
  std::int64_t phase2_epochs = 0;
};

// ConfigError when the dataset on disk was generated from different
// generator settings (including the derived seed) than the run expects.
void require_dataset_matches(const GeneratorConfig& expected, const DatasetManifest& manifest);

// ConfigError when a checkpoint's architecture (widths, vocabulary sizes,
// component seeds, toggles) differs from what the run config resolves to.
void require_model_matches(const ModelConfig& expected, const ModelConfig& actual);

// Applies the row's toggles to `cfg`, trains whatever the row requires with
// checkpoints under work_dir/<row>/, and evaluates the best state on the
// test split. The dataset must match cfg's generator settings.
RowResult run_ablation_row(RunConfig cfg, AblationRow row, const Dataset& ds, const std::string& work_dir,
                           int workers = 1);

std::vector<RowResult> run_ablation_grid(const RunConfig& cfg, std::span<const AblationRow> rows, const Dataset& ds,
                                         const std::string& work_dir, int workers = 1);

// Deterministic JSON for the grid (no timings): rows in call order.
std::string grid_to_json(std::span<const RowResult> rows);

// Aligned text table for terminals.
std::string grid_to_table(std::span<const RowResult> rows);

}  // namespace ucdr
