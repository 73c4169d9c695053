#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ucdr/adam.hpp"
#include "ucdr/checkpoint.hpp"
#include "ucdr/dataset.hpp"
#include "ucdr/losses.hpp"
#include "ucdr/pipeline.hpp"

namespace ucdr {

struct TrainConfig {
  int phase = 1;
  int batch_size = 64;
  int max_epochs = 50;
  int early_stop_patience = 2;  // epochs without a strictly better score
  double lr_initial = 1e-3;
  double lr_final = 1e-6;
  int lr_decay_epochs = 20;  // geometric decay horizon; 0 holds lr_initial
  LossConfig<float> loss;
  AdamConfig adam;
  std::uint64_t seed = 1;
  int queue_capacity = 20;     // phase 1: per-class feature queue depth
  bool use_momentum = true;    // phase 1: slow prompts feed the queues
  bool use_mask = true;        // phase 2: hide each sample's own rows
  int val_queries = 200;       // cap on validation query count (phase 1)
  std::vector<int> metric_ks{10, 50};
  int workers = 1;             // validation embedding threads
  int stop_after_epochs = 0;   // > 0 pauses this invocation after that many epochs
  std::string checkpoint_dir;  // empty skips checkpoint and log files
  bool verbose = false;        // echo epoch lines to stdout
};

void validate(const TrainConfig& cfg);

// Geometric schedule from lr_initial down to lr_final across
// lr_decay_epochs, held constant afterwards.
double learning_rate_at(const TrainConfig& cfg, std::int64_t epoch);

struct EpochLog {
  int phase = 1;
  std::int64_t epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_triplet = 0.0;  // zero in phase 2
  double loss_contrastive = 0.0;
  double val_score = 0.0;  // validation mAP at metric_ks[0]
  double best_score = 0.0;
  int epochs_since_improve = 0;
  bool improved = false;
};

// One line of deterministic JSON; no timestamps, so logs replay byte-equal.
std::string to_json_line(const EpochLog& log);

struct TrainResult {
  TrainState state;
  std::vector<EpochLog> epochs;  // epochs run by this invocation only
  std::string last_checkpoint;   // empty without a checkpoint_dir
  std::string best_checkpoint;
  bool interrupted = false;  // stop_after_epochs fired before convergence
  std::int64_t trainable_parameters = 0;
};

// Phase 1: learns the prompt bank, the shared projection, and (with
// use_tst) the text-side domain context. Each batch runs the live prompt
// path against per-domain text features, mines hard pairs from the class
// queues as they stood at batch start, steps Adam, then pushes this batch's
// slow-path features and advances the momentum copies. Validation is a
// seen-class diagnostic: off-canonical training samples retrieve from the
// canonical-domain training pool under the sample's own prompt rows.
//
// Resuming: build `model` with model_from_checkpoint(*resume) and pass that
// checkpoint here; optimizer moments, queues, and loop counters continue
// exactly where they stopped.
TrainResult train_phase1(Model<float>& model, const Dataset& ds, const SplitAssignment& splits,
                         const TrainConfig& cfg, const Checkpoint* resume = nullptr);

// Phase 2: freezes everything from phase 1 and trains only the target
// prompt generator, aligning generated-prompt embeddings with text features
// computed once up front. With use_mask each training sample's own class
// and domain rows are hidden from the generator. Validation runs the
// protocol's unseen-class validation split under generated prompts.
TrainResult train_phase2(Model<float>& model, const Dataset& ds, const SplitAssignment& splits,
                         const TrainConfig& cfg, const Checkpoint* resume = nullptr);

}  // namespace ucdr
