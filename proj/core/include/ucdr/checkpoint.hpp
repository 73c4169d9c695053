#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ucdr/pipeline.hpp"
#include "ucdr/queues.hpp"
#include "ucdr/tensor.hpp"

namespace ucdr {

// Scalar training-loop state carried across interrupt/resume.
struct TrainState {
  int phase = 1;
  std::int64_t epochs_completed = 0;
  double best_score = -1.0;
  std::int64_t best_epoch = -1;
  int epochs_since_improve = 0;
  std::int64_t adam_step = 0;
  bool finished = false;
};

// One class queue's stored sequence stamps; features live in a shared tensor
// section.
struct QueueClassSnapshot {
  int class_id = 0;
  std::vector<std::uint64_t> seqs;
};

// Everything a training run needs to continue exactly where it stopped, or
// an evaluation needs to rebuild the model. Encoders are reconstructed from
// the seeds echoed in `model`; only trainable and stateful tensors are
// stored.
struct Checkpoint {
  ModelConfig model;
  std::vector<int> seen_classes;
  std::vector<int> seen_domains;
  std::uint64_t run_seed = 0;
  TrainState state;

  Tensor<float> class_prompts, domain_prompts;
  Tensor<float> class_prompts_momentum, domain_prompts_momentum;
  Tensor<float> projection_w, projection_b;
  Tensor<float> domain_context;
  std::vector<Tensor<float>> tpg_params;  // fixed order; phase 2 only

  std::vector<Tensor<float>> adam_m, adam_v;  // aligned with the phase's parameter list

  // Momentum feature queues (phase 1 only): stamps per class plus one
  // [total x E] feature tensor in class order, oldest first.
  std::size_t queue_capacity = 0;
  std::uint64_t queue_next_seq = 0;
  std::vector<QueueClassSnapshot> queue_classes;
  Tensor<float> queue_features;

  bool has_queues() const { return queue_capacity > 0; }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the full model: encoders from seeds, trainable tensors copied
// from the checkpoint.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

// Snapshot of a live model (prompt bank, momentum copies, domain context,
// and for phase 2 the generator).
Checkpoint checkpoint_from_model(const Model<float>& model, std::uint64_t run_seed, const TrainState& state);

// Queue contents round-trip.
void store_queues(Checkpoint& ckpt, const ClassQueueSet<float>& queues);
ClassQueueSet<float> restore_queues(const Checkpoint& ckpt);

// FNV-1a over the serialized bytes; reports use it to pin provenance.
std::uint64_t checkpoint_file_hash(const std::string& path);

}  // namespace ucdr
