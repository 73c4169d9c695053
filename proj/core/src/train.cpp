#include "ucdr/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "config_json.hpp"
#include "ucdr/retrieval.hpp"
#include "ucdr/util.hpp"

namespace ucdr {

namespace {

constexpr std::uint64_t kSaltShuffle = 0x5bf1;
constexpr std::uint64_t kSaltVal = 0x7a1d;

struct ValSets {
  std::vector<std::int64_t> queries, gallery;
};

// Phase-1 diagnostics stay inside the training split: off-canonical samples
// query the canonical-domain pool, both with seen labels, so the per-label
// prompt rows apply.
ValSets phase1_val_sets(const Dataset& ds, const SplitAssignment& splits, const TrainConfig& cfg) {
  ValSets out;
  for (auto id : splits.ids_with(SplitTag::kTrain)) {
    const auto& rec = ds.samples[static_cast<std::size_t>(id)];
    (rec.domain_id == 0 ? out.gallery : out.queries).push_back(id);
  }
  if (out.queries.empty() || out.gallery.empty()) {
    throw ProtocolError("train: the phase-1 diagnostic needs canonical and off-canonical training samples");
  }
  auto rng = make_rng(cfg.seed, {kSaltVal});
  std::shuffle(out.queries.begin(), out.queries.end(), rng);
  if (out.queries.size() > static_cast<std::size_t>(cfg.val_queries)) {
    out.queries.resize(static_cast<std::size_t>(cfg.val_queries));
  }
  std::sort(out.queries.begin(), out.queries.end());
  return out;
}

void require_matching_resume(const Model<float>& model, const Checkpoint& resume, int phase, const char* what) {
  if (resume.state.phase != phase) {
    throw StateError(std::string(what) + ": checkpoint holds phase " + std::to_string(resume.state.phase) +
                     " state");
  }
  if (resume.state.finished) {
    throw StateError(std::string(what) + ": checkpoint marks a finished run; nothing to resume");
  }
  if (to_json(model.cfg) != to_json(resume.model) || model.seen_classes != resume.seen_classes ||
      model.seen_domains != resume.seen_domains) {
    throw StateError(std::string(what) + ": checkpoint does not describe this model");
  }
}

void restore_moments(Adam<float>& adam, const Checkpoint& resume, const char* what) {
  auto& m = adam.first_moments();
  auto& v = adam.second_moments();
  if (resume.adam_m.size() != m.size() || resume.adam_v.size() != v.size()) {
    throw FormatError(std::string(what) + ": checkpoint optimizer moments do not match the parameter list");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (resume.adam_m[i].shape() != m[i].shape() || resume.adam_v[i].shape() != v[i].shape()) {
      throw FormatError(std::string(what) + ": optimizer moment " + std::to_string(i) + " has the wrong shape");
    }
    std::copy(resume.adam_m[i].data().begin(), resume.adam_m[i].data().end(), m[i].data().begin());
    std::copy(resume.adam_v[i].data().begin(), resume.adam_v[i].data().end(), v[i].data().begin());
  }
  adam.set_steps(resume.state.adam_step);
}

void attach_moments(Checkpoint& snap, Adam<float>& adam) {
  for (const auto& t : adam.first_moments()) snap.adam_m.push_back(t.clone());
  for (const auto& t : adam.second_moments()) snap.adam_v.push_back(t.clone());
}

std::string checkpoint_path(const std::string& dir, int phase, const char* kind) {
  return (std::filesystem::path(dir) / ("phase" + std::to_string(phase) + "_" + kind + ".ucdc")).string();
}

std::ofstream open_log(const std::string& dir, int phase) {
  if (dir.empty()) return {};
  std::filesystem::create_directories(dir);
  auto path = std::filesystem::path(dir) / ("phase" + std::to_string(phase) + "_log.jsonl");
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("train: cannot open log file " + path.string());
  return out;
}

void emit_log(std::ofstream& file, bool verbose, const EpochLog& log) {
  const std::string line = to_json_line(log);
  if (file.is_open()) file << line << "\n" << std::flush;
  if (verbose) std::cout << line << std::endl;
}

double validation_score(const Model<float>& model, const Dataset& ds, const ValSets& val, PromptMode mode,
                        const TrainConfig& cfg) {
  EvaluateOptions opts;
  opts.mode = mode;
  opts.ks = cfg.metric_ks;
  opts.workers = cfg.workers;
  auto report = evaluate_ids(model, ds, val.queries, val.gallery, opts);
  return report.metrics.map_at.at(cfg.metric_ks.front());
}

// Shared epoch bookkeeping. Flags are final before any checkpoint bytes are
// written, so a paused run and an uninterrupted run emit identical files at
// every epoch boundary.
struct EpochOutcome {
  EpochLog log;
  bool improved = false;
};

EpochOutcome close_epoch(TrainState& state, const TrainConfig& cfg, std::int64_t epoch, double lr,
                         double loss_total, double loss_triplet, double loss_contrastive, double score,
                         std::int64_t adam_steps) {
  EpochOutcome out;
  out.improved = score > state.best_score;
  if (out.improved) {
    state.best_score = score;
    state.best_epoch = epoch;
    state.epochs_since_improve = 0;
  } else {
    ++state.epochs_since_improve;
  }
  state.epochs_completed = epoch + 1;
  state.adam_step = adam_steps;
  state.finished = state.epochs_since_improve >= cfg.early_stop_patience || epoch + 1 >= cfg.max_epochs;

  out.log.phase = state.phase;
  out.log.epoch = epoch;
  out.log.lr = lr;
  out.log.loss_total = loss_total;
  out.log.loss_triplet = loss_triplet;
  out.log.loss_contrastive = loss_contrastive;
  out.log.val_score = score;
  out.log.best_score = state.best_score;
  out.log.epochs_since_improve = state.epochs_since_improve;
  out.log.improved = out.improved;
  return out;
}

void finalize_paths(TrainResult& result, const TrainConfig& cfg, int phase) {
  if (cfg.checkpoint_dir.empty()) return;
  if (result.state.epochs_completed > 0) result.last_checkpoint = checkpoint_path(cfg.checkpoint_dir, phase, "last");
  if (result.state.best_epoch >= 0) result.best_checkpoint = checkpoint_path(cfg.checkpoint_dir, phase, "best");
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.phase != 1 && cfg.phase != 2) throw ConfigError("train: phase must be 1 or 2");
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (cfg.max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (cfg.early_stop_patience < 1) throw ConfigError("train: early_stop_patience must be >= 1");
  if (!(cfg.lr_initial > 0.0)) throw ConfigError("train: lr_initial must be > 0");
  if (!(cfg.lr_final > 0.0)) throw ConfigError("train: lr_final must be > 0");
  if (cfg.lr_final > cfg.lr_initial) throw ConfigError("train: lr_final must not exceed lr_initial");
  if (cfg.lr_decay_epochs < 0) throw ConfigError("train: lr_decay_epochs must be >= 0");
  if (cfg.queue_capacity < 1) throw ConfigError("train: queue_capacity must be >= 1");
  if (cfg.val_queries < 1) throw ConfigError("train: val_queries must be >= 1");
  if (cfg.metric_ks.empty()) throw ConfigError("train: metric_ks must not be empty");
  for (int k : cfg.metric_ks) {
    if (k < 1) throw ConfigError("train: metric_ks entries must be >= 1");
  }
  if (cfg.workers < 1) throw ConfigError("train: workers must be >= 1");
  if (cfg.stop_after_epochs < 0) throw ConfigError("train: stop_after_epochs must be >= 0");
  validate(cfg.loss);
}

double learning_rate_at(const TrainConfig& cfg, std::int64_t epoch) {
  if (epoch < 0) throw ContractError("learning_rate_at: epoch must be nonnegative");
  if (cfg.lr_decay_epochs == 0) return cfg.lr_initial;
  const double factor = std::pow(cfg.lr_final / cfg.lr_initial, 1.0 / static_cast<double>(cfg.lr_decay_epochs));
  const auto steps = std::min<std::int64_t>(epoch, cfg.lr_decay_epochs);
  return cfg.lr_initial * std::pow(factor, static_cast<double>(steps));
}

std::string to_json_line(const EpochLog& log) {
  nlohmann::json j;
  j["phase"] = log.phase;
  j["epoch"] = log.epoch;
  j["lr"] = log.lr;
  j["loss_total"] = log.loss_total;
  j["loss_triplet"] = log.loss_triplet;
  j["loss_contrastive"] = log.loss_contrastive;
  j["val_score"] = log.val_score;
  j["best_score"] = log.best_score;
  j["epochs_since_improve"] = log.epochs_since_improve;
  j["improved"] = log.improved;
  return j.dump();
}

TrainResult train_phase1(Model<float>& model, const Dataset& ds, const SplitAssignment& splits,
                         const TrainConfig& cfg, const Checkpoint* resume) {
  validate(cfg);
  if (cfg.phase != 1) throw ConfigError("train_phase1: config selects phase " + std::to_string(cfg.phase));

  auto params = model.phase1_parameters();
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Adam<float> adam(params, cfg.adam);

  const auto embed_dim = static_cast<std::size_t>(model.cfg.image.embed_dim);
  ClassQueueSet<float> queues(model.seen_classes, static_cast<std::size_t>(cfg.queue_capacity), embed_dim);

  TrainState state;
  state.phase = 1;
  if (resume) {
    require_matching_resume(model, *resume, 1, "train_phase1");
    state = resume->state;
    restore_moments(adam, *resume, "train_phase1");
    if (resume->has_queues()) queues = restore_queues(*resume);
  }

  const auto train_ids = splits.ids_with(SplitTag::kTrain);
  if (train_ids.empty()) throw ProtocolError("train_phase1: the training split is empty");
  const auto val = phase1_val_sets(ds, splits, cfg);

  TrainResult result;
  result.trainable_parameters = count_parameters(params);
  auto log_file = open_log(cfg.checkpoint_dir, 1);

  const std::int64_t start_epoch = state.epochs_completed;
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  for (std::int64_t epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    auto order = train_ids;
    auto rng = make_rng(cfg.seed, {kSaltShuffle, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);

    double sum_total = 0.0, sum_triplet = 0.0, sum_contrastive = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t end = std::min(order.size(), begin + batch_size);
      Tape<float> tape;
      Phase1Loss<float> loss;
      std::vector<std::pair<int, Tensor<float>>> pushes;
      pushes.reserve(end - begin);
      {
        TapeScope<float> scope(tape);
        std::map<int, Tensor<float>> text_by_domain;
        std::vector<Phase1Item<float>> items;
        items.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
          const auto& rec = ds.samples[static_cast<std::size_t>(order[i])];
          auto prompt = model.bank.select(rec.class_id, rec.domain_id);
          auto feature = model.image_encoder.encode(rec.tokens, &prompt);

          auto [slot, inserted] = text_by_domain.try_emplace(rec.domain_id);
          if (inserted) slot->second = model.text_feature_matrix(rec.domain_id);

          Phase1Item<float> item;
          item.image_feature = feature;
          item.text_features = slot->second;
          item.text_row = model.text_row_of(rec.class_id);
          // Queues stay as they were at batch start: every anchor mines
          // against pre-batch keys, pushes land afterwards.
          auto mined = queues.sample_hard_pairs(feature.data(), rec.class_id,
                                                static_cast<std::size_t>(cfg.loss.pair_count));
          item.pairs.reserve(mined.size());
          for (auto& pair : mined) {
            item.pairs.emplace_back(Tensor<float>::from_data({embed_dim}, std::move(pair.positive)),
                                    Tensor<float>::from_data({embed_dim}, std::move(pair.negative)));
          }
          items.push_back(std::move(item));

          GradPause<float> pause;
          if (cfg.use_momentum) {
            auto slow_prompt = model.bank.select(rec.class_id, rec.domain_id, true);
            pushes.emplace_back(rec.class_id, model.image_encoder.encode(rec.tokens, &slow_prompt));
          } else {
            pushes.emplace_back(rec.class_id,
                                Tensor<float>::from_data({embed_dim}, std::vector<float>(feature.data().begin(),
                                                                                         feature.data().end())));
          }
        }
        loss = phase1_loss<float>(items, cfg.loss);
      }
      const double total = static_cast<double>(loss.total.item());
      const double triplet = static_cast<double>(loss.triplet.item());
      const double contrastive = static_cast<double>(loss.contrastive.item());
      if (!std::isfinite(total)) {
        const char* term = !std::isfinite(triplet)      ? "ranking"
                           : !std::isfinite(contrastive) ? "alignment"
                                                         : "combined";
        throw DivergenceError("train_phase1: non-finite " + std::string(term) + " loss at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batches));
      }
      tape.backward(loss.total);
      adam.step(static_cast<float>(lr));
      for (auto& [class_id, feature] : pushes) queues.push(class_id, feature);
      if (cfg.use_momentum) model.bank.momentum_update();
      sum_total += total;
      sum_triplet += triplet;
      sum_contrastive += contrastive;
      ++batches;
    }

    const double score = validation_score(model, ds, val, PromptMode::kPhase1, cfg);
    auto outcome = close_epoch(state, cfg, epoch, lr, sum_total / static_cast<double>(batches),
                               sum_triplet / static_cast<double>(batches),
                               sum_contrastive / static_cast<double>(batches), score, adam.steps());
    result.epochs.push_back(outcome.log);
    emit_log(log_file, cfg.verbose, outcome.log);

    if (!cfg.checkpoint_dir.empty()) {
      Checkpoint snap = checkpoint_from_model(model, cfg.seed, state);
      attach_moments(snap, adam);
      store_queues(snap, queues);
      save_checkpoint(checkpoint_path(cfg.checkpoint_dir, 1, "last"), snap);
      if (outcome.improved) save_checkpoint(checkpoint_path(cfg.checkpoint_dir, 1, "best"), snap);
    }

    if (state.finished) break;
    if (cfg.stop_after_epochs > 0 && epoch + 1 - start_epoch >= cfg.stop_after_epochs) {
      result.interrupted = true;
      break;
    }
  }

  for (auto& p : params) p.set_requires_grad(false);
  result.state = state;
  finalize_paths(result, cfg, 1);
  return result;
}

TrainResult train_phase2(Model<float>& model, const Dataset& ds, const SplitAssignment& splits,
                         const TrainConfig& cfg, const Checkpoint* resume) {
  validate(cfg);
  if (cfg.phase != 2) throw ConfigError("train_phase2: config selects phase " + std::to_string(cfg.phase));

  // Everything learned in phase 1 is frozen; prove it at the end.
  for (auto& p : model.phase1_parameters()) p.set_requires_grad(false);
  const std::uint64_t frozen_before = parameter_hash(model.phase1_parameters());

  auto params = model.phase2_parameters();
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Adam<float> adam(params, cfg.adam);

  TrainState state;
  state.phase = 2;
  if (resume) {
    require_matching_resume(model, *resume, 2, "train_phase2");
    state = resume->state;
    restore_moments(adam, *resume, "train_phase2");
  }

  const auto train_ids = splits.ids_with(SplitTag::kTrain);
  if (train_ids.empty()) throw ProtocolError("train_phase2: the training split is empty");
  ValSets val{splits.ids_with(SplitTag::kValQuery), splits.ids_with(SplitTag::kValGallery)};
  if (val.queries.empty() || val.gallery.empty()) {
    throw ProtocolError("train_phase2: the validation split is empty");
  }

  // The text branch no longer moves; one matrix per seen domain suffices.
  std::map<int, Tensor<float>> text_by_domain;
  {
    GradPause<float> pause;
    for (int d : model.seen_domains) text_by_domain.emplace(d, model.text_feature_matrix(d));
  }

  TrainResult result;
  result.trainable_parameters = count_parameters(params);
  auto log_file = open_log(cfg.checkpoint_dir, 2);

  const std::int64_t start_epoch = state.epochs_completed;
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  for (std::int64_t epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    auto order = train_ids;
    auto rng = make_rng(cfg.seed, {kSaltShuffle, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);

    double sum_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t end = std::min(order.size(), begin + batch_size);
      Tape<float> tape;
      Tensor<float> loss;
      {
        TapeScope<float> scope(tape);
        std::vector<Phase2Item<float>> items;
        items.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
          const auto& rec = ds.samples[static_cast<std::size_t>(order[i])];
          const auto exclude_class =
              cfg.use_mask ? model.class_exclusion(rec.class_id) : model.class_exclusion(std::nullopt);
          const auto exclude_domain =
              cfg.use_mask ? model.domain_exclusion(rec.domain_id) : model.domain_exclusion(std::nullopt);
          auto prompt = model.tpg.generate(rec.tokens, model.bank, exclude_class, exclude_domain);
          auto feature = model.image_encoder.encode(rec.tokens, &prompt);
          items.push_back(
              Phase2Item<float>{feature, text_by_domain.at(rec.domain_id), model.text_row_of(rec.class_id)});
        }
        loss = phase2_loss<float>(items, cfg.loss);
      }
      const double total = static_cast<double>(loss.item());
      if (!std::isfinite(total)) {
        throw DivergenceError("train_phase2: non-finite alignment loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batches));
      }
      tape.backward(loss);
      adam.step(static_cast<float>(lr));
      sum_total += total;
      ++batches;
    }

    const double score = validation_score(model, ds, val, PromptMode::kTpg, cfg);
    const double mean_loss = sum_total / static_cast<double>(batches);
    auto outcome = close_epoch(state, cfg, epoch, lr, mean_loss, 0.0, mean_loss, score, adam.steps());
    result.epochs.push_back(outcome.log);
    emit_log(log_file, cfg.verbose, outcome.log);

    if (!cfg.checkpoint_dir.empty()) {
      Checkpoint snap = checkpoint_from_model(model, cfg.seed, state);
      attach_moments(snap, adam);
      save_checkpoint(checkpoint_path(cfg.checkpoint_dir, 2, "last"), snap);
      if (outcome.improved) save_checkpoint(checkpoint_path(cfg.checkpoint_dir, 2, "best"), snap);
    }

    if (state.finished) break;
    if (cfg.stop_after_epochs > 0 && epoch + 1 - start_epoch >= cfg.stop_after_epochs) {
      result.interrupted = true;
      break;
    }
  }

  for (auto& p : params) p.set_requires_grad(false);
  if (parameter_hash(model.phase1_parameters()) != frozen_before) {
    throw StateError("train_phase2: frozen parameters changed during generator training");
  }
  result.state = state;
  finalize_paths(result, cfg, 2);
  return result;
}

}  // namespace ucdr
