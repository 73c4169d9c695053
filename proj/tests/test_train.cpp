#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "ucdr/train.hpp"

using namespace ucdr;

namespace {

GeneratorConfig tiny_gen_cfg() {
  GeneratorConfig cfg;
  cfg.num_classes = 4;
  cfg.num_domains = 3;
  cfg.tokens = 3;
  cfg.token_dim = 6;
  cfg.samples_per_cell = 4;
  cfg.seed = 9;
  return cfg;
}

ModelConfig tiny_model_cfg() {
  ModelConfig cfg;
  cfg.image.tokens = 3;
  cfg.image.input_dim = 6;
  cfg.image.embed_dim = 5;
  cfg.image.blocks = 1;
  cfg.image.heads = 2;
  cfg.image.ffn_hidden = 8;
  cfg.image.seed = 3;
  cfg.text.text_dim = 4;
  cfg.text.embed_dim = 5;
  cfg.text.max_tokens = 8;
  cfg.text.blocks = 1;
  cfg.text.heads = 2;
  cfg.text.ffn_hidden = 8;
  cfg.text.seed = 4;
  cfg.tmpl.text_dim = 4;
  cfg.tmpl.context_tokens = 2;
  cfg.tmpl.num_classes = 4;
  cfg.tmpl.num_domains = 3;
  cfg.tmpl.seed = 5;
  cfg.bank.prompt_dim = 3;
  cfg.bank.input_dim = 6;
  cfg.bank.seed = 6;
  cfg.tpg.input_dim = 6;
  cfg.tpg.feature_dim = 4;
  cfg.tpg.hidden = 5;
  cfg.tpg.key_dim = 3;
  cfg.tpg.prompt_dim = 3;
  cfg.tpg.seed = 7;
  return cfg;
}

TrainConfig tiny_train_cfg(int phase) {
  TrainConfig cfg;
  cfg.phase = phase;
  cfg.batch_size = 8;
  cfg.max_epochs = 3;
  cfg.early_stop_patience = 50;
  cfg.lr_decay_epochs = 2;
  cfg.loss.pair_count = 2;
  cfg.seed = 5;
  cfg.queue_capacity = 3;
  cfg.val_queries = 6;
  cfg.metric_ks = {3};
  return cfg;
}

struct Fixture {
  Dataset ds;
  SplitAssignment splits;
  Fixture() : ds(generate_dataset(tiny_gen_cfg())) {
    splits = make_splits(ds.manifest, Protocol::kUcdr, 2, 0.5, GalleryMode::kUnseenOnly);
  }
  Model<float> model() const { return Model<float>::make(tiny_model_cfg(), splits.seen_classes, splits.seen_domains); }
};

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const char* name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("train config validation") {
  auto cfg = tiny_train_cfg(1);
  CHECK_NOTHROW(validate(cfg));

  auto bad = cfg;
  bad.phase = 3;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.early_stop_patience = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.lr_final = 1e-2;  // above lr_initial
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.lr_decay_epochs = -1;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.metric_ks = {};
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.metric_ks = {0};
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.loss.temperature = 0.0f;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.stop_after_epochs = -1;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("learning rate decays geometrically and then holds") {
  TrainConfig cfg;
  cfg.lr_initial = 1e-3;
  cfg.lr_final = 1e-6;
  cfg.lr_decay_epochs = 20;

  CHECK(learning_rate_at(cfg, 0) == 1e-3);
  CHECK(learning_rate_at(cfg, 20) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(learning_rate_at(cfg, 21) == learning_rate_at(cfg, 20));
  CHECK(learning_rate_at(cfg, 500) == learning_rate_at(cfg, 20));

  // Constant ratio between consecutive epochs inside the horizon.
  const double ratio = learning_rate_at(cfg, 1) / learning_rate_at(cfg, 0);
  for (int e = 1; e < 20; ++e) {
    CHECK(learning_rate_at(cfg, e + 1) / learning_rate_at(cfg, e) == doctest::Approx(ratio).epsilon(1e-12));
  }
  CHECK(ratio == doctest::Approx(std::pow(1e-3, 1.0 / 20.0)).epsilon(1e-12));

  cfg.lr_decay_epochs = 0;
  CHECK(learning_rate_at(cfg, 0) == 1e-3);
  CHECK(learning_rate_at(cfg, 100) == 1e-3);
  CHECK_THROWS_AS(learning_rate_at(cfg, -1), ContractError);
}

TEST_CASE("epoch log lines are deterministic json") {
  EpochLog log;
  log.phase = 1;
  log.epoch = 3;
  log.lr = 0.5;
  log.val_score = 0.25;
  auto a = to_json_line(log);
  auto b = to_json_line(log);
  CHECK(a == b);
  CHECK(a.find("\"epoch\":3") != std::string::npos);
  CHECK(a.find("timestamp") == std::string::npos);
}

TEST_CASE("phase 1 trains, logs, and checkpoints") {
  Fixture fx;
  auto model = fx.model();
  TempDir dir("ucdr_train_p1");
  auto cfg = tiny_train_cfg(1);
  cfg.checkpoint_dir = dir.path.string();

  auto result = train_phase1(model, fx.ds, fx.splits, cfg);
  CHECK(result.state.phase == 1);
  CHECK(result.state.epochs_completed == 3);
  CHECK(result.state.finished == true);
  CHECK(result.interrupted == false);
  CHECK(result.epochs.size() == 3);
  CHECK(result.trainable_parameters == count_parameters(model.phase1_parameters()));
  for (const auto& log : result.epochs) {
    CHECK(std::isfinite(log.loss_total));
    CHECK(log.val_score >= 0.0);
    CHECK(log.val_score <= 1.0);
    CHECK(log.loss_total == doctest::Approx(log.loss_triplet + log.loss_contrastive).epsilon(1e-6));
  }
  CHECK(result.state.best_epoch >= 0);
  CHECK(result.state.best_score == result.epochs[static_cast<std::size_t>(result.state.best_epoch)].val_score);

  REQUIRE(std::filesystem::exists(result.last_checkpoint));
  REQUIRE(std::filesystem::exists(result.best_checkpoint));
  auto last = load_checkpoint(result.last_checkpoint);
  CHECK(last.state.phase == 1);
  CHECK(last.state.epochs_completed == 3);
  CHECK(last.state.finished == true);
  CHECK(last.has_queues());
  CHECK(last.adam_m.size() == 5);
  auto best = load_checkpoint(result.best_checkpoint);
  CHECK(best.state.epochs_completed == result.state.best_epoch + 1);

  auto log_path = dir.path / "phase1_log.jsonl";
  REQUIRE(std::filesystem::exists(log_path));
  std::ifstream log_in(log_path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log_in, line)) {
    CHECK(line.front() == '{');
    ++lines;
  }
  CHECK(lines == 3);

  CHECK_THROWS_AS(train_phase1(model, fx.ds, fx.splits, tiny_train_cfg(2)), ConfigError);
}

TEST_CASE("phase 1 ablation branches run") {
  Fixture fx;
  auto cfg = tiny_train_cfg(1);
  cfg.max_epochs = 1;

  SUBCASE("without momentum keys") {
    cfg.use_momentum = false;
    auto model = fx.model();
    auto before = model.bank.class_prompts_momentum().clone();
    auto result = train_phase1(model, fx.ds, fx.splits, cfg);
    CHECK(result.epochs.size() == 1);
    // Slow copies never move in this mode.
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(model.bank.class_prompts_momentum().at(i) == before.at(i));
    }
  }
  SUBCASE("without the trainable text template") {
    auto mc = tiny_model_cfg();
    mc.use_tst = false;
    auto model = Model<float>::make(mc, fx.splits.seen_classes, fx.splits.seen_domains);
    auto result = train_phase1(model, fx.ds, fx.splits, cfg);
    CHECK(result.trainable_parameters == count_parameters(model.phase1_parameters()));
    CHECK(model.phase1_parameters().size() == 4);
  }
  SUBCASE("without mined pairs") {
    cfg.loss.pair_count = 0;
    auto model = fx.model();
    auto result = train_phase1(model, fx.ds, fx.splits, cfg);
    CHECK(result.epochs[0].loss_triplet == 0.0);
    CHECK(result.epochs[0].loss_total == result.epochs[0].loss_contrastive);
  }
}

TEST_CASE("phase 2 trains the generator and leaves phase-1 state untouched") {
  Fixture fx;
  auto model = fx.model();
  const auto frozen_before = parameter_hash(model.phase1_parameters());
  TempDir dir("ucdr_train_p2");
  auto cfg = tiny_train_cfg(2);
  cfg.checkpoint_dir = dir.path.string();

  auto result = train_phase2(model, fx.ds, fx.splits, cfg);
  CHECK(result.state.phase == 2);
  CHECK(result.state.epochs_completed == 3);
  CHECK(result.state.finished == true);
  CHECK(result.trainable_parameters == count_parameters(model.phase2_parameters()));
  CHECK(parameter_hash(model.phase1_parameters()) == frozen_before);
  for (const auto& log : result.epochs) {
    CHECK(log.loss_triplet == 0.0);
    CHECK(std::isfinite(log.loss_total));
  }

  auto last = load_checkpoint(result.last_checkpoint);
  CHECK(last.state.phase == 2);
  CHECK(last.tpg_params.size() == 8);
  CHECK_FALSE(last.has_queues());
  CHECK(last.adam_m.size() == 8);

  SUBCASE("masking ablation also runs") {
    auto unmasked = fx.model();
    auto cfg2 = tiny_train_cfg(2);
    cfg2.max_epochs = 1;
    cfg2.use_mask = false;
    auto r2 = train_phase2(unmasked, fx.ds, fx.splits, cfg2);
    CHECK(r2.epochs.size() == 1);
  }
}

TEST_CASE("interrupting and resuming reproduces the uninterrupted run byte for byte") {
  Fixture fx;
  auto cfg = tiny_train_cfg(1);
  cfg.max_epochs = 4;

  TempDir dir_full("ucdr_resume_full");
  cfg.checkpoint_dir = dir_full.path.string();
  auto model_full = fx.model();
  auto full = train_phase1(model_full, fx.ds, fx.splits, cfg);
  CHECK(full.state.epochs_completed == 4);

  TempDir dir_paused("ucdr_resume_paused");
  cfg.checkpoint_dir = dir_paused.path.string();
  cfg.stop_after_epochs = 2;
  auto model_paused = fx.model();
  auto paused = train_phase1(model_paused, fx.ds, fx.splits, cfg);
  CHECK(paused.interrupted == true);
  CHECK(paused.state.finished == false);
  CHECK(paused.state.epochs_completed == 2);
  CHECK(paused.epochs.size() == 2);

  auto ckpt = load_checkpoint(paused.last_checkpoint);
  auto model_resumed = model_from_checkpoint(ckpt);
  cfg.stop_after_epochs = 0;
  auto resumed = train_phase1(model_resumed, fx.ds, fx.splits, cfg, &ckpt);
  CHECK(resumed.state.finished == true);
  CHECK(resumed.state.epochs_completed == 4);
  CHECK(resumed.epochs.size() == 2);
  CHECK(resumed.epochs.front().epoch == 2);

  // Same epoch trajectory after the pause point as the uninterrupted run.
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(resumed.epochs[i].val_score == full.epochs[i + 2].val_score);
    CHECK(resumed.epochs[i].loss_total == full.epochs[i + 2].loss_total);
  }
  CHECK(read_bytes(dir_full.path / "phase1_last.ucdc") == read_bytes(dir_paused.path / "phase1_last.ucdc"));
  CHECK(read_bytes(dir_full.path / "phase1_best.ucdc") == read_bytes(dir_paused.path / "phase1_best.ucdc"));
}

TEST_CASE("phase 2 interrupt and resume is also exact") {
  Fixture fx;
  auto cfg = tiny_train_cfg(2);
  cfg.max_epochs = 4;

  TempDir dir_full("ucdr_resume2_full");
  cfg.checkpoint_dir = dir_full.path.string();
  auto model_full = fx.model();
  auto full = train_phase2(model_full, fx.ds, fx.splits, cfg);

  TempDir dir_paused("ucdr_resume2_paused");
  cfg.checkpoint_dir = dir_paused.path.string();
  cfg.stop_after_epochs = 2;
  auto model_paused = fx.model();
  auto paused = train_phase2(model_paused, fx.ds, fx.splits, cfg);
  CHECK(paused.interrupted);

  auto ckpt = load_checkpoint(paused.last_checkpoint);
  auto model_resumed = model_from_checkpoint(ckpt);
  cfg.stop_after_epochs = 0;
  auto resumed = train_phase2(model_resumed, fx.ds, fx.splits, cfg, &ckpt);
  CHECK(resumed.state.epochs_completed == full.state.epochs_completed);
  CHECK(read_bytes(dir_full.path / "phase2_last.ucdc") == read_bytes(dir_paused.path / "phase2_last.ucdc"));
  CHECK(read_bytes(dir_full.path / "phase2_best.ucdc") == read_bytes(dir_paused.path / "phase2_best.ucdc"));
}

TEST_CASE("resume rejects mismatched checkpoints") {
  Fixture fx;
  auto cfg = tiny_train_cfg(1);
  cfg.max_epochs = 1;
  auto model = fx.model();

  TrainState finished_state;
  finished_state.phase = 1;
  finished_state.finished = true;
  auto finished = checkpoint_from_model(model, cfg.seed, finished_state);
  CHECK_THROWS_AS(train_phase1(model, fx.ds, fx.splits, cfg, &finished), StateError);

  TrainState wrong_phase;
  wrong_phase.phase = 2;
  auto phase2 = checkpoint_from_model(model, cfg.seed, wrong_phase);
  CHECK_THROWS_AS(train_phase1(model, fx.ds, fx.splits, cfg, &phase2), StateError);

  TrainState ok;
  ok.phase = 1;
  auto mismatched = checkpoint_from_model(model, cfg.seed, ok);
  mismatched.seen_classes.push_back(99);
  CHECK_THROWS_AS(train_phase1(model, fx.ds, fx.splits, cfg, &mismatched), StateError);
}

TEST_CASE("a poisoned parameter raises a divergence error naming the term") {
  Fixture fx;
  auto model = fx.model();
  model.bank.class_prompts().data()[0] = std::numeric_limits<float>::quiet_NaN();
  auto cfg = tiny_train_cfg(1);
  try {
    train_phase1(model, fx.ds, fx.splits, cfg);
    FAIL("training accepted a non-finite parameter");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
    CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
  }
}

TEST_CASE("a catastrophic learning rate fails loudly") {
  Fixture fx;
  auto model = fx.model();
  auto cfg = tiny_train_cfg(1);
  cfg.max_epochs = 5;
  cfg.lr_initial = 1e15;
  cfg.lr_final = 1e15;
  cfg.lr_decay_epochs = 0;
  CHECK_THROWS(train_phase1(model, fx.ds, fx.splits, cfg));
}

TEST_CASE("early stopping fires when the score stops strictly improving") {
  Fixture fx;
  auto model = fx.model();
  auto cfg = tiny_train_cfg(1);
  cfg.max_epochs = 6;
  cfg.early_stop_patience = 1;
  // Updates this small cannot flip any ranking, so the score plateaus
  // immediately after the first epoch sets the best.
  cfg.lr_initial = 1e-12;
  cfg.lr_final = 1e-12;
  auto result = train_phase1(model, fx.ds, fx.splits, cfg);
  CHECK(result.state.finished == true);
  CHECK(result.state.epochs_completed == 2);
  CHECK(result.state.best_epoch == 0);
  CHECK(result.epochs.back().epochs_since_improve == 1);
}
