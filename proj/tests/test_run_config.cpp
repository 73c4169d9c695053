#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ucdr/errors.hpp"
#include "ucdr/run_config.hpp"

using namespace ucdr;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("ucdr_cfg_" + std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

struct EnvSeedGuard {
  ~EnvSeedGuard() { unsetenv("UCDR_SEED"); }
};

}  // namespace

TEST_CASE("defaults validate and resolve into consistent component configs") {
  RunConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  const ResolvedRun r = resolve(cfg);

  CHECK(r.data.num_classes == 12);
  CHECK(r.model.image.tokens == cfg.data.tokens);
  CHECK(r.model.image.input_dim == cfg.data.token_dim);
  CHECK(r.model.bank.input_dim == cfg.data.token_dim);
  CHECK(r.model.tpg.input_dim == cfg.data.token_dim);
  CHECK(r.model.tpg.feature_dim == cfg.model.embed_dim);
  CHECK(r.model.tpg.prompt_dim == cfg.model.prompt_dim);
  CHECK(r.model.text.embed_dim == cfg.model.embed_dim);
  CHECK(r.model.tmpl.num_classes == cfg.data.num_classes);
  CHECK(r.model.tmpl.num_domains == cfg.data.num_domains);
  CHECK(r.model.text.max_tokens == 4 + cfg.model.context_tokens);
  CHECK_NOTHROW(validate_model_config(r.model));

  CHECK(r.phase1.phase == 1);
  CHECK(r.phase2.phase == 2);
  CHECK(r.phase1.batch_size == 64);
  CHECK(r.phase2.batch_size == 32);
  CHECK(r.phase1.metric_ks == cfg.metric_ks);
  CHECK(r.phase2.metric_ks == cfg.metric_ks);
  CHECK(r.phase1.loss.pair_count == 2);
  CHECK(r.one_phase_mode == false);
  CHECK(r.split.holdout_domain.has_value());
  CHECK(*r.split.holdout_domain == 4);
}

TEST_CASE("component seed streams are distinct, derived, and reproducible") {
  RunConfig cfg;
  const ResolvedRun a = resolve(cfg);
  const ResolvedRun b = resolve(cfg);
  CHECK(a.data.seed == b.data.seed);
  CHECK(a.model.image.seed == b.model.image.seed);
  CHECK(a.phase1.seed == b.phase1.seed);

  std::vector<std::uint64_t> seeds{a.data.seed,       a.model.image.seed, a.model.text.seed, a.model.tmpl.seed,
                                   a.model.bank.seed, a.model.tpg.seed,   a.phase1.seed,     a.phase2.seed};
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (std::size_t j = i + 1; j < seeds.size(); ++j) CHECK(seeds[i] != seeds[j]);
  }

  cfg.seed = 2;
  const ResolvedRun c = resolve(cfg);
  CHECK(c.data.seed != a.data.seed);
  CHECK(c.model.image.seed != a.model.image.seed);

  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 1) != derive_seed(2, 1));
  CHECK(derive_seed(1, 1) == derive_seed(1, 1));
}

TEST_CASE("echo is deterministic and round-trips through the parser") {
  RunConfig cfg;
  cfg.seed = 17;
  cfg.split.holdout_domain = 3;
  cfg.metric_ks = {5, 25};
  const std::string echo = run_config_to_json(cfg);
  CHECK(echo.back() == '\n');
  CHECK(run_config_to_json(cfg) == echo);

  const RunConfig back = parse_run_config(echo);
  CHECK(run_config_to_json(back) == echo);
  CHECK(back.seed == 17);
  CHECK(back.split.holdout_domain.has_value());
  CHECK(*back.split.holdout_domain == 3);
  CHECK(back.metric_ks == std::vector<int>{5, 25});
}

TEST_CASE("empty document and partial documents fall back to defaults") {
  const RunConfig empty = parse_run_config("{}");
  CHECK(run_config_to_json(empty) == run_config_to_json(RunConfig{}));

  const RunConfig partial = parse_run_config(R"({
    "seed": 9,
    "data": {"num_classes": 6},
    "train_phase1": {"max_epochs": 7},
    "ablation": {"use_tst": false}
  })");
  CHECK(partial.seed == 9);
  CHECK(partial.data.num_classes == 6);
  CHECK(partial.data.num_domains == 5);
  CHECK(partial.phase1.max_epochs == 7);
  CHECK(partial.phase1.batch_size == 64);
  CHECK(partial.phase2.max_epochs == 2);
  CHECK(partial.ablation.use_tst == false);
  CHECK(partial.ablation.use_mask == true);
}

TEST_CASE("unknown keys anywhere in the tree are rejected") {
  CHECK_THROWS_AS((void)parse_run_config(R"({"sede": 1})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"data": {"num_classes": 4, "classes": 4}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"ablation": {"use_masks": true}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"train_phase2": {"lr": 0.1}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"metrics": {"ks": [10], "k": 10}})"), ConfigError);
  try {
    (void)parse_run_config(R"({"split": {"holdout_fraction": 0.5}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("split.holdout_fraction") != std::string::npos);
  }
}

TEST_CASE("malformed documents and wrong types are rejected") {
  CHECK_THROWS_AS((void)parse_run_config("not json"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config("[1, 2]"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"seed": -4})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"seed": "one"})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"seed": null})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"data": {"num_classes": 6.5}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"data": 3})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"ablation": {"use_mask": 1}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"metrics": {"ks": [10, 0.5]}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"paths": {"data_dir": 7}})"), ConfigError);
}

TEST_CASE("field and cross-field validation") {
  CHECK_THROWS_AS((void)parse_run_config(R"({"schema_version": 2})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"model": {"embed_dim": 30}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"model": {"momentum_rate": 0.0}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"loss": {"temperature": 0.0}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"metrics": {"ks": []}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"metrics": {"ks": [0]}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"ablation": {"triplet_pairs": -1}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"train_phase1": {"batch_size": 0}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"paths": {"run_dir": ""}})"), ConfigError);
}

TEST_CASE("split rules follow the protocol") {
  CHECK_THROWS_AS((void)parse_run_config(R"({"split": {"protocol": "weird"}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"split": {"gallery_mode": "both"}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"split": {"holdout_domain": 9}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"split": {"holdout_domain": 0}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"split": {"holdout_class_fraction": 1.0}})"), ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"split": {"protocol": "udcdr", "holdout_class_fraction": 0.5}})"),
                  ConfigError);
  CHECK_THROWS_AS((void)parse_run_config(R"({"split": {"protocol": "ucdr", "holdout_class_fraction": 0.0}})"),
                  ConfigError);

  const RunConfig uccdr =
      parse_run_config(R"({"split": {"protocol": "uccdr", "holdout_domain": 0, "holdout_class_fraction": 0.25}})");
  CHECK(uccdr.split.protocol == Protocol::kUcCdr);
  CHECK(uccdr.split.holdout_domain.has_value());
  CHECK(*uccdr.split.holdout_domain == 0);

  const RunConfig udcdr = parse_run_config(R"({"split": {"protocol": "udcdr", "holdout_class_fraction": 0.0}})");
  CHECK(udcdr.split.protocol == Protocol::kUdCdr);

  const RunConfig unset = parse_run_config(R"({"split": {"holdout_domain": null}})");
  CHECK(!unset.split.holdout_domain.has_value());
}

TEST_CASE("ablation toggles are wired into the resolved configs") {
  RunConfig cfg;
  cfg.ablation.use_mask = false;
  cfg.ablation.use_tst = false;
  cfg.ablation.triplet_pairs = 3;
  cfg.ablation.use_momentum = false;
  cfg.ablation.crossed_tpg_pairing = true;
  cfg.ablation.one_phase_mode = true;
  const ResolvedRun r = resolve(cfg);
  CHECK(r.model.use_tst == false);
  CHECK(r.model.tpg.crossed_pairing == true);
  CHECK(r.phase1.loss.pair_count == 3);
  CHECK(r.phase2.loss.pair_count == 3);
  CHECK(r.phase1.use_momentum == false);
  CHECK(r.phase2.use_mask == false);
  CHECK(r.one_phase_mode == true);
}

TEST_CASE("loss and metric settings reach both phases") {
  RunConfig cfg;
  cfg.loss.margin = 0.25;
  cfg.loss.temperature = 0.1;
  cfg.metric_ks = {7};
  const ResolvedRun r = resolve(cfg);
  CHECK(r.phase1.loss.margin == doctest::Approx(0.25));
  CHECK(r.phase2.loss.temperature == doctest::Approx(0.1));
  CHECK(r.phase1.metric_ks == std::vector<int>{7});
  CHECK(r.metric_ks == std::vector<int>{7});
}

TEST_CASE("config files round-trip through disk") {
  TempDir dir;
  RunConfig cfg;
  cfg.seed = 33;
  cfg.data.num_classes = 8;
  const auto path = (dir.path / "run.json").string();
  save_run_config(path, cfg);
  const RunConfig back = load_run_config(path);
  CHECK(run_config_to_json(back) == run_config_to_json(cfg));

  CHECK_THROWS_AS((void)load_run_config((dir.path / "missing.json").string()), IoError);

  std::ofstream bad(dir.path / "bad.json");
  bad << "{ not json";
  bad.close();
  CHECK_THROWS_AS((void)load_run_config((dir.path / "bad.json").string()), ConfigError);
}

TEST_CASE("environment seed override") {
  EnvSeedGuard guard;
  unsetenv("UCDR_SEED");
  CHECK(!env_seed_override().has_value());

  setenv("UCDR_SEED", "42", 1);
  auto v = env_seed_override();
  CHECK(v.has_value());
  CHECK(*v == 42);

  setenv("UCDR_SEED", "12abc", 1);
  CHECK_THROWS_AS((void)env_seed_override(), ConfigError);
  setenv("UCDR_SEED", "", 1);
  CHECK_THROWS_AS((void)env_seed_override(), ConfigError);
  setenv("UCDR_SEED", "-3", 1);
  CHECK_THROWS_AS((void)env_seed_override(), ConfigError);
}
