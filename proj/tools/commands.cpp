#include "commands.hpp"

#include <cstdint>
#include <filesystem>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ucdr/checkpoint.hpp"
#include "ucdr/dataset.hpp"
#include "ucdr/errors.hpp"
#include "ucdr/grad_suite.hpp"
#include "ucdr/harness.hpp"
#include "ucdr/retrieval.hpp"
#include "ucdr/run_config.hpp"
#include "ucdr/train.hpp"
#include "ucdr/util.hpp"

namespace ucdr {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Overrides shared by the data-touching subcommands; every field is applied
// only when the flag was given, so the config file keeps its say otherwise.
struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::optional<std::string> protocol;
  std::optional<std::string> gallery_mode;
  std::optional<int> holdout_domain;
  std::optional<double> class_fraction;
  bool no_mask = false;
  bool no_tst = false;
  bool no_momentum = false;
  bool crossed_pairing = false;
  bool one_phase = false;
  std::optional<int> triplet_pairs;
};

void add_config_options(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "Run config JSON file; built-in defaults apply when omitted");
  cmd->add_option("--seed", o.seed, "Override the run seed (also overridable via UCDR_SEED)");
}

void add_split_options(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--protocol", o.protocol, "Split protocol override")
      ->check(CLI::IsMember({"ucdr", "uccdr", "udcdr"}));
  cmd->add_option("--gallery-mode", o.gallery_mode, "Gallery composition override")
      ->check(CLI::IsMember({"unseen_only", "seen_plus_unseen"}));
  cmd->add_option("--holdout-domain", o.holdout_domain, "Query domain held out of training");
  cmd->add_option("--class-fraction", o.class_fraction, "Fraction of classes held out of training");
}

void add_ablation_options(CLI::App* cmd, CommonOpts& o) {
  cmd->add_flag("--no-mask", o.no_mask, "Train the generator without hiding each sample's own prompt rows");
  cmd->add_flag("--no-tst", o.no_tst, "Drop the trainable text-side domain context");
  cmd->add_flag("--no-momentum", o.no_momentum, "Fill queues from live features instead of momentum prompts");
  cmd->add_flag("--crossed-pairing", o.crossed_pairing, "Pair generator attention with the opposite prompt bank");
  cmd->add_flag("--one-phase", o.one_phase, "Skip generator training; evaluate with the label-free mean prompt");
  cmd->add_option("--triplet-pairs", o.triplet_pairs, "Mined hard pairs per anchor (0 disables the ranking term)");
}

void add_workers_option(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--workers", o.workers, "Threads for embedding work (1 keeps everything serial)")
      ->check(CLI::PositiveNumber);
}

RunConfig effective_config(const CommonOpts& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (auto env = env_seed_override()) cfg.seed = *env;
  if (o.seed) cfg.seed = *o.seed;
  if (o.protocol) cfg.split.protocol = protocol_from_string(*o.protocol);
  if (o.gallery_mode) cfg.split.gallery_mode = gallery_mode_from_string(*o.gallery_mode);
  if (o.holdout_domain) cfg.split.holdout_domain = *o.holdout_domain;
  if (o.class_fraction) cfg.split.holdout_class_fraction = *o.class_fraction;
  if (o.no_mask) cfg.ablation.use_mask = false;
  if (o.no_tst) cfg.ablation.use_tst = false;
  if (o.no_momentum) cfg.ablation.use_momentum = false;
  if (o.crossed_pairing) cfg.ablation.crossed_tpg_pairing = true;
  if (o.one_phase) cfg.ablation.one_phase_mode = true;
  if (o.triplet_pairs) cfg.ablation.triplet_pairs = *o.triplet_pairs;
  validate(cfg);
  return cfg;
}

void emit(const json& line) { std::cout << line.dump() << "\n"; }

json metrics_json(const RetrievalMetrics& m) {
  json map_at, prec_at;
  for (const auto& [k, v] : m.map_at) map_at[std::to_string(k)] = v;
  for (const auto& [k, v] : m.prec_at) prec_at[std::to_string(k)] = v;
  return json{{"map_at", map_at},
              {"prec_at", prec_at},
              {"map_all", m.map_all},
              {"num_queries", m.num_queries},
              {"num_gallery", m.num_gallery},
              {"zero_relevant_queries", m.zero_relevant_queries}};
}

Dataset load_matching_dataset(const std::string& dir, const ResolvedRun& r) {
  Dataset ds = load_dataset(dir);
  require_dataset_matches(r.data, ds.manifest);
  return ds;
}

SplitAssignment splits_for(const Dataset& ds, const ResolvedRun& r) {
  return make_splits(ds.manifest, r.split.protocol, r.split.holdout_domain, r.split.holdout_class_fraction,
                     r.split.gallery_mode);
}

// ---- gen-data ----

struct GenDataOpts {
  CommonOpts common;
  std::string out;
};

void cmd_gen_data(const GenDataOpts& o) {
  const RunConfig cfg = effective_config(o.common);
  const ResolvedRun r = resolve(cfg);
  const std::string out = o.out.empty() ? cfg.paths.data_dir : o.out;
  const Dataset ds = generate_dataset(r.data);
  save_dataset(out, ds);
  save_run_config((fs::path(out) / "effective_config.json").string(), cfg);
  emit(json{{"command", "gen-data"},
            {"out", out},
            {"samples", ds.manifest.num_samples},
            {"classes", ds.manifest.generator.num_classes},
            {"domains", ds.manifest.generator.num_domains},
            {"seed", cfg.seed}});
}

// ---- train ----

struct TrainOpts {
  CommonOpts common;
  int phase = 1;
  std::string data_dir;
  std::string out_dir;
  std::string init_ckpt;
  std::string resume_ckpt;
  int stop_after_epochs = 0;
  bool verbose = false;
};

void cmd_train(const TrainOpts& o) {
  const RunConfig cfg = effective_config(o.common);
  const ResolvedRun r = resolve(cfg);
  const std::string data_dir = o.data_dir.empty() ? cfg.paths.data_dir : o.data_dir;
  const std::string out_dir = o.out_dir.empty() ? cfg.paths.run_dir : o.out_dir;
  if (!o.init_ckpt.empty() && !o.resume_ckpt.empty()) {
    throw ConfigError("train: pass either --resume or --init, not both");
  }
  if (o.phase == 1 && !o.init_ckpt.empty()) throw ConfigError("train: --init applies to --phase 2 only");

  const Dataset ds = load_matching_dataset(data_dir, r);
  const SplitAssignment splits = splits_for(ds, r);

  TrainConfig tc = o.phase == 1 ? r.phase1 : r.phase2;
  tc.workers = o.common.workers;
  tc.stop_after_epochs = o.stop_after_epochs;
  tc.checkpoint_dir = out_dir;
  tc.verbose = o.verbose;

  fs::create_directories(out_dir);
  save_run_config((fs::path(out_dir) / "effective_config.json").string(), cfg);

  TrainResult result;
  if (!o.resume_ckpt.empty()) {
    const Checkpoint ckpt = load_checkpoint(o.resume_ckpt);
    if (ckpt.state.phase != o.phase) {
      throw ConfigError("train: --resume checkpoint is phase " + std::to_string(ckpt.state.phase) +
                        ", requested phase " + std::to_string(o.phase));
    }
    require_model_matches(r.model, ckpt.model);
    Model<float> model = model_from_checkpoint(ckpt);
    result = o.phase == 1 ? train_phase1(model, ds, splits, tc, &ckpt) : train_phase2(model, ds, splits, tc, &ckpt);
  } else if (o.phase == 1) {
    Model<float> model = Model<float>::make(r.model, splits.seen_classes, splits.seen_domains);
    result = train_phase1(model, ds, splits, tc);
  } else {
    const std::string init =
        o.init_ckpt.empty() ? (fs::path(out_dir) / "phase1_best.ucdc").string() : o.init_ckpt;
    const Checkpoint ckpt = load_checkpoint(init);
    if (ckpt.state.phase != 1) {
      throw ConfigError("train: --init expects a phase-1 checkpoint, got phase " + std::to_string(ckpt.state.phase));
    }
    require_model_matches(r.model, ckpt.model);
    Model<float> model = model_from_checkpoint(ckpt);
    result = train_phase2(model, ds, splits, tc);
  }

  emit(json{{"command", "train"},
            {"phase", o.phase},
            {"epochs_completed", result.state.epochs_completed},
            {"finished", result.state.finished},
            {"interrupted", result.interrupted},
            {"best_score", result.state.best_score},
            {"best_epoch", result.state.best_epoch},
            {"trainable_parameters", result.trainable_parameters},
            {"best_checkpoint", result.best_checkpoint},
            {"last_checkpoint", result.last_checkpoint}});
}

// ---- eval ----

struct EvalOpts {
  CommonOpts common;
  std::string data_dir;
  std::string ckpt;
  std::string mode = "tpg";
  std::string split = "test";
  std::string out;
  std::string rankings;
  std::string embeddings;
  bool ablate = false;
};

Model<float> model_for_eval(const std::string& ckpt_path, const ResolvedRun& r, const SplitAssignment& splits,
                            PromptMode mode) {
  if (ckpt_path.empty()) {
    if (mode != PromptMode::kNone) {
      throw ConfigError("eval: mode '" + to_string(mode) + "' needs --ckpt; only mode 'none' runs untrained");
    }
    return Model<float>::make(r.model, splits.seen_classes, splits.seen_domains);
  }
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  require_model_matches(r.model, ckpt.model);
  return model_from_checkpoint(ckpt);
}

void cmd_eval(const EvalOpts& o) {
  const RunConfig cfg = effective_config(o.common);
  const ResolvedRun r = resolve(cfg);
  const std::string data_dir = o.data_dir.empty() ? cfg.paths.data_dir : o.data_dir;
  const Dataset ds = load_matching_dataset(data_dir, r);
  const SplitAssignment splits = splits_for(ds, r);

  if (o.ablate) {
    const std::vector<AblationRow> rows{AblationRow::kZeroShot, AblationRow::kOnePhase, AblationRow::kTwoPhase,
                                        AblationRow::kNoMask, AblationRow::kNoTst};
    const std::string work_dir = (fs::path(cfg.paths.run_dir) / "ablation").string();
    const auto results = run_ablation_grid(cfg, rows, ds, work_dir, o.common.workers);
    fs::create_directories(cfg.paths.run_dir);
    const std::string out = o.out.empty() ? (fs::path(cfg.paths.run_dir) / "ablation.json").string() : o.out;
    std::ofstream file(out, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("eval: cannot write '" + out + "'");
    file << grid_to_json(results);
    std::cout << grid_to_table(results);
    emit(json{{"command", "eval"}, {"ablate", true}, {"out", out}});
    return;
  }

  const PromptMode mode = prompt_mode_from_string(o.mode);
  const Model<float> model = model_for_eval(o.ckpt, r, splits, mode);

  EvaluateOptions opts;
  opts.mode = mode;
  opts.ks = r.metric_ks;
  opts.workers = o.common.workers;
  opts.keep_rankings = !o.rankings.empty();
  opts.keep_embeddings = !o.embeddings.empty();
  opts.query_tag = o.split == "val" ? SplitTag::kValQuery : SplitTag::kTestQuery;
  opts.gallery_tag = o.split == "val" ? SplitTag::kValGallery : SplitTag::kTestGallery;

  const RetrievalReport report = evaluate(model, ds, splits, opts);

  const std::string out = o.out.empty() ? (fs::path(cfg.paths.run_dir) / "report.json").string() : o.out;
  if (out.find('/') != std::string::npos) fs::create_directories(fs::path(out).parent_path());
  std::map<std::string, std::string> extra{{"config", run_config_to_json(cfg)},
                                           {"checkpoint", o.ckpt},
                                           {"seed", std::to_string(cfg.seed)}};
  if (!o.ckpt.empty()) extra["checkpoint_hash"] = hex64(checkpoint_file_hash(o.ckpt));
  write_report_json(out, report, extra);
  if (!o.rankings.empty()) write_rankings_csv(o.rankings, report);
  if (!o.embeddings.empty()) write_embeddings(o.embeddings, report.query_embeddings, report.gallery_embeddings);

  json line = metrics_json(report.metrics);
  line["command"] = "eval";
  line["mode"] = o.mode;
  line["split"] = o.split;
  line["report"] = out;
  emit(line);
}

// ---- retrieve ----

struct RetrieveOpts {
  CommonOpts common;
  std::string data_dir;
  std::string ckpt;
  std::string mode = "tpg";
  std::string split = "test";
  std::vector<std::int64_t> query_ids;
  int k = 10;
};

void cmd_retrieve(const RetrieveOpts& o) {
  const RunConfig cfg = effective_config(o.common);
  const ResolvedRun r = resolve(cfg);
  const std::string data_dir = o.data_dir.empty() ? cfg.paths.data_dir : o.data_dir;
  const Dataset ds = load_matching_dataset(data_dir, r);
  const SplitAssignment splits = splits_for(ds, r);
  const PromptMode mode = prompt_mode_from_string(o.mode);
  const Model<float> model = model_for_eval(o.ckpt, r, splits, mode);

  for (std::int64_t id : o.query_ids) {
    if (id < 0 || id >= ds.manifest.num_samples) {
      throw ConfigError("retrieve: query id " + std::to_string(id) + " is outside the corpus");
    }
  }
  const std::vector<std::int64_t> gallery =
      splits.ids_with(o.split == "val" ? SplitTag::kValGallery : SplitTag::kTestGallery);

  EvaluateOptions opts;
  opts.mode = mode;
  opts.ks = {o.k};
  opts.workers = o.common.workers;
  opts.keep_rankings = true;
  const RetrievalReport report = evaluate_ids(model, ds, o.query_ids, gallery, opts);

  std::cout << "query_id,rank,gallery_id,distance\n";
  for (std::size_t q = 0; q < report.query_ids.size(); ++q) {
    const auto& ranking = report.rankings[q];
    const std::size_t top = std::min<std::size_t>(ranking.size(), static_cast<std::size_t>(o.k));
    for (std::size_t i = 0; i < top; ++i) {
      std::cout << report.query_ids[q] << "," << (i + 1) << "," << ranking[i].gallery_id << ","
                << std::to_string(ranking[i].distance) << "\n";
    }
  }
}

// ---- grad-check ----

struct GradCheckOpts {
  std::string scope = "all";
  double tolerance = 1e-5;
};

int cmd_grad_check(const GradCheckOpts& o) {
  if (!(o.tolerance > 0.0)) throw ConfigError("grad-check: --tolerance must be > 0");
  const GradSuiteResult suite = run_grad_suite(o.tolerance);
  const std::vector<std::string> tpg_cases{"phase2_objective_vs_generator"};
  auto in_scope = [&](const std::string& name) {
    if (o.scope == "all") return true;
    const bool is_tpg = std::find(tpg_cases.begin(), tpg_cases.end(), name) != tpg_cases.end();
    return o.scope == "tpg" ? is_tpg : !is_tpg;
  };
  bool all_passed = true;
  std::size_t selected = 0;
  double worst = 0.0;
  for (const auto& c : suite.cases) {
    if (!in_scope(c.name)) continue;
    ++selected;
    all_passed = all_passed && c.passed;
    worst = std::max(worst, c.max_rel_error);
    std::cout << c.name << " max_rel_error=" << c.max_rel_error << " tolerance=" << c.tolerance
              << " coords=" << c.coords_checked << (c.passed ? " PASS" : " FAIL") << "\n";
  }
  emit(json{{"command", "grad-check"},
            {"scope", o.scope},
            {"cases", selected},
            {"worst_rel_error", worst},
            {"passed", all_passed}});
  return all_passed && selected > 0 ? 0 : 1;
}

int fail(const char* category, const std::exception& e, int code) {
  std::cerr << json{{"category", category}, {"message", e.what()}}.dump() << "\n";
  return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Two-phase prompt adaptation and retrieval over a synthetic cross-domain corpus"};
  app.require_subcommand(1);
  int exit_code = 0;

  GenDataOpts gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic corpus and write it to disk");
  add_config_options(gen_cmd, gen.common);
  gen_cmd->add_option("--out", gen.out, "Output directory (default: paths.data_dir from the config)");
  gen_cmd->callback([&] { cmd_gen_data(gen); });

  TrainOpts train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train prompts (phase 1) or the prompt generator (phase 2)");
  add_config_options(train_cmd, train.common);
  add_split_options(train_cmd, train.common);
  add_ablation_options(train_cmd, train.common);
  add_workers_option(train_cmd, train.common);
  train_cmd->add_option("--phase", train.phase, "Training phase")->required()->check(CLI::Range(1, 2));
  train_cmd->add_option("--data", train.data_dir, "Dataset directory (default: paths.data_dir)");
  train_cmd->add_option("--out", train.out_dir, "Checkpoint/log directory (default: paths.run_dir)");
  train_cmd->add_option("--init", train.init_ckpt,
                        "Phase-1 checkpoint that seeds phase 2 (default: <out>/phase1_best.ucdc)");
  train_cmd->add_option("--resume", train.resume_ckpt, "Checkpoint of the same phase to continue from");
  train_cmd->add_option("--stop-after-epochs", train.stop_after_epochs,
                        "Interrupt after this many epochs of this invocation (0 = run to completion)");
  train_cmd->add_flag("--verbose", train.verbose, "Print one log line per epoch");
  train_cmd->callback([&] { cmd_train(train); });

  EvalOpts eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate retrieval on the test or validation split");
  add_config_options(eval_cmd, eval.common);
  add_split_options(eval_cmd, eval.common);
  add_ablation_options(eval_cmd, eval.common);
  add_workers_option(eval_cmd, eval.common);
  eval_cmd->add_option("--data", eval.data_dir, "Dataset directory (default: paths.data_dir)");
  eval_cmd->add_option("--ckpt", eval.ckpt, "Checkpoint to evaluate (optional for mode 'none')");
  eval_cmd->add_option("--mode", eval.mode, "Prompt source for embeddings")
      ->check(CLI::IsMember({"none", "phase1", "tpg", "mean_prompt"}));
  eval_cmd->add_option("--split", eval.split, "Query/gallery split")->check(CLI::IsMember({"test", "val"}));
  eval_cmd->add_option("--out", eval.out, "Report path (default: <run_dir>/report.json)");
  eval_cmd->add_option("--rankings", eval.rankings, "Also write full per-query rankings CSV here");
  eval_cmd->add_option("--embeddings", eval.embeddings, "Also write raw query/gallery embeddings here");
  eval_cmd->add_flag("--ablate", eval.ablate,
                     "Train and evaluate the standard comparison rows (zero_shot, one_phase, two_phase, no_mask, "
                     "no_tst) instead of a single checkpoint");
  eval_cmd->callback([&] { cmd_eval(eval); });

  RetrieveOpts retrieve;
  CLI::App* ret_cmd = app.add_subcommand("retrieve", "Rank the gallery for specific query sample ids");
  add_config_options(ret_cmd, retrieve.common);
  add_split_options(ret_cmd, retrieve.common);
  add_ablation_options(ret_cmd, retrieve.common);
  add_workers_option(ret_cmd, retrieve.common);
  ret_cmd->add_option("--data", retrieve.data_dir, "Dataset directory (default: paths.data_dir)");
  ret_cmd->add_option("--ckpt", retrieve.ckpt, "Checkpoint to embed with (optional for mode 'none')");
  ret_cmd->add_option("--mode", retrieve.mode, "Prompt source for embeddings")
      ->check(CLI::IsMember({"none", "phase1", "tpg", "mean_prompt"}));
  ret_cmd->add_option("--split", retrieve.split, "Gallery split")->check(CLI::IsMember({"test", "val"}));
  ret_cmd->add_option("--query", retrieve.query_ids, "Query sample ids")->required()->delimiter(',');
  ret_cmd->add_option("--k", retrieve.k, "Rows printed per query")->check(CLI::PositiveNumber);
  ret_cmd->callback([&] { cmd_retrieve(retrieve); });

  GradCheckOpts grad;
  CLI::App* grad_cmd = app.add_subcommand("grad-check", "Compare analytic gradients against finite differences");
  grad_cmd->add_option("--scope", grad.scope,
                       "Which paths to check: losses (ranking/alignment/phase-1/text context), tpg (generator), all")
      ->check(CLI::IsMember({"losses", "tpg", "all"}));
  grad_cmd->add_option("--tolerance", grad.tolerance, "Maximum relative error accepted");
  grad_cmd->callback([&] { exit_code = cmd_grad_check(grad); });

  try {
    app.parse(argc, argv);
    return exit_code;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"category", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    return fail("config", e, 2);
  } catch (const IoError& e) {
    return fail("io", e, 3);
  } catch (const FormatError& e) {
    return fail("format", e, 3);
  } catch (const ContractError& e) {
    return fail("contract", e, 1);
  } catch (const StateError& e) {
    return fail("state", e, 1);
  } catch (const ProtocolError& e) {
    return fail("protocol", e, 1);
  } catch (const DegenerateInputError& e) {
    return fail("degenerate_input", e, 1);
  } catch (const DivergenceError& e) {
    return fail("divergence", e, 1);
  } catch (const std::exception& e) {
    return fail("runtime", e, 1);
  }
}

}  // namespace ucdr
