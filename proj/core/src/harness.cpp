#include "ucdr/harness.hpp"

#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "ucdr/checkpoint.hpp"
#include "ucdr/errors.hpp"

namespace ucdr {

std::string to_string(AblationRow row) {
  switch (row) {
    case AblationRow::kZeroShot: return "zero_shot";
    case AblationRow::kOnePhase: return "one_phase";
    case AblationRow::kTwoPhase: return "two_phase";
    case AblationRow::kNoMask: return "no_mask";
    case AblationRow::kNoTst: return "no_tst";
  }
  throw ContractError("unknown ablation row");
}

AblationRow ablation_row_from_string(const std::string& s) {
  if (s == "zero_shot") return AblationRow::kZeroShot;
  if (s == "one_phase") return AblationRow::kOnePhase;
  if (s == "two_phase") return AblationRow::kTwoPhase;
  if (s == "no_mask") return AblationRow::kNoMask;
  if (s == "no_tst") return AblationRow::kNoTst;
  throw ConfigError("unknown ablation row '" + s + "' (expected zero_shot, one_phase, two_phase, no_mask, no_tst)");
}

void require_dataset_matches(const GeneratorConfig& expected, const DatasetManifest& manifest) {
  const GeneratorConfig& g = manifest.generator;
  auto mismatch = [](const std::string& field) {
    throw ConfigError("dataset was generated with different settings (" + field + ")");
  };
  if (g.num_classes != expected.num_classes) mismatch("num_classes");
  if (g.num_domains != expected.num_domains) mismatch("num_domains");
  if (g.tokens != expected.tokens) mismatch("tokens");
  if (g.token_dim != expected.token_dim) mismatch("token_dim");
  if (g.samples_per_cell != expected.samples_per_cell) mismatch("samples_per_cell");
  if (g.class_separation != expected.class_separation) mismatch("class_separation");
  if (g.domain_transform_scale != expected.domain_transform_scale) mismatch("domain_transform_scale");
  if (g.noise_sigma != expected.noise_sigma) mismatch("noise_sigma");
  if (g.seed != expected.seed) mismatch("seed");
}

void require_model_matches(const ModelConfig& expected, const ModelConfig& actual) {
  auto mismatch = [](const std::string& field) {
    throw ConfigError("checkpoint model does not match the run config (" + field + ")");
  };
  auto same = [&](auto a, auto b, const char* field) {
    if (a != b) mismatch(field);
  };
  same(actual.image.tokens, expected.image.tokens, "image.tokens");
  same(actual.image.input_dim, expected.image.input_dim, "image.input_dim");
  same(actual.image.embed_dim, expected.image.embed_dim, "image.embed_dim");
  same(actual.image.blocks, expected.image.blocks, "image.blocks");
  same(actual.image.heads, expected.image.heads, "image.heads");
  same(actual.image.ffn_hidden, expected.image.ffn_hidden, "image.ffn_hidden");
  same(actual.image.seed, expected.image.seed, "image.seed");
  same(actual.text.text_dim, expected.text.text_dim, "text.text_dim");
  same(actual.text.embed_dim, expected.text.embed_dim, "text.embed_dim");
  same(actual.text.max_tokens, expected.text.max_tokens, "text.max_tokens");
  same(actual.text.blocks, expected.text.blocks, "text.blocks");
  same(actual.text.heads, expected.text.heads, "text.heads");
  same(actual.text.ffn_hidden, expected.text.ffn_hidden, "text.ffn_hidden");
  same(actual.text.seed, expected.text.seed, "text.seed");
  same(actual.tmpl.text_dim, expected.tmpl.text_dim, "template.text_dim");
  same(actual.tmpl.context_tokens, expected.tmpl.context_tokens, "template.context_tokens");
  same(actual.tmpl.num_classes, expected.tmpl.num_classes, "template.num_classes");
  same(actual.tmpl.num_domains, expected.tmpl.num_domains, "template.num_domains");
  same(actual.tmpl.seed, expected.tmpl.seed, "template.seed");
  same(actual.bank.prompt_dim, expected.bank.prompt_dim, "bank.prompt_dim");
  same(actual.bank.input_dim, expected.bank.input_dim, "bank.input_dim");
  same(actual.bank.momentum_rate, expected.bank.momentum_rate, "bank.momentum_rate");
  same(actual.bank.seed, expected.bank.seed, "bank.seed");
  same(actual.tpg.input_dim, expected.tpg.input_dim, "tpg.input_dim");
  same(actual.tpg.feature_dim, expected.tpg.feature_dim, "tpg.feature_dim");
  same(actual.tpg.hidden, expected.tpg.hidden, "tpg.hidden");
  same(actual.tpg.key_dim, expected.tpg.key_dim, "tpg.key_dim");
  same(actual.tpg.prompt_dim, expected.tpg.prompt_dim, "tpg.prompt_dim");
  same(actual.tpg.crossed_pairing, expected.tpg.crossed_pairing, "tpg.crossed_pairing");
  same(actual.tpg.seed, expected.tpg.seed, "tpg.seed");
  same(actual.use_tst, expected.use_tst, "use_tst");
}

RowResult run_ablation_row(RunConfig cfg, AblationRow row, const Dataset& ds, const std::string& work_dir,
                           int workers) {
  if (work_dir.empty()) throw ContractError("run_ablation_row: work_dir must be nonempty");
  switch (row) {
    case AblationRow::kZeroShot: break;
    case AblationRow::kOnePhase: cfg.ablation.one_phase_mode = true; break;
    case AblationRow::kTwoPhase: break;
    case AblationRow::kNoMask: cfg.ablation.use_mask = false; break;
    case AblationRow::kNoTst: cfg.ablation.use_tst = false; break;
  }
  const ResolvedRun r = resolve(cfg);
  require_dataset_matches(r.data, ds.manifest);
  const SplitAssignment splits = make_splits(ds.manifest, r.split.protocol, r.split.holdout_domain,
                                             r.split.holdout_class_fraction, r.split.gallery_mode);

  RowResult out;
  out.name = to_string(row);
  const std::string dir = work_dir + "/" + out.name;

  Model<float> model = Model<float>::make(r.model, splits.seen_classes, splits.seen_domains);
  PromptMode mode = PromptMode::kNone;

  const bool trains_phase1 = row != AblationRow::kZeroShot;
  const bool trains_phase2 = trains_phase1 && !r.one_phase_mode;
  if (trains_phase1) {
    TrainConfig t1 = r.phase1;
    t1.workers = workers;
    t1.checkpoint_dir = dir;
    const TrainResult res1 = train_phase1(model, ds, splits, t1);
    out.phase1_epochs = res1.state.epochs_completed;
    model = model_from_checkpoint(load_checkpoint(res1.best_checkpoint));
    mode = PromptMode::kMeanPrompt;
    if (trains_phase2) {
      TrainConfig t2 = r.phase2;
      t2.workers = workers;
      t2.checkpoint_dir = dir;
      const TrainResult res2 = train_phase2(model, ds, splits, t2);
      out.phase2_epochs = res2.state.epochs_completed;
      model = model_from_checkpoint(load_checkpoint(res2.best_checkpoint));
      mode = PromptMode::kTpg;
    }
  }

  EvaluateOptions opts;
  opts.mode = mode;
  opts.ks = r.metric_ks;
  opts.workers = workers;
  const RetrievalReport report = evaluate(model, ds, splits, opts);
  out.mode = mode;
  out.metrics = report.metrics;
  return out;
}

std::vector<RowResult> run_ablation_grid(const RunConfig& cfg, std::span<const AblationRow> rows, const Dataset& ds,
                                         const std::string& work_dir, int workers) {
  std::vector<RowResult> out;
  out.reserve(rows.size());
  for (AblationRow row : rows) out.push_back(run_ablation_row(cfg, row, ds, work_dir, workers));
  return out;
}

std::string grid_to_json(std::span<const RowResult> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const RowResult& row : rows) {
    nlohmann::json map_at, prec_at;
    for (const auto& [k, v] : row.metrics.map_at) map_at[std::to_string(k)] = v;
    for (const auto& [k, v] : row.metrics.prec_at) prec_at[std::to_string(k)] = v;
    arr.push_back(nlohmann::json{{"name", row.name},
                                 {"mode", to_string(row.mode)},
                                 {"map_at", map_at},
                                 {"prec_at", prec_at},
                                 {"map_all", row.metrics.map_all},
                                 {"num_queries", row.metrics.num_queries},
                                 {"num_gallery", row.metrics.num_gallery},
                                 {"zero_relevant_queries", row.metrics.zero_relevant_queries},
                                 {"phase1_epochs", row.phase1_epochs},
                                 {"phase2_epochs", row.phase2_epochs}});
  }
  return nlohmann::json{{"rows", arr}}.dump(2) + "\n";
}

std::string grid_to_table(std::span<const RowResult> rows) {
  std::ostringstream out;
  if (rows.empty()) return "";
  const auto& ks = rows.front().metrics.ks;
  out << std::left << std::setw(11) << "row" << std::setw(13) << "mode";
  for (int k : ks) out << std::setw(10) << ("mAP@" + std::to_string(k));
  for (int k : ks) out << std::setw(10) << ("P@" + std::to_string(k));
  out << std::setw(10) << "mAP@all" << std::setw(7) << "p1_ep" << std::setw(7) << "p2_ep" << "\n";
  out << std::fixed << std::setprecision(4);
  for (const RowResult& row : rows) {
    out << std::setw(11) << row.name << std::setw(13) << to_string(row.mode);
    for (int k : ks) out << std::setw(10) << row.metrics.map_at.at(k);
    for (int k : ks) out << std::setw(10) << row.metrics.prec_at.at(k);
    out << std::setw(10) << row.metrics.map_all << std::setw(7) << row.phase1_epochs << std::setw(7)
        << row.phase2_epochs << "\n";
  }
  return out.str();
}

}  // namespace ucdr
