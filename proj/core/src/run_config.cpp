#include "ucdr/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "ucdr/errors.hpp"

namespace ucdr {
namespace {

using nlohmann::json;

constexpr std::uint64_t kSaltData = 1;
constexpr std::uint64_t kSaltImage = 2;
constexpr std::uint64_t kSaltText = 3;
constexpr std::uint64_t kSaltTemplate = 4;
constexpr std::uint64_t kSaltBank = 5;
constexpr std::uint64_t kSaltTpg = 6;
constexpr std::uint64_t kSaltPhase1 = 7;
constexpr std::uint64_t kSaltPhase2 = 8;

[[noreturn]] void bad(const std::string& msg) { throw ConfigError("config: " + msg); }

std::string join_key(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

const json* find(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad("'" + where + "' must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) bad("unknown key '" + join_key(where, item.key()) + "'");
  }
}

void read_int(const json& j, const std::string& where, const char* key, int& out) {
  const json* v = find(j, key);
  if (v == nullptr) return;
  if (!v->is_number_integer() && !v->is_number_unsigned()) bad("'" + join_key(where, key) + "' must be an integer");
  const auto wide = v->get<std::int64_t>();
  if (wide < std::numeric_limits<int>::min() || wide > std::numeric_limits<int>::max()) {
    bad("'" + join_key(where, key) + "' is out of range");
  }
  out = static_cast<int>(wide);
}

void read_u64(const json& j, const std::string& where, const char* key, std::uint64_t& out) {
  const json* v = find(j, key);
  if (v == nullptr) return;
  if (!v->is_number_unsigned()) bad("'" + join_key(where, key) + "' must be a nonnegative integer");
  out = v->get<std::uint64_t>();
}

void read_double(const json& j, const std::string& where, const char* key, double& out) {
  const json* v = find(j, key);
  if (v == nullptr) return;
  if (!v->is_number()) bad("'" + join_key(where, key) + "' must be a number");
  out = v->get<double>();
}

void read_bool(const json& j, const std::string& where, const char* key, bool& out) {
  const json* v = find(j, key);
  if (v == nullptr) return;
  if (!v->is_boolean()) bad("'" + join_key(where, key) + "' must be a boolean");
  out = v->get<bool>();
}

void read_string(const json& j, const std::string& where, const char* key, std::string& out) {
  const json* v = find(j, key);
  if (v == nullptr) return;
  if (!v->is_string()) bad("'" + join_key(where, key) + "' must be a string");
  out = v->get<std::string>();
}

void read_int_list(const json& j, const std::string& where, const char* key, std::vector<int>& out) {
  const json* v = find(j, key);
  if (v == nullptr) return;
  if (!v->is_array()) bad("'" + join_key(where, key) + "' must be an array of integers");
  std::vector<int> values;
  values.reserve(v->size());
  for (const auto& e : *v) {
    if (!e.is_number_integer() && !e.is_number_unsigned()) {
      bad("'" + join_key(where, key) + "' must be an array of integers");
    }
    values.push_back(e.get<int>());
  }
  out = std::move(values);
}

void parse_paths(const json& j, PathSpec& out) {
  check_keys(j, "paths", {"data_dir", "run_dir"});
  read_string(j, "paths", "data_dir", out.data_dir);
  read_string(j, "paths", "run_dir", out.run_dir);
}

void parse_data(const json& j, GeneratorConfig& out) {
  check_keys(j, "data",
             {"num_classes", "num_domains", "tokens", "token_dim", "samples_per_cell", "class_separation",
              "domain_transform_scale", "noise_sigma"});
  read_int(j, "data", "num_classes", out.num_classes);
  read_int(j, "data", "num_domains", out.num_domains);
  read_int(j, "data", "tokens", out.tokens);
  read_int(j, "data", "token_dim", out.token_dim);
  read_int(j, "data", "samples_per_cell", out.samples_per_cell);
  read_double(j, "data", "class_separation", out.class_separation);
  read_double(j, "data", "domain_transform_scale", out.domain_transform_scale);
  read_double(j, "data", "noise_sigma", out.noise_sigma);
}

void parse_split(const json& j, SplitSpec& out) {
  check_keys(j, "split", {"protocol", "holdout_domain", "holdout_class_fraction", "gallery_mode"});
  std::string protocol = to_string(out.protocol);
  std::string gallery = to_string(out.gallery_mode);
  read_string(j, "split", "protocol", protocol);
  read_string(j, "split", "gallery_mode", gallery);
  out.protocol = protocol_from_string(protocol);
  out.gallery_mode = gallery_mode_from_string(gallery);
  if (j.contains("holdout_domain")) {
    if (j.at("holdout_domain").is_null()) {
      out.holdout_domain.reset();
    } else {
      int domain = 0;
      read_int(j, "split", "holdout_domain", domain);
      out.holdout_domain = domain;
    }
  }
  read_double(j, "split", "holdout_class_fraction", out.holdout_class_fraction);
}

void parse_model(const json& j, ModelSpec& out) {
  check_keys(j, "model",
             {"embed_dim", "image_blocks", "image_heads", "image_ffn_hidden", "text_dim", "text_blocks", "text_heads",
              "text_ffn_hidden", "context_tokens", "prompt_dim", "momentum_rate", "tpg_hidden", "tpg_key_dim"});
  read_int(j, "model", "embed_dim", out.embed_dim);
  read_int(j, "model", "image_blocks", out.image_blocks);
  read_int(j, "model", "image_heads", out.image_heads);
  read_int(j, "model", "image_ffn_hidden", out.image_ffn_hidden);
  read_int(j, "model", "text_dim", out.text_dim);
  read_int(j, "model", "text_blocks", out.text_blocks);
  read_int(j, "model", "text_heads", out.text_heads);
  read_int(j, "model", "text_ffn_hidden", out.text_ffn_hidden);
  read_int(j, "model", "context_tokens", out.context_tokens);
  read_int(j, "model", "prompt_dim", out.prompt_dim);
  read_double(j, "model", "momentum_rate", out.momentum_rate);
  read_int(j, "model", "tpg_hidden", out.tpg_hidden);
  read_int(j, "model", "tpg_key_dim", out.tpg_key_dim);
}

void parse_train(const json& j, const std::string& where, TrainSpec& out) {
  check_keys(j, where,
             {"batch_size", "max_epochs", "early_stop_patience", "lr_initial", "lr_final", "lr_decay_epochs",
              "queue_capacity", "val_queries"});
  read_int(j, where, "batch_size", out.batch_size);
  read_int(j, where, "max_epochs", out.max_epochs);
  read_int(j, where, "early_stop_patience", out.early_stop_patience);
  read_double(j, where, "lr_initial", out.lr_initial);
  read_double(j, where, "lr_final", out.lr_final);
  read_int(j, where, "lr_decay_epochs", out.lr_decay_epochs);
  read_int(j, where, "queue_capacity", out.queue_capacity);
  read_int(j, where, "val_queries", out.val_queries);
}

void parse_loss(const json& j, LossSpec& out) {
  check_keys(j, "loss", {"margin", "temperature"});
  read_double(j, "loss", "margin", out.margin);
  read_double(j, "loss", "temperature", out.temperature);
}

void parse_metrics(const json& j, std::vector<int>& ks) {
  check_keys(j, "metrics", {"ks"});
  read_int_list(j, "metrics", "ks", ks);
}

void parse_ablation(const json& j, AblationSpec& out) {
  check_keys(j, "ablation",
             {"use_mask", "use_tst", "triplet_pairs", "use_momentum", "crossed_tpg_pairing", "one_phase_mode"});
  read_bool(j, "ablation", "use_mask", out.use_mask);
  read_bool(j, "ablation", "use_tst", out.use_tst);
  read_int(j, "ablation", "triplet_pairs", out.triplet_pairs);
  read_bool(j, "ablation", "use_momentum", out.use_momentum);
  read_bool(j, "ablation", "crossed_tpg_pairing", out.crossed_tpg_pairing);
  read_bool(j, "ablation", "one_phase_mode", out.one_phase_mode);
}

void check_fields(const RunConfig& cfg) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) bad(msg);
  };
  require(cfg.schema_version == 1,
          "schema_version " + std::to_string(cfg.schema_version) + " is unsupported (expected 1)");
  require(!cfg.paths.data_dir.empty(), "paths.data_dir must be nonempty");
  require(!cfg.paths.run_dir.empty(), "paths.run_dir must be nonempty");

  const auto& d = cfg.data;
  require(d.num_classes >= 2, "data.num_classes must be >= 2");
  require(d.num_domains >= 2, "data.num_domains must be >= 2");
  require(d.tokens >= 1, "data.tokens must be >= 1");
  require(d.token_dim >= 1, "data.token_dim must be >= 1");
  require(d.samples_per_cell >= 2, "data.samples_per_cell must be >= 2");
  require(d.class_separation > 0.0, "data.class_separation must be > 0");
  require(d.domain_transform_scale >= 0.0, "data.domain_transform_scale must be >= 0");
  require(d.noise_sigma >= 0.0, "data.noise_sigma must be >= 0");

  const auto& s = cfg.split;
  require(s.holdout_class_fraction >= 0.0 && s.holdout_class_fraction < 1.0,
          "split.holdout_class_fraction must be in [0, 1)");
  if (s.protocol == Protocol::kUdCdr) {
    require(s.holdout_class_fraction == 0.0, "split.holdout_class_fraction must be 0 under udcdr");
  } else {
    require(s.holdout_class_fraction > 0.0, "split.holdout_class_fraction must be > 0 when classes are held out");
  }
  if (s.holdout_domain.has_value()) {
    const int h = *s.holdout_domain;
    require(h >= 0 && h < d.num_domains, "split.holdout_domain must name a domain");
    if (s.protocol != Protocol::kUcCdr) {
      require(h != 0, "split.holdout_domain 0 is the gallery domain and cannot be held out");
    }
  }

  const auto& m = cfg.model;
  require(m.embed_dim >= 1, "model.embed_dim must be >= 1");
  require(m.image_blocks >= 1, "model.image_blocks must be >= 1");
  require(m.image_heads >= 1, "model.image_heads must be >= 1");
  require(m.embed_dim % m.image_heads == 0, "model.embed_dim must be divisible by model.image_heads");
  require(m.image_ffn_hidden >= 1, "model.image_ffn_hidden must be >= 1");
  require(m.text_dim >= 1, "model.text_dim must be >= 1");
  require(m.text_blocks >= 1, "model.text_blocks must be >= 1");
  require(m.text_heads >= 1, "model.text_heads must be >= 1");
  require(m.text_dim % m.text_heads == 0, "model.text_dim must be divisible by model.text_heads");
  require(m.text_ffn_hidden >= 1, "model.text_ffn_hidden must be >= 1");
  require(m.context_tokens >= 1, "model.context_tokens must be >= 1");
  require(m.prompt_dim >= 1, "model.prompt_dim must be >= 1");
  require(m.momentum_rate > 0.0 && m.momentum_rate <= 1.0, "model.momentum_rate must be in (0, 1]");
  require(m.tpg_hidden >= 1, "model.tpg_hidden must be >= 1");
  require(m.tpg_key_dim >= 1, "model.tpg_key_dim must be >= 1");

  require(cfg.loss.margin >= 0.0, "loss.margin must be >= 0");
  require(cfg.loss.temperature > 0.0, "loss.temperature must be > 0");
  require(cfg.ablation.triplet_pairs >= 0, "ablation.triplet_pairs must be >= 0");

  require(!cfg.metric_ks.empty(), "metrics.ks must be nonempty");
  for (int k : cfg.metric_ks) require(k >= 1, "metrics.ks entries must be >= 1");
}

TrainConfig make_train(const RunConfig& cfg, const TrainSpec& spec, int phase, std::uint64_t salt) {
  TrainConfig t;
  t.phase = phase;
  t.batch_size = spec.batch_size;
  t.max_epochs = spec.max_epochs;
  t.early_stop_patience = spec.early_stop_patience;
  t.lr_initial = spec.lr_initial;
  t.lr_final = spec.lr_final;
  t.lr_decay_epochs = spec.lr_decay_epochs;
  t.loss.margin = static_cast<float>(cfg.loss.margin);
  t.loss.temperature = static_cast<float>(cfg.loss.temperature);
  t.loss.pair_count = cfg.ablation.triplet_pairs;
  t.seed = derive_seed(cfg.seed, salt);
  t.queue_capacity = spec.queue_capacity;
  t.use_momentum = cfg.ablation.use_momentum;
  t.use_mask = cfg.ablation.use_mask;
  t.val_queries = spec.val_queries;
  t.metric_ks = cfg.metric_ks;
  return t;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

ResolvedRun resolve(const RunConfig& cfg) {
  check_fields(cfg);
  ResolvedRun r;
  r.data = cfg.data;
  r.data.seed = derive_seed(cfg.seed, kSaltData);

  const auto& m = cfg.model;
  r.model.image = {cfg.data.tokens, cfg.data.token_dim,  m.embed_dim, m.image_blocks, m.image_heads,
                   m.image_ffn_hidden, derive_seed(cfg.seed, kSaltImage)};
  r.model.text = {m.text_dim,        m.embed_dim,  4 + m.context_tokens, m.text_blocks, m.text_heads,
                  m.text_ffn_hidden, derive_seed(cfg.seed, kSaltText)};
  r.model.tmpl = {m.text_dim, m.context_tokens, cfg.data.num_classes, cfg.data.num_domains,
                  derive_seed(cfg.seed, kSaltTemplate)};
  r.model.bank = {m.prompt_dim, cfg.data.token_dim, m.momentum_rate, derive_seed(cfg.seed, kSaltBank)};
  r.model.tpg = {cfg.data.token_dim,        m.embed_dim, m.tpg_hidden, m.tpg_key_dim, m.prompt_dim,
                 cfg.ablation.crossed_tpg_pairing, derive_seed(cfg.seed, kSaltTpg)};
  r.model.use_tst = cfg.ablation.use_tst;
  validate_model_config(r.model);

  r.phase1 = make_train(cfg, cfg.phase1, 1, kSaltPhase1);
  r.phase2 = make_train(cfg, cfg.phase2, 2, kSaltPhase2);
  validate(r.phase1);
  validate(r.phase2);

  r.split = cfg.split;
  if (!r.split.holdout_domain.has_value()) r.split.holdout_domain = cfg.data.num_domains - 1;
  r.metric_ks = cfg.metric_ks;
  r.one_phase_mode = cfg.ablation.one_phase_mode;
  return r;
}

void validate(const RunConfig& cfg) { resolve(cfg); }

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    bad(std::string("invalid JSON: ") + e.what());
  }
  check_keys(j, "",
             {"schema_version", "seed", "paths", "data", "split", "model", "train_phase1", "train_phase2", "loss",
              "metrics", "ablation"});
  RunConfig cfg;
  read_int(j, "", "schema_version", cfg.schema_version);
  read_u64(j, "", "seed", cfg.seed);
  if (const json* v = find(j, "paths")) parse_paths(*v, cfg.paths);
  if (const json* v = find(j, "data")) parse_data(*v, cfg.data);
  if (const json* v = find(j, "split")) parse_split(*v, cfg.split);
  if (const json* v = find(j, "model")) parse_model(*v, cfg.model);
  if (const json* v = find(j, "train_phase1")) parse_train(*v, "train_phase1", cfg.phase1);
  if (const json* v = find(j, "train_phase2")) parse_train(*v, "train_phase2", cfg.phase2);
  if (const json* v = find(j, "loss")) parse_loss(*v, cfg.loss);
  if (const json* v = find(j, "metrics")) parse_metrics(*v, cfg.metric_ks);
  if (const json* v = find(j, "ablation")) parse_ablation(*v, cfg.ablation);
  validate(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot read '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("config: failed while reading '" + path + "'");
  return parse_run_config(buffer.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
  json train1{{"batch_size", cfg.phase1.batch_size},
              {"max_epochs", cfg.phase1.max_epochs},
              {"early_stop_patience", cfg.phase1.early_stop_patience},
              {"lr_initial", cfg.phase1.lr_initial},
              {"lr_final", cfg.phase1.lr_final},
              {"lr_decay_epochs", cfg.phase1.lr_decay_epochs},
              {"queue_capacity", cfg.phase1.queue_capacity},
              {"val_queries", cfg.phase1.val_queries}};
  json train2{{"batch_size", cfg.phase2.batch_size},
              {"max_epochs", cfg.phase2.max_epochs},
              {"early_stop_patience", cfg.phase2.early_stop_patience},
              {"lr_initial", cfg.phase2.lr_initial},
              {"lr_final", cfg.phase2.lr_final},
              {"lr_decay_epochs", cfg.phase2.lr_decay_epochs},
              {"queue_capacity", cfg.phase2.queue_capacity},
              {"val_queries", cfg.phase2.val_queries}};
  json j{
      {"schema_version", cfg.schema_version},
      {"seed", cfg.seed},
      {"paths", json{{"data_dir", cfg.paths.data_dir}, {"run_dir", cfg.paths.run_dir}}},
      {"data",
       json{{"num_classes", cfg.data.num_classes},
            {"num_domains", cfg.data.num_domains},
            {"tokens", cfg.data.tokens},
            {"token_dim", cfg.data.token_dim},
            {"samples_per_cell", cfg.data.samples_per_cell},
            {"class_separation", cfg.data.class_separation},
            {"domain_transform_scale", cfg.data.domain_transform_scale},
            {"noise_sigma", cfg.data.noise_sigma}}},
      {"split",
       json{{"protocol", to_string(cfg.split.protocol)},
            {"holdout_domain", cfg.split.holdout_domain.has_value() ? json(*cfg.split.holdout_domain) : json()},
            {"holdout_class_fraction", cfg.split.holdout_class_fraction},
            {"gallery_mode", to_string(cfg.split.gallery_mode)}}},
      {"model",
       json{{"embed_dim", cfg.model.embed_dim},
            {"image_blocks", cfg.model.image_blocks},
            {"image_heads", cfg.model.image_heads},
            {"image_ffn_hidden", cfg.model.image_ffn_hidden},
            {"text_dim", cfg.model.text_dim},
            {"text_blocks", cfg.model.text_blocks},
            {"text_heads", cfg.model.text_heads},
            {"text_ffn_hidden", cfg.model.text_ffn_hidden},
            {"context_tokens", cfg.model.context_tokens},
            {"prompt_dim", cfg.model.prompt_dim},
            {"momentum_rate", cfg.model.momentum_rate},
            {"tpg_hidden", cfg.model.tpg_hidden},
            {"tpg_key_dim", cfg.model.tpg_key_dim}}},
      {"train_phase1", train1},
      {"train_phase2", train2},
      {"loss", json{{"margin", cfg.loss.margin}, {"temperature", cfg.loss.temperature}}},
      {"metrics", json{{"ks", cfg.metric_ks}}},
      {"ablation",
       json{{"use_mask", cfg.ablation.use_mask},
            {"use_tst", cfg.ablation.use_tst},
            {"triplet_pairs", cfg.ablation.triplet_pairs},
            {"use_momentum", cfg.ablation.use_momentum},
            {"crossed_tpg_pairing", cfg.ablation.crossed_tpg_pairing},
            {"one_phase_mode", cfg.ablation.one_phase_mode}}},
  };
  return j.dump(2) + "\n";
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("config: cannot write '" + path + "'");
  out << run_config_to_json(cfg);
  if (!out) throw IoError("config: failed while writing '" + path + "'");
}

std::optional<std::uint64_t> env_seed_override() {
  const char* raw = std::getenv("UCDR_SEED");
  if (raw == nullptr) return std::nullopt;
  const std::string text(raw);
  std::uint64_t value = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value, 10);
  if (text.empty() || ec != std::errc() || ptr != end) {
    bad("UCDR_SEED must be a nonnegative integer, got '" + text + "'");
  }
  return value;
}

}  // namespace ucdr
