#include "ucdr/pipeline.hpp"

#include <algorithm>
#include <string>

#include "ucdr/errors.hpp"
#include "ucdr/ops.hpp"

namespace ucdr {

void validate_model_config(const ModelConfig& cfg) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model: " + msg);
  };
  require(cfg.bank.input_dim == cfg.image.input_dim,
          "prompt projection width " + std::to_string(cfg.bank.input_dim) + " must match encoder input width " +
              std::to_string(cfg.image.input_dim));
  require(cfg.tpg.input_dim == cfg.image.input_dim, "generator input width must match encoder input width");
  require(cfg.tpg.prompt_dim == cfg.bank.prompt_dim, "generator prompt width must match bank prompt width");
  require(cfg.tmpl.text_dim == cfg.text.text_dim, "template width must match text encoder width");
  require(cfg.text.embed_dim == cfg.image.embed_dim, "text and image embeddings must share a width");
  const int seq = 3 + 1 + cfg.tmpl.context_tokens;
  require(cfg.text.max_tokens >= seq, "text encoder supports " + std::to_string(cfg.text.max_tokens) +
                                          " tokens but the template needs " + std::to_string(seq));
}

template <typename T>
Model<T> Model<T>::make(const ModelConfig& cfg, std::vector<int> seen_classes, std::vector<int> seen_domains) {
  validate_model_config(cfg);
  if (seen_classes.empty() || seen_domains.empty()) {
    throw ConfigError("model: seen class and domain lists must be nonempty");
  }
  Model<T> m;
  m.cfg = cfg;
  m.seen_classes = std::move(seen_classes);
  m.seen_domains = std::move(seen_domains);
  std::sort(m.seen_classes.begin(), m.seen_classes.end());
  std::sort(m.seen_domains.begin(), m.seen_domains.end());
  m.image_encoder = ImageEncoder<T>(cfg.image);
  m.semantic_template = SemanticTemplate<T>(cfg.tmpl);
  m.semantic_template.set_use_domain_context(cfg.use_tst);
  m.semantic_template.set_seen(m.seen_classes, m.seen_domains);
  m.text_encoder = TextEncoder<T>(cfg.text);
  m.bank = PromptBank<T>(cfg.bank, m.seen_classes, m.seen_domains);
  m.tpg = TargetPromptGenerator<T>(cfg.tpg);
  return m;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::phase1_parameters() const {
  std::vector<Tensor<T>> out{bank.class_prompts(), bank.domain_prompts(), bank.projection_w(), bank.projection_b()};
  if (cfg.use_tst) out.push_back(semantic_template.domain_context());
  return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::phase2_parameters() const {
  return tpg.parameters();
}

template <typename T>
Tensor<T> Model<T>::text_feature_matrix(int domain_id) const {
  std::vector<Tensor<T>> rows;
  rows.reserve(seen_classes.size());
  const std::size_t e = static_cast<std::size_t>(cfg.text.embed_dim);
  for (int c : seen_classes) {
    rows.push_back(reshape(encode_text(text_encoder, semantic_template, c, domain_id), {1, e}));
  }
  return concat(std::span<const Tensor<T>>(rows.data(), rows.size()), 0);
}

template <typename T>
std::size_t Model<T>::text_row_of(int class_id) const {
  auto it = std::lower_bound(seen_classes.begin(), seen_classes.end(), class_id);
  if (it == seen_classes.end() || *it != class_id) {
    throw ContractError("model: class " + std::to_string(class_id) + " is not in the seen vocabulary");
  }
  return static_cast<std::size_t>(it - seen_classes.begin());
}

template <typename T>
Tensor<T> Model<T>::mean_prompt() const {
  GradPause<T> pause;
  auto combined = concat({mean_rows(bank.class_prompts()), mean_rows(bank.domain_prompts())}, 0);
  return bank.project(combined);
}

template <typename T>
std::vector<std::uint8_t> Model<T>::class_exclusion(std::optional<int> class_id) const {
  std::vector<std::uint8_t> flags(seen_classes.size(), 0);
  if (class_id) flags[bank.class_row(*class_id)] = 1;
  return flags;
}

template <typename T>
std::vector<std::uint8_t> Model<T>::domain_exclusion(std::optional<int> domain_id) const {
  std::vector<std::uint8_t> flags(seen_domains.size(), 0);
  if (domain_id) flags[bank.domain_row(*domain_id)] = 1;
  return flags;
}

template struct Model<float>;
template struct Model<double>;

}  // namespace ucdr
