#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ucdr/encoders.hpp"
#include "ucdr/prompts.hpp"
#include "ucdr/tensor.hpp"
#include "ucdr/tpg.hpp"

namespace ucdr {

// Every architectural knob in one place; checkpoints echo this so they are
// self-describing.
struct ModelConfig {
  ImageEncoderConfig image;
  TextEncoderConfig text;
  SemanticTemplateConfig tmpl;
  PromptBankConfig bank;
  TpgConfig tpg;
  bool use_tst = true;  // trainable text-side domain context
};

void validate_model_config(const ModelConfig& cfg);

// The full two-branch model over a fixed seen-label vocabulary. Encoders are
// frozen functions of their seeds; the prompt bank, the text-side domain
// context, and the target prompt generator carry all trainable state.
template <typename T>
struct Model {
  ModelConfig cfg;
  std::vector<int> seen_classes;
  std::vector<int> seen_domains;
  ImageEncoder<T> image_encoder;
  SemanticTemplate<T> semantic_template;
  TextEncoder<T> text_encoder;
  PromptBank<T> bank;
  TargetPromptGenerator<T> tpg;

  static Model make(const ModelConfig& cfg, std::vector<int> seen_classes, std::vector<int> seen_domains);

  // Phase-1 trainables: prompt rows, the shared projection, and (with
  // use_tst) the text domain context. Phase-2 trainables: generator only.
  std::vector<Tensor<T>> phase1_parameters() const;
  std::vector<Tensor<T>> phase2_parameters() const;

  // Unit-norm text features for every seen class under one domain: [K x E],
  // row order following seen_classes. On the tape via domain_context.
  Tensor<T> text_feature_matrix(int domain_id) const;

  // Row of class_id within text_feature_matrix; ContractError when unseen.
  std::size_t text_row_of(int class_id) const;

  // Label-free prompt: the projected mean class and domain rows. Detached.
  Tensor<T> mean_prompt() const;

  // Exclusion flags over bank rows for one sample's true labels; empty
  // optionals exclude nothing (the test-time setting).
  std::vector<std::uint8_t> class_exclusion(std::optional<int> class_id) const;
  std::vector<std::uint8_t> domain_exclusion(std::optional<int> domain_id) const;
};

template <typename T>
std::int64_t count_parameters(const std::vector<Tensor<T>>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += static_cast<std::int64_t>(p.size());
  return n;
}

}  // namespace ucdr
