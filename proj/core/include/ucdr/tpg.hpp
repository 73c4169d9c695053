#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ucdr/prompts.hpp"
#include "ucdr/tensor.hpp"

namespace ucdr {

struct TpgConfig {
  int input_dim = 64;    // token width
  int feature_dim = 32;  // content feature width
  int hidden = 64;       // content MLP hidden width
  int key_dim = 16;      // attention key width
  int prompt_dim = 16;   // prompt bank row width
  // Pair each attention vector with the opposite bank when forming prompt
  // parts; requires equal class and domain row counts.
  bool crossed_pairing = false;
  std::uint64_t seed = 1;
};

// Everything the generator produces for one sample. Weight vectors span the
// full banks with exact zeros at excluded rows; parts are the weighted row
// mixtures before projection.
template <typename T>
struct TargetPrompt {
  Tensor<T> class_weights;   // [class rows]
  Tensor<T> domain_weights;  // [domain rows]
  Tensor<T> class_part;      // [prompt_dim]
  Tensor<T> domain_part;     // [prompt_dim]
  Tensor<T> prompt;          // [input_dim]
};

// Builds prompts for samples whose class or domain has no trained row: a
// small MLP summarizes the raw tokens, attends over the masked prompt banks,
// and the attention-weighted rows are projected through the bank's shared
// projection.
template <typename T>
class TargetPromptGenerator {
 public:
  TargetPromptGenerator() = default;
  explicit TargetPromptGenerator(const TpgConfig& cfg);

  // Content summary of a raw token grid: [feature_dim].
  Tensor<T> content_feature(const Tensor<T>& tokens) const;

  // Soft attention of `content` over the rows of `masked_bank`, restricted
  // to rows whose `excluded` flag is zero. Excluded rows receive weight
  // exactly 0; the rest softmax to 1. All rows excluded is an error.
  Tensor<T> attend(const Tensor<T>& content, const Tensor<T>& masked_bank,
                   std::span<const std::uint8_t> excluded) const;

  TargetPrompt<T> generate_full(const Tensor<T>& tokens, const PromptBank<T>& bank,
                                std::span<const std::uint8_t> excluded_classes,
                                std::span<const std::uint8_t> excluded_domains) const;

  Tensor<T> generate(const Tensor<T>& tokens, const PromptBank<T>& bank,
                     std::span<const std::uint8_t> excluded_classes,
                     std::span<const std::uint8_t> excluded_domains) const {
    return generate_full(tokens, bank, excluded_classes, excluded_domains).prompt;
  }

  std::vector<Tensor<T>> parameters() const;
  const TpgConfig& config() const { return cfg_; }

  Tensor<T>& mlp_w1() { return mlp_w1_; }
  Tensor<T>& mlp_b1() { return mlp_b1_; }
  Tensor<T>& mlp_w2() { return mlp_w2_; }
  Tensor<T>& mlp_b2() { return mlp_b2_; }
  Tensor<T>& query_w() { return query_w_; }
  Tensor<T>& query_b() { return query_b_; }
  Tensor<T>& key_w() { return key_w_; }
  Tensor<T>& key_b() { return key_b_; }

 private:
  TpgConfig cfg_;
  Tensor<T> mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;  // content MLP
  Tensor<T> query_w_, query_b_;                  // [feature_dim x key_dim], [key_dim]
  Tensor<T> key_w_, key_b_;                      // [prompt_dim x key_dim], [key_dim]
};

}  // namespace ucdr
