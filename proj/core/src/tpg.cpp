#include "ucdr/tpg.hpp"

#include <cmath>
#include <string>

#include "ucdr/errors.hpp"
#include "ucdr/ops.hpp"
#include "ucdr/util.hpp"

namespace ucdr {

namespace {
constexpr std::uint64_t kSaltTpg = 0x799;
}

template <typename T>
TargetPromptGenerator<T>::TargetPromptGenerator(const TpgConfig& cfg) : cfg_(cfg) {
  if (cfg.input_dim < 1 || cfg.feature_dim < 1 || cfg.hidden < 1 || cfg.key_dim < 1 || cfg.prompt_dim < 1) {
    throw ConfigError("target prompt generator: all dimensions must be >= 1");
  }
  auto rng = make_rng(cfg.seed, {kSaltTpg});
  const auto din = static_cast<std::size_t>(cfg.input_dim);
  const auto dg = static_cast<std::size_t>(cfg.feature_dim);
  const auto h = static_cast<std::size_t>(cfg.hidden);
  const auto dk = static_cast<std::size_t>(cfg.key_dim);
  const auto m = static_cast<std::size_t>(cfg.prompt_dim);
  mlp_w1_ = Tensor<T>::gaussian({din, h}, rng, T(1) / std::sqrt(static_cast<T>(din)));
  mlp_b1_ = Tensor<T>::zeros({h});
  mlp_w2_ = Tensor<T>::gaussian({h, dg}, rng, T(1) / std::sqrt(static_cast<T>(h)));
  mlp_b2_ = Tensor<T>::zeros({dg});
  query_w_ = Tensor<T>::gaussian({dg, dk}, rng, T(1) / std::sqrt(static_cast<T>(dg)));
  query_b_ = Tensor<T>::zeros({dk});
  key_w_ = Tensor<T>::gaussian({m, dk}, rng, T(1) / std::sqrt(static_cast<T>(m)));
  key_b_ = Tensor<T>::zeros({dk});
}

template <typename T>
Tensor<T> TargetPromptGenerator<T>::content_feature(const Tensor<T>& tokens) const {
  if (tokens.rank() != 2 || tokens.shape()[1] != static_cast<std::size_t>(cfg_.input_dim)) {
    throw ContractError("target prompt generator: expected tokens [*, " + std::to_string(cfg_.input_dim) +
                        "], got " + shape_to_string(tokens.shape()));
  }
  auto pooled = reshape(mean_rows(tokens), {1, static_cast<std::size_t>(cfg_.input_dim)});
  auto hidden = relu(add(matmul(pooled, mlp_w1_), mlp_b1_));
  auto out = add(matmul(hidden, mlp_w2_), mlp_b2_);
  return reshape(out, {static_cast<std::size_t>(cfg_.feature_dim)});
}

template <typename T>
Tensor<T> TargetPromptGenerator<T>::attend(const Tensor<T>& content, const Tensor<T>& masked_bank,
                                           std::span<const std::uint8_t> excluded) const {
  if (content.rank() != 1 || content.shape()[0] != static_cast<std::size_t>(cfg_.feature_dim)) {
    throw ContractError("attend: expected content [" + std::to_string(cfg_.feature_dim) + "], got " +
                        shape_to_string(content.shape()));
  }
  if (masked_bank.rank() != 2 || masked_bank.shape()[1] != static_cast<std::size_t>(cfg_.prompt_dim)) {
    throw ContractError("attend: expected bank rows [*, " + std::to_string(cfg_.prompt_dim) + "], got " +
                        shape_to_string(masked_bank.shape()));
  }
  const std::size_t rows = masked_bank.shape()[0];
  if (excluded.size() != rows) {
    throw ContractError("attend: " + std::to_string(excluded.size()) + " exclusion flags for " +
                        std::to_string(rows) + " rows");
  }
  std::vector<std::size_t> kept;
  kept.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!excluded[r]) kept.push_back(r);
  }
  if (kept.empty()) {
    throw ContractError("attend: every row is excluded; nothing to attend over");
  }

  auto query = add(matmul(reshape(content, {1, static_cast<std::size_t>(cfg_.feature_dim)}), query_w_), query_b_);
  auto keys = add(matmul(gather_rows(masked_bank, std::span<const std::size_t>(kept)), key_w_), key_b_);
  auto logits = reshape(matmul(keys, transpose(query)), {kept.size()});
  auto weights = softmax(scale(logits, T(1) / std::sqrt(static_cast<T>(cfg_.key_dim))));
  return scatter(weights, std::span<const std::size_t>(kept), rows);
}

template <typename T>
TargetPrompt<T> TargetPromptGenerator<T>::generate_full(const Tensor<T>& tokens, const PromptBank<T>& bank,
                                                        std::span<const std::uint8_t> excluded_classes,
                                                        std::span<const std::uint8_t> excluded_domains) const {
  if (bank.config().prompt_dim != cfg_.prompt_dim) {
    throw ConfigError("target prompt generator: prompt_dim " + std::to_string(cfg_.prompt_dim) +
                      " does not match bank prompt_dim " + std::to_string(bank.config().prompt_dim));
  }
  const std::size_t class_rows = bank.class_prompts().shape()[0];
  const std::size_t domain_rows = bank.domain_prompts().shape()[0];
  if (cfg_.crossed_pairing && class_rows != domain_rows) {
    throw ConfigError("target prompt generator: crossed pairing needs equal row counts, got " +
                      std::to_string(class_rows) + " classes vs " + std::to_string(domain_rows) + " domains");
  }

  auto masked_classes = mask_out(bank.class_prompts(), excluded_classes);
  auto masked_domains = mask_out(bank.domain_prompts(), excluded_domains);

  TargetPrompt<T> out;
  auto content = content_feature(tokens);
  out.class_weights = attend(content, masked_classes, excluded_classes);
  out.domain_weights = attend(content, masked_domains, excluded_domains);

  const auto m = static_cast<std::size_t>(cfg_.prompt_dim);
  auto mix = [&](const Tensor<T>& weights, const Tensor<T>& rows) {
    return reshape(matmul(reshape(weights, {1, weights.size()}), rows), {m});
  };
  if (cfg_.crossed_pairing) {
    out.class_part = mix(out.class_weights, masked_domains);
    out.domain_part = mix(out.domain_weights, masked_classes);
  } else {
    out.class_part = mix(out.class_weights, masked_classes);
    out.domain_part = mix(out.domain_weights, masked_domains);
  }
  out.prompt = bank.project(concat({out.class_part, out.domain_part}, 0));
  return out;
}

template <typename T>
std::vector<Tensor<T>> TargetPromptGenerator<T>::parameters() const {
  return {mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_, query_w_, query_b_, key_w_, key_b_};
}

template class TargetPromptGenerator<float>;
template class TargetPromptGenerator<double>;

}  // namespace ucdr
