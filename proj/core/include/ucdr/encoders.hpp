#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "ucdr/ops.hpp"
#include "ucdr/tensor.hpp"

namespace ucdr {

// One pre-norm transformer block: multi-head self-attention and a relu MLP,
// both behind residual connections.
template <typename T>
struct TransformerBlock {
  TransformerBlock() = default;
  TransformerBlock(int width, int heads, int ffn_hidden, std::mt19937& rng);

  Tensor<T> forward(const Tensor<T>& x) const;  // [rows x width] -> same shape

  void collect_parameters(std::vector<Tensor<T>>& out) const;

  int width = 0;
  int heads = 0;
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  std::vector<Tensor<T>> wq, wk, wv;  // per head [width x head_dim]
  Tensor<T> wo;                       // [width x width]
  Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct ImageEncoderConfig {
  int tokens = 16;
  int input_dim = 64;
  int embed_dim = 32;
  int blocks = 2;
  int heads = 4;
  int ffn_hidden = 64;
  std::uint64_t seed = 1;
};

// Frozen randomly initialized vision transformer. Weights never receive
// gradients, but gradients flow through the encoder to a prompt added to the
// input tokens.
template <typename T>
class ImageEncoder {
 public:
  ImageEncoder() = default;
  explicit ImageEncoder(const ImageEncoderConfig& cfg);

  // tokens: [tokens x input_dim]; prompt, when given, is a [input_dim] row
  // added to every token. A zero prompt reproduces the promptless output
  // exactly. Returns a unit-norm [embed_dim] embedding.
  Tensor<T> encode(const Tensor<T>& tokens, const Tensor<T>* prompt = nullptr) const;

  const ImageEncoderConfig& config() const { return cfg_; }
  std::vector<Tensor<T>> parameters() const;
  std::uint64_t parameter_hash() const;

 private:
  ImageEncoderConfig cfg_;
  Tensor<T> positional_;  // [tokens x input_dim]
  std::vector<TransformerBlock<T>> blocks_;
  Tensor<T> head_w, head_b;  // [input_dim x embed_dim], [embed_dim]
};

// Mean over token rows of the raw input grid; the content summary consumed
// by the target prompt generator.
template <typename T>
Tensor<T> pooled_raw_feature(const Tensor<T>& tokens);

struct SemanticTemplateConfig {
  int text_dim = 32;
  int context_tokens = 4;  // per-domain learnable context rows
  int num_classes = 12;
  int num_domains = 5;
  std::uint64_t seed = 1;
};

// Token sequence "prefix, class token, domain context": the prefix and class
// embeddings are frozen; the per-domain context rows are the trainable
// text-side state.
template <typename T>
class SemanticTemplate {
 public:
  SemanticTemplate() = default;
  explicit SemanticTemplate(const SemanticTemplateConfig& cfg);

  // [sequence_length() x text_dim], on the active tape via the context rows.
  Tensor<T> sequence(int class_id, int domain_id) const;

  int sequence_length() const { return 3 + 1 + (use_domain_context_ ? cfg_.context_tokens : 0); }
  int max_sequence_length() const { return 3 + 1 + cfg_.context_tokens; }

  // Restricts which labels may be encoded; encoding anything else is a
  // StateError. Used after training to catch unseen-label misuse.
  void set_seen(std::vector<int> classes, std::vector<int> domains);
  void clear_seen();

  // Disables the trainable domain context (text-side ablation); sequences
  // become "prefix, class token" only.
  void set_use_domain_context(bool v) { use_domain_context_ = v; }
  bool use_domain_context() const { return use_domain_context_; }

  Tensor<T>& domain_context() { return domain_context_; }
  const Tensor<T>& domain_context() const { return domain_context_; }
  const SemanticTemplateConfig& config() const { return cfg_; }

 private:
  SemanticTemplateConfig cfg_;
  bool use_domain_context_ = true;
  Tensor<T> prefix_;          // [3 x text_dim] frozen
  Tensor<T> class_embed_;     // [num_classes x text_dim] frozen
  Tensor<T> domain_context_;  // [num_domains*context_tokens x text_dim] trainable
  std::optional<std::set<int>> seen_classes_;
  std::optional<std::set<int>> seen_domains_;
};

struct TextEncoderConfig {
  int text_dim = 32;
  int embed_dim = 32;
  int max_tokens = 8;
  int blocks = 2;
  int heads = 4;
  int ffn_hidden = 64;
  std::uint64_t seed = 2;
};

// Frozen text transformer; reads the final token as the sequence summary.
template <typename T>
class TextEncoder {
 public:
  TextEncoder() = default;
  explicit TextEncoder(const TextEncoderConfig& cfg);

  // sequence: [len x text_dim], len <= max_tokens. Returns a unit-norm
  // [embed_dim] embedding.
  Tensor<T> encode(const Tensor<T>& sequence) const;

  const TextEncoderConfig& config() const { return cfg_; }
  std::vector<Tensor<T>> parameters() const;
  std::uint64_t parameter_hash() const;

 private:
  TextEncoderConfig cfg_;
  Tensor<T> positional_;  // [max_tokens x text_dim]
  std::vector<TransformerBlock<T>> blocks_;
  Tensor<T> head_w, head_b;
};

template <typename T>
Tensor<T> encode_text(const TextEncoder<T>& encoder, const SemanticTemplate<T>& tmpl, int class_id,
                      int domain_id) {
  return encoder.encode(tmpl.sequence(class_id, domain_id));
}

template <typename T>
std::uint64_t parameter_hash(const std::vector<Tensor<T>>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : params) h = fnv1a64_span(std::span<const T>(p.data()), h);
  return h;
}

}  // namespace ucdr
