#include "ucdr/encoders.hpp"

#include <cmath>

#include "ucdr/errors.hpp"
#include "ucdr/util.hpp"

namespace ucdr {

namespace {

template <typename T>
Tensor<T> init_weight(ucdr::Shape shape, std::mt19937& rng, double stddev) {
  return Tensor<T>::gaussian(std::move(shape), rng, static_cast<T>(stddev));
}

}  // namespace

template <typename T>
TransformerBlock<T>::TransformerBlock(int w, int h, int ffn_hidden, std::mt19937& rng) : width(w), heads(h) {
  if (w < 1 || h < 1 || w % h != 0) {
    throw ConfigError("transformer block: width " + std::to_string(w) + " must be a positive multiple of heads " +
                      std::to_string(h));
  }
  if (ffn_hidden < 1) throw ConfigError("transformer block: ffn_hidden must be >= 1");
  const int head_dim = w / h;
  const double ws = 1.0 / std::sqrt(static_cast<double>(w));
  ln1_gain = Tensor<T>::full({static_cast<std::size_t>(w)}, T(1));
  ln1_bias = Tensor<T>::zeros({static_cast<std::size_t>(w)});
  ln2_gain = Tensor<T>::full({static_cast<std::size_t>(w)}, T(1));
  ln2_bias = Tensor<T>::zeros({static_cast<std::size_t>(w)});
  for (int i = 0; i < h; ++i) {
    wq.push_back(init_weight<T>({static_cast<std::size_t>(w), static_cast<std::size_t>(head_dim)}, rng, ws));
    wk.push_back(init_weight<T>({static_cast<std::size_t>(w), static_cast<std::size_t>(head_dim)}, rng, ws));
    wv.push_back(init_weight<T>({static_cast<std::size_t>(w), static_cast<std::size_t>(head_dim)}, rng, ws));
  }
  wo = init_weight<T>({static_cast<std::size_t>(w), static_cast<std::size_t>(w)}, rng, ws);
  ffn_w1 = init_weight<T>({static_cast<std::size_t>(w), static_cast<std::size_t>(ffn_hidden)}, rng, ws);
  ffn_b1 = Tensor<T>::zeros({static_cast<std::size_t>(ffn_hidden)});
  ffn_w2 = init_weight<T>({static_cast<std::size_t>(ffn_hidden), static_cast<std::size_t>(w)}, rng,
                          1.0 / std::sqrt(static_cast<double>(ffn_hidden)));
  ffn_b2 = Tensor<T>::zeros({static_cast<std::size_t>(w)});
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 2 || x.shape()[1] != static_cast<std::size_t>(width)) {
    throw ContractError("transformer block: expected [rows x " + std::to_string(width) + "], got " +
                        shape_to_string(x.shape()));
  }
  const int head_dim = width / heads;
  const T att_scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(head_dim)));

  auto normed = layer_norm(x, ln1_gain, ln1_bias);
  std::vector<Tensor<T>> head_out;
  head_out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto q = matmul(normed, wq[static_cast<std::size_t>(h)]);
    auto k = matmul(normed, wk[static_cast<std::size_t>(h)]);
    auto v = matmul(normed, wv[static_cast<std::size_t>(h)]);
    auto scores = scale(matmul(q, transpose(k)), att_scale);
    head_out.push_back(matmul(softmax(scores), v));
  }
  auto attended = matmul(concat(std::span<const Tensor<T>>(head_out.data(), head_out.size()), 1), wo);
  auto mid = add(x, attended);

  auto normed2 = layer_norm(mid, ln2_gain, ln2_bias);
  auto hidden = relu(add(matmul(normed2, ffn_w1), ffn_b1));
  auto ffn = add(matmul(hidden, ffn_w2), ffn_b2);
  return add(mid, ffn);
}

template <typename T>
void TransformerBlock<T>::collect_parameters(std::vector<Tensor<T>>& out) const {
  out.push_back(ln1_gain);
  out.push_back(ln1_bias);
  out.push_back(ln2_gain);
  out.push_back(ln2_bias);
  for (const auto& t : wq) out.push_back(t);
  for (const auto& t : wk) out.push_back(t);
  for (const auto& t : wv) out.push_back(t);
  out.push_back(wo);
  out.push_back(ffn_w1);
  out.push_back(ffn_b1);
  out.push_back(ffn_w2);
  out.push_back(ffn_b2);
}

template <typename T>
ImageEncoder<T>::ImageEncoder(const ImageEncoderConfig& cfg) : cfg_(cfg) {
  if (cfg.tokens < 1 || cfg.input_dim < 1 || cfg.embed_dim < 1 || cfg.blocks < 1) {
    throw ConfigError("image encoder: tokens, input_dim, embed_dim, blocks must all be >= 1");
  }
  auto rng = make_rng(cfg.seed, {0xecd});
  positional_ = init_weight<T>({static_cast<std::size_t>(cfg.tokens), static_cast<std::size_t>(cfg.input_dim)},
                               rng, 0.5);
  for (int b = 0; b < cfg.blocks; ++b) {
    blocks_.emplace_back(cfg.input_dim, cfg.heads, cfg.ffn_hidden, rng);
  }
  head_w = init_weight<T>({static_cast<std::size_t>(cfg.input_dim), static_cast<std::size_t>(cfg.embed_dim)},
                          rng, 1.0 / std::sqrt(static_cast<double>(cfg.input_dim)));
  head_b = Tensor<T>::zeros({static_cast<std::size_t>(cfg.embed_dim)});
}

template <typename T>
Tensor<T> ImageEncoder<T>::encode(const Tensor<T>& tokens, const Tensor<T>* prompt) const {
  if (tokens.rank() != 2 || tokens.shape()[0] != static_cast<std::size_t>(cfg_.tokens) ||
      tokens.shape()[1] != static_cast<std::size_t>(cfg_.input_dim)) {
    throw ContractError("image encoder: expected tokens " + std::to_string(cfg_.tokens) + "x" +
                        std::to_string(cfg_.input_dim) + ", got " + shape_to_string(tokens.shape()));
  }
  Tensor<T> x = tokens;
  if (prompt) {
    if (prompt->rank() != 1 || prompt->size() != static_cast<std::size_t>(cfg_.input_dim)) {
      throw ContractError("image encoder: prompt must be [" + std::to_string(cfg_.input_dim) + "], got " +
                          shape_to_string(prompt->shape()));
    }
    x = add(x, *prompt);
  }
  x = add(x, positional_);
  for (const auto& block : blocks_) x = block.forward(x);
  auto pooled = mean_rows(x);
  auto embedded = add(matmul(reshape(pooled, {1, static_cast<std::size_t>(cfg_.input_dim)}), head_w), head_b);
  return l2_normalize(reshape(embedded, {static_cast<std::size_t>(cfg_.embed_dim)}));
}

template <typename T>
std::vector<Tensor<T>> ImageEncoder<T>::parameters() const {
  std::vector<Tensor<T>> out;
  out.push_back(positional_);
  for (const auto& b : blocks_) b.collect_parameters(out);
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

template <typename T>
std::uint64_t ImageEncoder<T>::parameter_hash() const {
  return ucdr::parameter_hash(parameters());
}

template <typename T>
Tensor<T> pooled_raw_feature(const Tensor<T>& tokens) {
  if (tokens.rank() != 2) {
    throw ContractError("pooled_raw_feature: expected a token matrix, got " + shape_to_string(tokens.shape()));
  }
  return mean_rows(tokens);
}

template <typename T>
SemanticTemplate<T>::SemanticTemplate(const SemanticTemplateConfig& cfg) : cfg_(cfg) {
  if (cfg.text_dim < 1 || cfg.context_tokens < 1 || cfg.num_classes < 1 || cfg.num_domains < 1) {
    throw ConfigError("semantic template: all dimensions must be >= 1");
  }
  auto rng = make_rng(cfg.seed, {0x7e87});
  prefix_ = init_weight<T>({3, static_cast<std::size_t>(cfg.text_dim)}, rng, 0.5);
  class_embed_ =
      init_weight<T>({static_cast<std::size_t>(cfg.num_classes), static_cast<std::size_t>(cfg.text_dim)}, rng, 0.5);
  domain_context_ = init_weight<T>({static_cast<std::size_t>(cfg.num_domains) * cfg.context_tokens,
                                    static_cast<std::size_t>(cfg.text_dim)},
                                   rng, 0.05);
}

template <typename T>
Tensor<T> SemanticTemplate<T>::sequence(int class_id, int domain_id) const {
  if (class_id < 0 || class_id >= cfg_.num_classes) {
    throw ContractError("semantic template: class " + std::to_string(class_id) + " out of range");
  }
  if (domain_id < 0 || domain_id >= cfg_.num_domains) {
    throw ContractError("semantic template: domain " + std::to_string(domain_id) + " out of range");
  }
  if (seen_classes_ && !seen_classes_->count(class_id)) {
    throw StateError("semantic template: class " + std::to_string(class_id) + " was not seen during training");
  }
  if (use_domain_context_ && seen_domains_ && !seen_domains_->count(domain_id)) {
    throw StateError("semantic template: domain " + std::to_string(domain_id) + " was not seen during training");
  }

  std::vector<std::size_t> class_row{static_cast<std::size_t>(class_id)};
  auto cls = gather_rows(class_embed_, std::span<const std::size_t>(class_row));
  if (!use_domain_context_) {
    return concat({prefix_, cls}, 0);
  }
  std::vector<std::size_t> ctx_rows(static_cast<std::size_t>(cfg_.context_tokens));
  for (int i = 0; i < cfg_.context_tokens; ++i) {
    ctx_rows[static_cast<std::size_t>(i)] =
        static_cast<std::size_t>(domain_id) * cfg_.context_tokens + static_cast<std::size_t>(i);
  }
  auto ctx = gather_rows(domain_context_, std::span<const std::size_t>(ctx_rows));
  return concat({prefix_, cls, ctx}, 0);
}

template <typename T>
void SemanticTemplate<T>::set_seen(std::vector<int> classes, std::vector<int> domains) {
  seen_classes_.emplace(classes.begin(), classes.end());
  seen_domains_.emplace(domains.begin(), domains.end());
}

template <typename T>
void SemanticTemplate<T>::clear_seen() {
  seen_classes_.reset();
  seen_domains_.reset();
}

template <typename T>
TextEncoder<T>::TextEncoder(const TextEncoderConfig& cfg) : cfg_(cfg) {
  if (cfg.text_dim < 1 || cfg.embed_dim < 1 || cfg.max_tokens < 1 || cfg.blocks < 1) {
    throw ConfigError("text encoder: all dimensions must be >= 1");
  }
  auto rng = make_rng(cfg.seed, {0x7ec});
  positional_ = init_weight<T>({static_cast<std::size_t>(cfg.max_tokens), static_cast<std::size_t>(cfg.text_dim)},
                               rng, 0.5);
  for (int b = 0; b < cfg.blocks; ++b) {
    blocks_.emplace_back(cfg.text_dim, cfg.heads, cfg.ffn_hidden, rng);
  }
  head_w = init_weight<T>({static_cast<std::size_t>(cfg.text_dim), static_cast<std::size_t>(cfg.embed_dim)}, rng,
                          1.0 / std::sqrt(static_cast<double>(cfg.text_dim)));
  head_b = Tensor<T>::zeros({static_cast<std::size_t>(cfg.embed_dim)});
}

template <typename T>
Tensor<T> TextEncoder<T>::encode(const Tensor<T>& sequence) const {
  if (sequence.rank() != 2 || sequence.shape()[1] != static_cast<std::size_t>(cfg_.text_dim)) {
    throw ContractError("text encoder: expected [len x " + std::to_string(cfg_.text_dim) + "], got " +
                        shape_to_string(sequence.shape()));
  }
  const std::size_t len = sequence.shape()[0];
  if (len == 0 || len > static_cast<std::size_t>(cfg_.max_tokens)) {
    throw ContractError("text encoder: sequence length " + std::to_string(len) + " exceeds max " +
                        std::to_string(cfg_.max_tokens));
  }
  std::vector<std::size_t> rows(len);
  for (std::size_t i = 0; i < len; ++i) rows[i] = i;
  Tensor<T> x = add(sequence, gather_rows(positional_, std::span<const std::size_t>(rows)));
  for (const auto& block : blocks_) x = block.forward(x);
  std::vector<std::size_t> last{len - 1};
  auto readout = gather_rows(x, std::span<const std::size_t>(last));
  auto embedded = add(matmul(readout, head_w), head_b);
  return l2_normalize(reshape(embedded, {static_cast<std::size_t>(cfg_.embed_dim)}));
}

template <typename T>
std::vector<Tensor<T>> TextEncoder<T>::parameters() const {
  std::vector<Tensor<T>> out;
  out.push_back(positional_);
  for (const auto& b : blocks_) b.collect_parameters(out);
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

template <typename T>
std::uint64_t TextEncoder<T>::parameter_hash() const {
  return ucdr::parameter_hash(parameters());
}

template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template class ImageEncoder<float>;
template class ImageEncoder<double>;
template class SemanticTemplate<float>;
template class SemanticTemplate<double>;
template class TextEncoder<float>;
template class TextEncoder<double>;
template Tensor<float> pooled_raw_feature(const Tensor<float>&);
template Tensor<double> pooled_raw_feature(const Tensor<double>&);

}  // namespace ucdr
