#include "ucdr/prompts.hpp"

#include <algorithm>

#include "ucdr/errors.hpp"
#include "ucdr/util.hpp"

namespace ucdr {

template <typename T>
PromptBank<T>::PromptBank(const PromptBankConfig& cfg, std::span<const int> class_ids,
                          std::span<const int> domain_ids)
    : cfg_(cfg), class_ids_(class_ids.begin(), class_ids.end()), domain_ids_(domain_ids.begin(), domain_ids.end()) {
  if (cfg.prompt_dim < 1 || cfg.input_dim < 1) {
    throw ConfigError("prompt bank: prompt_dim and input_dim must be >= 1");
  }
  if (!(cfg.momentum_rate > 0.0) || cfg.momentum_rate > 1.0) {
    throw ConfigError("prompt bank: momentum_rate must lie in (0, 1], got " + std::to_string(cfg.momentum_rate));
  }
  if (class_ids_.empty() || domain_ids_.empty()) {
    throw ConfigError("prompt bank: need at least one class and one domain");
  }
  for (std::size_t i = 0; i < class_ids_.size(); ++i) {
    if (!class_rows_.emplace(class_ids_[i], i).second) {
      throw ConfigError("prompt bank: duplicate class id " + std::to_string(class_ids_[i]));
    }
  }
  for (std::size_t i = 0; i < domain_ids_.size(); ++i) {
    if (!domain_rows_.emplace(domain_ids_[i], i).second) {
      throw ConfigError("prompt bank: duplicate domain id " + std::to_string(domain_ids_[i]));
    }
  }

  auto rng = make_rng(cfg.seed, {0x9209});
  const std::size_t m = static_cast<std::size_t>(cfg.prompt_dim);
  const std::size_t din = static_cast<std::size_t>(cfg.input_dim);
  class_prompts_ = Tensor<T>::gaussian({class_ids_.size(), m}, rng, T(0.02));
  domain_prompts_ = Tensor<T>::gaussian({domain_ids_.size(), m}, rng, T(0.02));
  class_prompts_momentum_ = class_prompts_.clone();
  domain_prompts_momentum_ = domain_prompts_.clone();

  // Near-identity start: the first min(2m, input_dim) prompt coordinates map
  // straight onto the input, with small noise everywhere.
  projection_w_ = Tensor<T>::gaussian({2 * m, din}, rng, T(0.02));
  for (std::size_t i = 0; i < std::min(2 * m, din); ++i) {
    projection_w_.data()[i * din + i] += T(1);
  }
  projection_b_ = Tensor<T>::zeros({din});
}

template <typename T>
std::size_t PromptBank<T>::class_row(int class_id) const {
  auto it = class_rows_.find(class_id);
  if (it == class_rows_.end()) {
    throw ContractError("prompt bank: class " + std::to_string(class_id) + " has no prompt row");
  }
  return it->second;
}

template <typename T>
std::size_t PromptBank<T>::domain_row(int domain_id) const {
  auto it = domain_rows_.find(domain_id);
  if (it == domain_rows_.end()) {
    throw ContractError("prompt bank: domain " + std::to_string(domain_id) + " has no prompt row");
  }
  return it->second;
}

template <typename T>
Tensor<T> PromptBank<T>::project(const Tensor<T>& combined) const {
  const std::size_t m2 = 2 * static_cast<std::size_t>(cfg_.prompt_dim);
  if (combined.rank() != 1 || combined.size() != m2) {
    throw ContractError("prompt bank: project expects [" + std::to_string(m2) + "], got " +
                        shape_to_string(combined.shape()));
  }
  auto row = reshape(combined, {1, m2});
  auto projected = add(matmul(row, projection_w_), projection_b_);
  return reshape(projected, {static_cast<std::size_t>(cfg_.input_dim)});
}

template <typename T>
Tensor<T> PromptBank<T>::select(int class_id, int domain_id, bool use_momentum) const {
  const std::size_t cr = class_row(class_id);
  const std::size_t dr = domain_row(domain_id);
  std::vector<std::size_t> crow{cr}, drow{dr};

  if (use_momentum) {
    // The slow path is a constant: nothing lands on the tape, including the
    // shared projection.
    GradPause<T> pause;
    auto c = gather_rows(class_prompts_momentum_, std::span<const std::size_t>(crow));
    auto d = gather_rows(domain_prompts_momentum_, std::span<const std::size_t>(drow));
    auto combined = reshape(concat({c, d}, 1), {2 * static_cast<std::size_t>(cfg_.prompt_dim)});
    return project(combined);
  }
  auto c = gather_rows(class_prompts_, std::span<const std::size_t>(crow));
  auto d = gather_rows(domain_prompts_, std::span<const std::size_t>(drow));
  auto combined = reshape(concat({c, d}, 1), {2 * static_cast<std::size_t>(cfg_.prompt_dim)});
  return project(combined);
}

template <typename T>
void PromptBank<T>::momentum_update() {
  momentum_blend(class_prompts_momentum_, class_prompts_, static_cast<T>(cfg_.momentum_rate));
  momentum_blend(domain_prompts_momentum_, domain_prompts_, static_cast<T>(cfg_.momentum_rate));
}

template <typename T>
void momentum_blend(Tensor<T>& dst, const Tensor<T>& src, T rate) {
  if (dst.shape() != src.shape()) {
    throw ContractError("momentum_blend: shape mismatch " + shape_to_string(dst.shape()) + " vs " +
                        shape_to_string(src.shape()));
  }
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = (T(1) - rate) * d[i] + rate * s[i];
  }
}

template <typename T>
Tensor<T> mask_out(const Tensor<T>& bank_rows, std::span<const std::uint8_t> excluded) {
  if (bank_rows.rank() != 2) {
    throw ContractError("mask_out: expected a row bank, got " + shape_to_string(bank_rows.shape()));
  }
  const std::size_t rows = bank_rows.shape()[0], cols = bank_rows.shape()[1];
  if (excluded.size() != rows) {
    throw ContractError("mask_out: " + std::to_string(excluded.size()) + " flags for " + std::to_string(rows) +
                        " rows");
  }
  Tensor<T> out = bank_rows.clone();  // detached by construction
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (!excluded[r]) continue;
    for (std::size_t c = 0; c < cols; ++c) ov[r * cols + c] = T(0);
  }
  return out;
}

template class PromptBank<float>;
template class PromptBank<double>;
template void momentum_blend(Tensor<float>&, const Tensor<float>&, float);
template void momentum_blend(Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> mask_out(const Tensor<float>&, std::span<const std::uint8_t>);
template Tensor<double> mask_out(const Tensor<double>&, std::span<const std::uint8_t>);

}  // namespace ucdr
