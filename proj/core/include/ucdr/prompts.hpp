#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "ucdr/ops.hpp"
#include "ucdr/tensor.hpp"

namespace ucdr {

struct PromptBankConfig {
  int prompt_dim = 16;   // columns of each prompt row
  int input_dim = 64;    // width of the projected visual prompt
  double momentum_rate = 1e-3;
  std::uint64_t seed = 1;
};

// Learnable visual prompts: one row per seen class and one per seen domain,
// plus slow-moving momentum copies and a shared projection onto the encoder
// input width. The class row and domain row for a sample are concatenated
// (class first) and projected to form the prompt added to its tokens.
template <typename T>
class PromptBank {
 public:
  PromptBank() = default;
  PromptBank(const PromptBankConfig& cfg, std::span<const int> class_ids, std::span<const int> domain_ids);

  // Projected [input_dim] prompt for a seen (class, domain) pair. With
  // use_momentum the slow copies are used and nothing is recorded on the
  // tape.
  Tensor<T> select(int class_id, int domain_id, bool use_momentum = false) const;

  // Moves every momentum row toward its live counterpart by momentum_rate.
  void momentum_update();

  // Row lookup; ContractError for ids that have no row.
  std::size_t class_row(int class_id) const;
  std::size_t domain_row(int domain_id) const;
  bool has_class(int class_id) const { return class_rows_.count(class_id) != 0; }
  bool has_domain(int domain_id) const { return domain_rows_.count(domain_id) != 0; }

  const std::vector<int>& class_ids() const { return class_ids_; }
  const std::vector<int>& domain_ids() const { return domain_ids_; }

  Tensor<T>& class_prompts() { return class_prompts_; }
  Tensor<T>& domain_prompts() { return domain_prompts_; }
  Tensor<T>& class_prompts_momentum() { return class_prompts_momentum_; }
  Tensor<T>& domain_prompts_momentum() { return domain_prompts_momentum_; }
  Tensor<T>& projection_w() { return projection_w_; }
  Tensor<T>& projection_b() { return projection_b_; }
  const Tensor<T>& class_prompts() const { return class_prompts_; }
  const Tensor<T>& domain_prompts() const { return domain_prompts_; }
  const Tensor<T>& class_prompts_momentum() const { return class_prompts_momentum_; }
  const Tensor<T>& domain_prompts_momentum() const { return domain_prompts_momentum_; }
  const Tensor<T>& projection_w() const { return projection_w_; }
  const Tensor<T>& projection_b() const { return projection_b_; }

  // Projects an already assembled [2*prompt_dim] row (class part first, then
  // domain part) onto the encoder input width; shared by the target prompt
  // generator.
  Tensor<T> project(const Tensor<T>& combined) const;

  const PromptBankConfig& config() const { return cfg_; }

 private:
  PromptBankConfig cfg_;
  std::vector<int> class_ids_, domain_ids_;
  std::map<int, std::size_t> class_rows_, domain_rows_;
  Tensor<T> class_prompts_;             // [num_classes x prompt_dim]
  Tensor<T> domain_prompts_;            // [num_domains x prompt_dim]
  Tensor<T> class_prompts_momentum_;    // detached copies
  Tensor<T> domain_prompts_momentum_;
  Tensor<T> projection_w_;  // [2*prompt_dim x input_dim]
  Tensor<T> projection_b_;  // [input_dim]
};

// dst = (1 - rate) * dst + rate * src, elementwise in place. The bare
// exponential-moving-average step; rate validation lives in momentum_update.
template <typename T>
void momentum_blend(Tensor<T>& dst, const Tensor<T>& src, T rate);

// Returns a detached copy of `bank_rows` whose rows listed in `excluded`
// (nonzero entries) are exactly zero; all other rows are bit-identical.
template <typename T>
Tensor<T> mask_out(const Tensor<T>& bank_rows, std::span<const std::uint8_t> excluded);

}  // namespace ucdr
