#pragma once

#include <span>
#include <utility>
#include <vector>

#include "ucdr/errors.hpp"
#include "ucdr/ops.hpp"
#include "ucdr/tensor.hpp"

namespace ucdr {

template <typename T>
struct LossConfig {
  T margin = T(0.5);
  T temperature = T(0.07);
  int pair_count = 2;  // mined pairs per anchor; 0 disables the ranking term
};

template <typename T>
void validate(const LossConfig<T>& cfg) {
  if (!(cfg.margin >= T(0))) throw ConfigError("loss: margin must be >= 0");
  if (!(cfg.temperature > T(0))) throw ConfigError("loss: temperature must be > 0");
  if (cfg.pair_count < 0) throw ConfigError("loss: pair_count must be >= 0");
}

// Mean hinge over (positive, negative) pairs for one anchor:
// mean_i max(0, ||a - p_i||^2 - ||a - n_i||^2 + margin).
// No pairs means no signal: returns constant zero.
template <typename T>
Tensor<T> triplet_loss(const Tensor<T>& anchor, std::span<const std::pair<Tensor<T>, Tensor<T>>> pairs,
                       T margin) {
  if (!(margin >= T(0))) throw ConfigError("triplet_loss: margin must be >= 0");
  if (pairs.empty()) return Tensor<T>::scalar(T(0));
  Tensor<T> acc = Tensor<T>::scalar(T(0));
  const Tensor<T> margin_t = Tensor<T>::scalar(margin);
  for (const auto& [pos, neg] : pairs) {
    auto dp = squared_euclidean(anchor, pos);
    auto dn = squared_euclidean(anchor, neg);
    auto hinge = relu(add(sub(dp, dn), margin_t));
    acc = add(acc, hinge);
  }
  return scale(acc, T(1) / static_cast<T>(pairs.size()));
}

// Contrastive alignment of an image feature against a bank of text features:
// -log( exp(cos(i, t_true)/tau) / sum_k exp(cos(i, t_k)/tau) ),
// computed as log_sum_exp(logits) - logits[true_row]. A single-row bank
// yields exactly zero.
template <typename T>
Tensor<T> itc_loss(const Tensor<T>& image_feature, const Tensor<T>& text_features, std::size_t true_row,
                   T temperature) {
  if (!(temperature > T(0))) throw ConfigError("itc_loss: temperature must be > 0");
  if (text_features.rank() != 2) {
    throw ContractError("itc_loss: text features must be [rows x dim], got " +
                        shape_to_string(text_features.shape()));
  }
  const std::size_t rows = text_features.shape()[0];
  if (rows == 0) throw ContractError("itc_loss: empty text feature bank");
  if (true_row >= rows) {
    throw ContractError("itc_loss: true_row " + std::to_string(true_row) + " out of range for " +
                        std::to_string(rows) + " rows");
  }
  if (image_feature.rank() != 1 || image_feature.size() != text_features.shape()[1]) {
    throw ContractError("itc_loss: image feature " + shape_to_string(image_feature.shape()) +
                        " does not match text width " + std::to_string(text_features.shape()[1]));
  }

  std::vector<Tensor<T>> scores;
  scores.reserve(rows);
  for (std::size_t k = 0; k < rows; ++k) {
    std::vector<std::size_t> row{k};
    auto text = reshape(gather_rows(text_features, std::span<const std::size_t>(row)),
                        {text_features.shape()[1]});
    auto sim = cosine_similarity(image_feature, text);
    scores.push_back(reshape(sim, {1}));
  }
  auto logits = scale(concat(std::span<const Tensor<T>>(scores.data(), scores.size()), 0),
                      T(1) / temperature);
  return reshape(sub(reshape(log_sum_exp(logits), {1}),
                     reshape(select_element(logits, true_row), {1})),
                 {});
}

// One training sample's contributions to the phase-1 objective.
template <typename T>
struct Phase1Item {
  Tensor<T> image_feature;  // live-path embedding [embed_dim]
  std::vector<std::pair<Tensor<T>, Tensor<T>>> pairs;  // mined constants
  Tensor<T> text_features;  // [seen_classes x embed_dim]
  std::size_t text_row = 0;
};

template <typename T>
struct Phase1Loss {
  Tensor<T> total;        // triplet + contrastive
  Tensor<T> triplet;      // batch mean of the ranking term
  Tensor<T> contrastive;  // batch mean of the alignment term
};

template <typename T>
Phase1Loss<T> phase1_loss(std::span<const Phase1Item<T>> batch, const LossConfig<T>& cfg) {
  validate(cfg);
  if (batch.empty()) throw ContractError("phase1_loss: empty batch");
  Tensor<T> trip = Tensor<T>::scalar(T(0));
  Tensor<T> con = Tensor<T>::scalar(T(0));
  for (const Phase1Item<T>& item : batch) {
    trip = add(trip, triplet_loss(item.image_feature,
                                  std::span<const std::pair<Tensor<T>, Tensor<T>>>(item.pairs), cfg.margin));
    con = add(con, itc_loss(item.image_feature, item.text_features, item.text_row, cfg.temperature));
  }
  const T inv = T(1) / static_cast<T>(batch.size());
  Phase1Loss<T> out;
  out.triplet = scale(trip, inv);
  out.contrastive = scale(con, inv);
  out.total = add(out.triplet, out.contrastive);
  return out;
}

// Phase 2 trains only the prompt generator, against frozen text features:
// the batch-mean contrastive alignment of generated-prompt embeddings.
template <typename T>
struct Phase2Item {
  Tensor<T> image_feature;  // embedding under a generated prompt
  Tensor<T> text_features;  // frozen [seen_classes x embed_dim]
  std::size_t text_row = 0;
};

template <typename T>
Tensor<T> phase2_loss(std::span<const Phase2Item<T>> batch, const LossConfig<T>& cfg) {
  validate(cfg);
  if (batch.empty()) throw ContractError("phase2_loss: empty batch");
  Tensor<T> con = Tensor<T>::scalar(T(0));
  for (const Phase2Item<T>& item : batch) {
    con = add(con, itc_loss(item.image_feature, item.text_features, item.text_row, cfg.temperature));
  }
  return scale(con, T(1) / static_cast<T>(batch.size()));
}

}  // namespace ucdr
