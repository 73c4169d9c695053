#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <vector>

#include "ucdr/errors.hpp"
#include "ucdr/tensor.hpp"

namespace ucdr {

// Fixed-capacity FIFO feature queues, one per class, holding detached
// embedding copies from the momentum path. Hard pair mining ranks stored
// entries by squared Euclidean distance to an anchor; ties fall back to
// insertion order (oldest first).
template <typename T>
class ClassQueueSet {
 public:
  struct HardPair {
    std::vector<T> positive;  // far entry from the anchor's class
    std::vector<T> negative;  // near entry from any other class
  };

  ClassQueueSet() = default;

  ClassQueueSet(std::span<const int> class_ids, std::size_t capacity, std::size_t feature_dim)
      : capacity_(capacity), feature_dim_(feature_dim) {
    if (capacity < 1) throw ConfigError("class queues: capacity must be >= 1");
    if (feature_dim < 1) throw ConfigError("class queues: feature_dim must be >= 1");
    if (class_ids.empty()) throw ConfigError("class queues: need at least one class");
    for (int id : class_ids) {
      if (!index_.emplace(id, queues_.size()).second) {
        throw ConfigError("class queues: duplicate class id " + std::to_string(id));
      }
      queues_.emplace_back();
    }
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::uint64_t next_sequence() const { return next_seq_; }

  std::size_t size(int class_id) const { return queue_at(class_id).size(); }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& q : queues_) n += q.size();
    return n;
  }

  // Appends a copy of `feature`; the oldest entry leaves once the queue is
  // full.
  void push(int class_id, std::span<const T> feature) {
    if (feature.size() != feature_dim_) {
      throw ContractError("class queues: feature size " + std::to_string(feature.size()) + ", expected " +
                          std::to_string(feature_dim_));
    }
    auto& q = queue_at(class_id);
    if (q.size() == capacity_) q.pop_front();
    q.push_back(Entry{std::vector<T>(feature.begin(), feature.end()), next_seq_++});
  }

  void push(int class_id, const Tensor<T>& feature) {
    if (feature.rank() != 1) {
      throw ContractError("class queues: expected a feature vector, got " + shape_to_string(feature.shape()));
    }
    push(class_id, std::span<const T>(feature.data()));
  }

  // Mines up to `count` (positive, negative) pairs for an anchor of class
  // `class_id`: positives are that class's stored entries farthest from the
  // anchor, negatives the other classes' entries closest to it, paired by
  // rank. Returns fewer pairs when the queues cannot supply `count`.
  std::vector<HardPair> sample_hard_pairs(std::span<const T> anchor, int class_id, std::size_t count) const {
    if (anchor.size() != feature_dim_) {
      throw ContractError("class queues: anchor size " + std::to_string(anchor.size()) + ", expected " +
                          std::to_string(feature_dim_));
    }
    const auto& own = queue_at(class_id);

    struct Scored {
      const Entry* entry;
      T dist;
    };
    auto sq_dist = [&](const Entry& e) {
      T acc = T(0);
      for (std::size_t i = 0; i < feature_dim_; ++i) {
        const T d = e.feature[i] - anchor[i];
        acc += d * d;
      }
      return acc;
    };

    std::vector<Scored> positives;
    positives.reserve(own.size());
    for (const Entry& e : own) positives.push_back({&e, sq_dist(e)});
    std::sort(positives.begin(), positives.end(), [](const Scored& a, const Scored& b) {
      if (a.dist != b.dist) return a.dist > b.dist;  // farthest first
      return a.entry->seq < b.entry->seq;
    });

    std::vector<Scored> negatives;
    for (const auto& [id, idx] : index_) {
      if (id == class_id) continue;
      for (const Entry& e : queues_[idx]) negatives.push_back({&e, sq_dist(e)});
    }
    std::sort(negatives.begin(), negatives.end(), [](const Scored& a, const Scored& b) {
      if (a.dist != b.dist) return a.dist < b.dist;  // closest first
      return a.entry->seq < b.entry->seq;
    });

    const std::size_t pairs = std::min({count, positives.size(), negatives.size()});
    std::vector<HardPair> out;
    out.reserve(pairs);
    for (std::size_t i = 0; i < pairs; ++i) {
      out.push_back(HardPair{positives[i].entry->feature, negatives[i].entry->feature});
    }
    return out;
  }

  // Stored features of one class, oldest first, with their global sequence
  // stamps; used by checkpointing.
  std::vector<std::pair<std::uint64_t, std::vector<T>>> snapshot(int class_id) const {
    std::vector<std::pair<std::uint64_t, std::vector<T>>> out;
    for (const Entry& e : queue_at(class_id)) out.emplace_back(e.seq, e.feature);
    return out;
  }

  void restore(int class_id, const std::vector<std::pair<std::uint64_t, std::vector<T>>>& entries,
               std::uint64_t next_sequence) {
    auto& q = queue_at(class_id);
    q.clear();
    for (const auto& [seq, feat] : entries) {
      if (feat.size() != feature_dim_) throw ContractError("class queues: restored entry has wrong width");
      if (q.size() == capacity_) throw ContractError("class queues: restored entries exceed capacity");
      q.push_back(Entry{feat, seq});
    }
    next_seq_ = std::max(next_seq_, next_sequence);
  }

  void set_next_sequence(std::uint64_t seq) { next_seq_ = seq; }

  std::vector<int> class_ids() const {
    std::vector<int> ids;
    ids.reserve(index_.size());
    for (const auto& [id, idx] : index_) ids.push_back(id);
    return ids;
  }

 private:
  struct Entry {
    std::vector<T> feature;
    std::uint64_t seq;
  };

  std::deque<Entry>& queue_at(int class_id) {
    auto it = index_.find(class_id);
    if (it == index_.end()) throw ContractError("class queues: unknown class " + std::to_string(class_id));
    return queues_[it->second];
  }
  const std::deque<Entry>& queue_at(int class_id) const {
    auto it = index_.find(class_id);
    if (it == index_.end()) throw ContractError("class queues: unknown class " + std::to_string(class_id));
    return queues_[it->second];
  }

  std::size_t capacity_ = 0;
  std::size_t feature_dim_ = 0;
  std::map<int, std::size_t> index_;
  std::vector<std::deque<Entry>> queues_;
  std::uint64_t next_seq_ = 0;
};

}  // namespace ucdr
