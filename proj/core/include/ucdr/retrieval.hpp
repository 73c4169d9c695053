#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ucdr/dataset.hpp"
#include "ucdr/pipeline.hpp"
#include "ucdr/tensor.hpp"

namespace ucdr {

// How query/gallery samples obtain their visual prompt: none (zero-shot),
// the phase-1 bank rows for the sample's own labels (seen-label diagnostics
// only), the target prompt generator, or the label-free mean of the bank.
enum class PromptMode { kNone, kPhase1, kTpg, kMeanPrompt };

std::string to_string(PromptMode mode);
PromptMode prompt_mode_from_string(const std::string& s);

// Unit-norm embedding of one sample under the given prompt mode.
Tensor<float> embed_sample(const Model<float>& model, const SampleRecord& rec, PromptMode mode);

// Embeds `ids` (row order preserved) into [n x E]. `workers` > 1 fans the
// forward passes out over threads; results are written by row index, so the
// output is identical for any worker count.
Tensor<float> embed_set(const Model<float>& model, const Dataset& ds, std::span<const std::int64_t> ids,
                        PromptMode mode, int workers = 1);

// Gallery indices sorted by ascending squared Euclidean distance to the
// query; equal distances fall back to the lower index.
std::vector<std::size_t> rank(std::span<const float> query, const Tensor<float>& gallery);

// relevance[i] flags whether the i-th *ranked* gallery item matches the
// query class. AP@k divides by min(R, k) with R the total relevant count in
// the whole gallery; k = relevance.size() gives AP@all.
double average_precision(std::span<const std::uint8_t> relevance, std::size_t k);
double precision_at(std::span<const std::uint8_t> relevance, std::size_t k);

struct RetrievalMetrics {
  std::vector<int> ks;
  std::map<int, double> map_at;
  std::map<int, double> prec_at;
  double map_all = 0.0;
  std::size_t num_queries = 0;
  std::size_t num_gallery = 0;
  std::size_t zero_relevant_queries = 0;  // excluded from every mean
};

RetrievalMetrics compute_metrics(const Tensor<float>& query_embeddings, std::span<const int> query_classes,
                                 const Tensor<float>& gallery_embeddings, std::span<const int> gallery_classes,
                                 std::span<const int> ks);

struct RankedEntry {
  std::int64_t gallery_id;
  float distance;
};

struct RetrievalReport {
  RetrievalMetrics metrics;
  PromptMode mode = PromptMode::kNone;
  std::string query_tag;
  std::string gallery_tag;
  std::string protocol;
  std::string gallery_mode;
  std::vector<std::int64_t> query_ids;
  std::vector<std::int64_t> gallery_ids;
  // Per query, the full ranking; filled only when requested.
  std::vector<std::vector<RankedEntry>> rankings;
  // Raw embedding matrices; filled only when requested.
  Tensor<float> query_embeddings;
  Tensor<float> gallery_embeddings;
};

struct EvaluateOptions {
  PromptMode mode = PromptMode::kNone;
  std::vector<int> ks{10, 50};
  int workers = 1;
  bool keep_rankings = false;
  bool keep_embeddings = false;
  SplitTag query_tag = SplitTag::kTestQuery;
  SplitTag gallery_tag = SplitTag::kTestGallery;
};

// Tag-driven evaluation over a split; ProtocolError when either side is
// empty.
RetrievalReport evaluate(const Model<float>& model, const Dataset& ds, const SplitAssignment& splits,
                         const EvaluateOptions& options);

// Same machinery over explicit id lists; the trainer's validation hook.
RetrievalReport evaluate_ids(const Model<float>& model, const Dataset& ds, std::span<const std::int64_t> query_ids,
                             std::span<const std::int64_t> gallery_ids, const EvaluateOptions& options);

// report.json: metrics plus identification fields; `extra` entries (config
// echo, checkpoint hash) are merged in as-is. Deterministic bytes for equal
// inputs.
void write_report_json(const std::string& path, const RetrievalReport& report,
                       const std::map<std::string, std::string>& extra = {});

// rankings.csv: query_id,rank,gallery_id,distance. Requires keep_rankings.
void write_rankings_csv(const std::string& path, const RetrievalReport& report);

// embeddings.bin: queries then gallery rows as one tensor blob each.
void write_embeddings(const std::string& path, const Tensor<float>& queries, const Tensor<float>& gallery);

}  // namespace ucdr
