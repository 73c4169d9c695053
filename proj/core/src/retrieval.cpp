#include "ucdr/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "ucdr/errors.hpp"
#include "ucdr/ops.hpp"
#include "ucdr/tensor_io.hpp"

namespace ucdr {

namespace {

using nlohmann::json;

Tensor<float> prompt_for(const Model<float>& model, const SampleRecord& rec, PromptMode mode,
                         const Tensor<float>* mean_prompt) {
  switch (mode) {
    case PromptMode::kNone:
      return {};
    case PromptMode::kPhase1:
      return model.bank.select(rec.class_id, rec.domain_id);
    case PromptMode::kTpg:
      return model.tpg.generate(rec.tokens, model.bank, model.class_exclusion(std::nullopt),
                                model.domain_exclusion(std::nullopt));
    case PromptMode::kMeanPrompt:
      return mean_prompt ? *mean_prompt : model.mean_prompt();
  }
  throw ContractError("unknown prompt mode");
}

Tensor<float> embed_one(const Model<float>& model, const SampleRecord& rec, PromptMode mode,
                        const Tensor<float>* mean_prompt) {
  GradPause<float> pause;
  if (mode == PromptMode::kNone) return model.image_encoder.encode(rec.tokens);
  auto prompt = prompt_for(model, rec, mode, mean_prompt);
  return model.image_encoder.encode(rec.tokens, &prompt);
}

// Shared per-query loop: metrics, and optionally the full rankings.
RetrievalMetrics run_queries(const Tensor<float>& queries, std::span<const int> query_classes,
                             const Tensor<float>& gallery, std::span<const int> gallery_classes,
                             std::span<const int> ks, std::span<const std::int64_t> gallery_ids,
                             std::vector<std::vector<RankedEntry>>* rankings_out) {
  if (queries.rank() != 2 || gallery.rank() != 2 || queries.shape()[1] != gallery.shape()[1]) {
    throw ContractError("metrics: query and gallery embeddings must be [n x E] with equal widths");
  }
  const std::size_t nq = queries.shape()[0], ng = gallery.shape()[0], e = queries.shape()[1];
  if (query_classes.size() != nq || gallery_classes.size() != ng) {
    throw ContractError("metrics: class label count does not match embedding rows");
  }
  for (int k : ks) {
    if (k <= 0) throw ConfigError("metrics: k must be positive, got " + std::to_string(k));
  }

  RetrievalMetrics out;
  out.ks.assign(ks.begin(), ks.end());
  out.num_queries = nq;
  out.num_gallery = ng;
  for (int k : ks) {
    out.map_at[k] = 0.0;
    out.prec_at[k] = 0.0;
  }

  std::vector<std::uint8_t> relevance(ng);
  const auto qv = queries.data();
  for (std::size_t q = 0; q < nq; ++q) {
    auto order = rank(std::span<const float>(qv.data() + q * e, e), gallery);
    std::size_t total_relevant = 0;
    for (std::size_t r = 0; r < ng; ++r) {
      relevance[r] = gallery_classes[order[r]] == query_classes[q] ? 1 : 0;
      total_relevant += relevance[r];
    }
    if (rankings_out) {
      std::vector<RankedEntry> entries;
      entries.reserve(ng);
      const auto gv = gallery.data();
      for (std::size_t r = 0; r < ng; ++r) {
        double dist = 0.0;
        for (std::size_t j = 0; j < e; ++j) {
          const double d = static_cast<double>(qv[q * e + j]) - static_cast<double>(gv[order[r] * e + j]);
          dist += d * d;
        }
        entries.push_back({gallery_ids[order[r]], static_cast<float>(dist)});
      }
      rankings_out->push_back(std::move(entries));
    }
    if (total_relevant == 0) {
      ++out.zero_relevant_queries;
      continue;
    }
    for (int k : ks) {
      out.map_at[k] += average_precision(relevance, static_cast<std::size_t>(k));
      out.prec_at[k] += precision_at(relevance, static_cast<std::size_t>(k));
    }
    out.map_all += average_precision(relevance, ng);
  }

  const std::size_t counted = nq - out.zero_relevant_queries;
  if (counted > 0) {
    for (int k : ks) {
      out.map_at[k] /= static_cast<double>(counted);
      out.prec_at[k] /= static_cast<double>(counted);
    }
    out.map_all /= static_cast<double>(counted);
  }
  return out;
}

std::string format_float(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::kNone: return "none";
    case PromptMode::kPhase1: return "phase1";
    case PromptMode::kTpg: return "tpg";
    case PromptMode::kMeanPrompt: return "mean_prompt";
  }
  throw ContractError("unknown prompt mode");
}

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "none") return PromptMode::kNone;
  if (s == "phase1") return PromptMode::kPhase1;
  if (s == "tpg") return PromptMode::kTpg;
  if (s == "mean_prompt") return PromptMode::kMeanPrompt;
  throw ConfigError("unknown prompt mode '" + s + "' (expected none, phase1, tpg, or mean_prompt)");
}

Tensor<float> embed_sample(const Model<float>& model, const SampleRecord& rec, PromptMode mode) {
  return embed_one(model, rec, mode, nullptr);
}

Tensor<float> embed_set(const Model<float>& model, const Dataset& ds, std::span<const std::int64_t> ids,
                        PromptMode mode, int workers) {
  if (workers < 1) throw ConfigError("embed_set: workers must be >= 1");
  const std::size_t n = ids.size();
  const std::size_t e = static_cast<std::size_t>(model.cfg.image.embed_dim);
  Tensor<float> out = Tensor<float>::zeros({n, e});
  if (n == 0) return out;

  Tensor<float> mean;
  if (mode == PromptMode::kMeanPrompt) mean = model.mean_prompt();
  const Tensor<float>* mean_ptr = mode == PromptMode::kMeanPrompt ? &mean : nullptr;

  auto run_rows = [&](std::size_t begin, std::size_t end) {
    auto ov = out.data();
    for (std::size_t r = begin; r < end; ++r) {
      const auto id = static_cast<std::size_t>(ids[r]);
      if (id >= ds.samples.size()) {
        throw ContractError("embed_set: sample id " + std::to_string(ids[r]) + " out of range");
      }
      auto emb = embed_one(model, ds.samples[id], mode, mean_ptr);
      std::copy(emb.data().begin(), emb.data().end(), ov.begin() + static_cast<std::ptrdiff_t>(r * e));
    }
  };

  const std::size_t threads = std::min(static_cast<std::size_t>(workers), n);
  if (threads <= 1) {
    run_rows(0, n);
    return out;
  }

  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk, end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        run_rows(begin, end);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

std::vector<std::size_t> rank(std::span<const float> query, const Tensor<float>& gallery) {
  if (gallery.rank() != 2 || gallery.shape()[0] == 0) {
    throw ContractError("rank: gallery must be a nonempty [n x E] matrix");
  }
  const std::size_t n = gallery.shape()[0], e = gallery.shape()[1];
  if (query.size() != e) {
    throw ContractError("rank: query width " + std::to_string(query.size()) + " vs gallery width " +
                        std::to_string(e));
  }
  const auto gv = gallery.data();
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < e; ++j) {
      const double d = static_cast<double>(query[j]) - static_cast<double>(gv[i * e + j]);
      acc += d * d;
    }
    dist[i] = acc;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return a < b;
  });
  return order;
}

double average_precision(std::span<const std::uint8_t> relevance, std::size_t k) {
  if (k == 0) throw ConfigError("average_precision: k must be positive");
  std::size_t total_relevant = 0;
  for (auto r : relevance) total_relevant += r;
  if (total_relevant == 0) return 0.0;

  const std::size_t upto = std::min(k, relevance.size());
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < upto; ++i) {
    if (!relevance[i]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(std::min(total_relevant, k));
}

double precision_at(std::span<const std::uint8_t> relevance, std::size_t k) {
  if (k == 0) throw ConfigError("precision_at: k must be positive");
  const std::size_t upto = std::min(k, relevance.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < upto; ++i) hits += relevance[i];
  return static_cast<double>(hits) / static_cast<double>(k);
}

RetrievalMetrics compute_metrics(const Tensor<float>& query_embeddings, std::span<const int> query_classes,
                                 const Tensor<float>& gallery_embeddings, std::span<const int> gallery_classes,
                                 std::span<const int> ks) {
  return run_queries(query_embeddings, query_classes, gallery_embeddings, gallery_classes, ks, {}, nullptr);
}

RetrievalReport evaluate_ids(const Model<float>& model, const Dataset& ds, std::span<const std::int64_t> query_ids,
                             std::span<const std::int64_t> gallery_ids, const EvaluateOptions& options) {
  if (query_ids.empty() || gallery_ids.empty()) {
    throw ProtocolError("evaluate: query and gallery sets must both be nonempty");
  }
  RetrievalReport report;
  report.mode = options.mode;
  report.query_ids.assign(query_ids.begin(), query_ids.end());
  report.gallery_ids.assign(gallery_ids.begin(), gallery_ids.end());

  auto queries = embed_set(model, ds, query_ids, options.mode, options.workers);
  auto gallery = embed_set(model, ds, gallery_ids, options.mode, options.workers);
  std::vector<int> query_classes, gallery_classes;
  query_classes.reserve(query_ids.size());
  gallery_classes.reserve(gallery_ids.size());
  for (auto id : query_ids) query_classes.push_back(ds.samples[static_cast<std::size_t>(id)].class_id);
  for (auto id : gallery_ids) gallery_classes.push_back(ds.samples[static_cast<std::size_t>(id)].class_id);

  report.metrics = run_queries(queries, query_classes, gallery, gallery_classes, options.ks, gallery_ids,
                               options.keep_rankings ? &report.rankings : nullptr);
  if (options.keep_embeddings) {
    report.query_embeddings = queries;
    report.gallery_embeddings = gallery;
  }
  return report;
}

RetrievalReport evaluate(const Model<float>& model, const Dataset& ds, const SplitAssignment& splits,
                         const EvaluateOptions& options) {
  auto query_ids = splits.ids_with(options.query_tag);
  auto gallery_ids = splits.ids_with(options.gallery_tag);
  auto report = evaluate_ids(model, ds, query_ids, gallery_ids, options);
  report.query_tag = to_string(options.query_tag);
  report.gallery_tag = to_string(options.gallery_tag);
  report.protocol = to_string(splits.protocol);
  report.gallery_mode = to_string(splits.gallery_mode);
  return report;
}

void write_report_json(const std::string& path, const RetrievalReport& report,
                       const std::map<std::string, std::string>& extra) {
  json j;
  j["schema_version"] = 1;
  j["prompt_mode"] = to_string(report.mode);
  j["protocol"] = report.protocol;
  j["gallery_mode"] = report.gallery_mode;
  j["query_tag"] = report.query_tag;
  j["gallery_tag"] = report.gallery_tag;
  j["num_queries"] = report.metrics.num_queries;
  j["num_gallery"] = report.metrics.num_gallery;
  j["zero_relevant_queries"] = report.metrics.zero_relevant_queries;
  json map_at = json::object(), prec_at = json::object();
  for (const auto& [k, v] : report.metrics.map_at) map_at[std::to_string(k)] = v;
  for (const auto& [k, v] : report.metrics.prec_at) prec_at[std::to_string(k)] = v;
  j["metrics"] = json{{"map_all", report.metrics.map_all}, {"map_at", map_at}, {"prec_at", prec_at}};
  for (const auto& [key, value] : extra) j[key] = value;

  std::ofstream out(path);
  if (!out) throw IoError("write_report_json: cannot open " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write_report_json: write failed for " + path);
}

void write_rankings_csv(const std::string& path, const RetrievalReport& report) {
  if (report.rankings.size() != report.query_ids.size()) {
    throw StateError("write_rankings_csv: report was built without keep_rankings");
  }
  std::ofstream out(path);
  if (!out) throw IoError("write_rankings_csv: cannot open " + path);
  out << "query_id,rank,gallery_id,distance\n";
  for (std::size_t q = 0; q < report.rankings.size(); ++q) {
    for (std::size_t r = 0; r < report.rankings[q].size(); ++r) {
      const auto& entry = report.rankings[q][r];
      out << report.query_ids[q] << "," << r << "," << entry.gallery_id << ","
          << format_float(static_cast<double>(entry.distance)) << "\n";
    }
  }
  if (!out) throw IoError("write_rankings_csv: write failed for " + path);
}

void write_embeddings(const std::string& path, const Tensor<float>& queries, const Tensor<float>& gallery) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_embeddings: cannot open " + path);
  write_tensor(out, queries);
  write_tensor(out, gallery);
  if (!out) throw IoError("write_embeddings: write failed for " + path);
}

}  // namespace ucdr
