#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ucdr/tensor.hpp"

namespace ucdr {

// Synthetic corpus layout: num_classes x num_domains cells, samples_per_cell
// token grids per cell. Domain 0 applies the identity transform and acts as
// the canonical gallery domain; every other domain applies a mild invertible
// mixing of token coordinates plus a style shift drawn from a shared
// low-rank basis, so unseen domains remain related to seen ones.
struct GeneratorConfig {
  int num_classes = 12;
  int num_domains = 5;
  int tokens = 16;
  int token_dim = 64;
  int samples_per_cell = 60;
  double class_separation = 0.4;
  double domain_transform_scale = 2.0;
  double noise_sigma = 0.6;
  std::uint64_t seed = 1;
};

struct SampleRecord {
  std::int64_t sample_id = 0;
  int class_id = 0;
  int domain_id = 0;
  Tensor<float> tokens;  // [tokens x token_dim]
};

struct DatasetManifest {
  int schema_version = 1;
  GeneratorConfig generator;
  std::vector<std::string> class_names;
  std::vector<std::string> domain_names;
  std::int64_t num_samples = 0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SampleRecord> samples;  // indexed by sample_id
};

// sample_id encodes its cell: id = (class * num_domains + domain) *
// samples_per_cell + slot.
std::int64_t sample_id_of(const GeneratorConfig& cfg, int class_id, int domain_id, int slot);

// Every cell is generated from its own seeded stream, so cell contents do
// not depend on the dimensions or contents of other cells.
Dataset generate_dataset(const GeneratorConfig& cfg);

void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

// ---- retrieval protocol splits ----

enum class Protocol { kUcdr, kUcCdr, kUdCdr };
enum class GalleryMode { kUnseenOnly, kSeenPlusUnseen };
enum class SplitTag : std::uint8_t { kNone, kTrain, kValQuery, kValGallery, kTestQuery, kTestGallery };

std::string to_string(Protocol p);
std::string to_string(GalleryMode m);
std::string to_string(SplitTag t);
Protocol protocol_from_string(const std::string& s);
GalleryMode gallery_mode_from_string(const std::string& s);
SplitTag split_tag_from_string(const std::string& s);

struct SplitAssignment {
  Protocol protocol = Protocol::kUcdr;
  GalleryMode gallery_mode = GalleryMode::kUnseenOnly;
  int holdout_domain = -1;  // query domain; -1 only while unset
  double holdout_class_fraction = 0.0;
  std::vector<int> seen_classes;
  std::vector<int> val_classes;
  std::vector<int> test_classes;
  std::vector<int> seen_domains;
  std::vector<SplitTag> tags;  // indexed by sample_id

  std::vector<std::int64_t> ids_with(SplitTag tag) const;
  bool class_is_seen(int class_id) const;
  bool domain_is_seen(int domain_id) const;
};

// Partitions the corpus for one retrieval protocol.
//  - kUcdr: a class fraction and one non-canonical domain are held out; test
//    queries pair unseen classes with the unseen domain.
//  - kUcCdr: only classes are held out; queries come from a seen domain
//    (holdout_domain if given, else the last domain).
//  - kUdCdr: only a domain is held out; holdout_class_fraction must be 0.
// Gallery samples always come from domain 0. A slice of each seen-class
// domain-0 cell is reserved from training so galleries can include seen
// classes without leaking training data.
SplitAssignment make_splits(const DatasetManifest& manifest, Protocol protocol,
                            std::optional<int> holdout_domain, double holdout_class_fraction,
                            GalleryMode gallery_mode);

void save_splits(const std::string& path, const SplitAssignment& splits);
SplitAssignment load_splits(const std::string& path, const DatasetManifest& manifest);

}  // namespace ucdr
