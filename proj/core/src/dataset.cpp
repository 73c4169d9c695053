#include "ucdr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "ucdr/errors.hpp"
#include "ucdr/tensor_io.hpp"
#include "ucdr/util.hpp"

namespace ucdr {

namespace {

using nlohmann::json;

constexpr std::uint64_t kSaltStyleBasis = 0x57e1;
constexpr std::uint64_t kSaltMixBasis = 0x3a5e;
constexpr std::uint64_t kSaltPrototype = 0xc1a5;
constexpr std::uint64_t kSaltDomain = 0xd07;
constexpr std::uint64_t kSaltCell = 0xce11;
constexpr std::uint64_t kSaltSplit = 0x5b117;

constexpr int kStyleRank = 2;
constexpr int kMixRank = 3;
// Fraction of domain_transform_scale spent on coordinate mixing; the rest
// drives the low-rank style shift.
constexpr double kMixFraction = 0.4;

void validate(const GeneratorConfig& cfg) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("generator: " + msg);
  };
  require(cfg.num_classes >= 1, "num_classes must be >= 1");
  require(cfg.num_domains >= 1, "num_domains must be >= 1");
  require(cfg.tokens >= 1, "tokens must be >= 1");
  require(cfg.token_dim >= 1, "token_dim must be >= 1");
  require(cfg.samples_per_cell >= 1, "samples_per_cell must be >= 1");
  require(cfg.class_separation >= 0.0, "class_separation must be >= 0");
  require(cfg.domain_transform_scale >= 0.0, "domain_transform_scale must be >= 0");
  require(cfg.noise_sigma >= 0.0, "noise_sigma must be >= 0");
  if (cfg.class_separation == 0.0 || cfg.noise_sigma == 0.0) {
    warn("generator: class_separation or noise_sigma is zero; dataset will be degenerate");
  }
}

std::string pad2(int v) {
  std::string s = std::to_string(v);
  return s.size() < 2 ? "0" + s : s;
}

struct DomainTransform {
  std::vector<float> mix;   // [D x D], row' = row * mix^T
  std::vector<float> bias;  // [D]
};

// Domains share one set of skew generators and one style basis; each domain
// only picks its own coefficients, so a held-out domain's transform stays in
// the family spanned by the training domains.
DomainTransform domain_transform(const GeneratorConfig& cfg, const std::vector<float>& mix_basis,
                                 const std::vector<float>& style_basis, int d) {
  const int dim = cfg.token_dim;
  DomainTransform t;
  t.mix.assign(static_cast<std::size_t>(dim) * dim, 0.0f);
  t.bias.assign(dim, 0.0f);
  for (int i = 0; i < dim; ++i) t.mix[static_cast<std::size_t>(i) * dim + i] = 1.0f;
  if (d == 0) return t;  // canonical domain: identity, no shift

  auto rng = make_rng(cfg.seed, {kSaltDomain, static_cast<std::uint64_t>(d)});
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> mix_coeff(kMixRank);
  for (double& v : mix_coeff) v = unit(rng);
  const double mix_scale = kMixFraction * cfg.domain_transform_scale /
                           std::sqrt(static_cast<double>(dim) * kMixRank);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) {
      double acc = 0.0;
      for (int r = 0; r < kMixRank; ++r) {
        const auto base = static_cast<std::size_t>(r) * dim * dim;
        // Skew-symmetric perturbation keeps the mixing invertible.
        acc += mix_coeff[static_cast<std::size_t>(r)] * 0.5 *
               (mix_basis[base + static_cast<std::size_t>(i) * dim + j] -
                mix_basis[base + static_cast<std::size_t>(j) * dim + i]);
      }
      t.mix[static_cast<std::size_t>(i) * dim + j] += static_cast<float>(mix_scale * acc);
    }
  }
  const double style_scale = cfg.domain_transform_scale;
  std::vector<double> coeff(kStyleRank);
  for (double& v : coeff) v = unit(rng);
  for (int i = 0; i < dim; ++i) {
    double acc = 0.0;
    for (int r = 0; r < kStyleRank; ++r) acc += style_basis[static_cast<std::size_t>(i) * kStyleRank + r] * coeff[r];
    t.bias[i] = static_cast<float>(style_scale * acc);
  }
  return t;
}

json generator_to_json(const GeneratorConfig& g) {
  return json{{"num_classes", g.num_classes},
              {"num_domains", g.num_domains},
              {"tokens", g.tokens},
              {"token_dim", g.token_dim},
              {"samples_per_cell", g.samples_per_cell},
              {"class_separation", g.class_separation},
              {"domain_transform_scale", g.domain_transform_scale},
              {"noise_sigma", g.noise_sigma},
              {"seed", g.seed}};
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig g;
  g.num_classes = j.at("num_classes").get<int>();
  g.num_domains = j.at("num_domains").get<int>();
  g.tokens = j.at("tokens").get<int>();
  g.token_dim = j.at("token_dim").get<int>();
  g.samples_per_cell = j.at("samples_per_cell").get<int>();
  g.class_separation = j.at("class_separation").get<double>();
  g.domain_transform_scale = j.at("domain_transform_scale").get<double>();
  g.noise_sigma = j.at("noise_sigma").get<double>();
  g.seed = j.at("seed").get<std::uint64_t>();
  return g;
}

}  // namespace

std::int64_t sample_id_of(const GeneratorConfig& cfg, int class_id, int domain_id, int slot) {
  return (static_cast<std::int64_t>(class_id) * cfg.num_domains + domain_id) * cfg.samples_per_cell + slot;
}

Dataset generate_dataset(const GeneratorConfig& cfg) {
  validate(cfg);
  const int dim = cfg.token_dim;

  auto style_rng = make_rng(cfg.seed, {kSaltStyleBasis});
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<float> style_basis(static_cast<std::size_t>(dim) * kStyleRank);
  const double basis_scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (float& v : style_basis) v = static_cast<float>(basis_scale * unit(style_rng));

  auto mix_rng = make_rng(cfg.seed, {kSaltMixBasis});
  std::vector<float> mix_basis(static_cast<std::size_t>(kMixRank) * dim * dim);
  for (float& v : mix_basis) v = static_cast<float>(unit(mix_rng));

  std::vector<Tensor<float>> prototypes;
  prototypes.reserve(static_cast<std::size_t>(cfg.num_classes));
  for (int c = 0; c < cfg.num_classes; ++c) {
    auto rng = make_rng(cfg.seed, {kSaltPrototype, static_cast<std::uint64_t>(c)});
    prototypes.push_back(Tensor<float>::gaussian({static_cast<std::size_t>(cfg.tokens), static_cast<std::size_t>(dim)},
                                                 rng, static_cast<float>(cfg.class_separation)));
  }

  std::vector<DomainTransform> transforms;
  transforms.reserve(static_cast<std::size_t>(cfg.num_domains));
  for (int d = 0; d < cfg.num_domains; ++d) transforms.push_back(domain_transform(cfg, mix_basis, style_basis, d));

  Dataset ds;
  ds.manifest.generator = cfg;
  ds.manifest.num_samples =
      static_cast<std::int64_t>(cfg.num_classes) * cfg.num_domains * cfg.samples_per_cell;
  for (int c = 0; c < cfg.num_classes; ++c) ds.manifest.class_names.push_back("class_" + pad2(c));
  for (int d = 0; d < cfg.num_domains; ++d) ds.manifest.domain_names.push_back("domain_" + pad2(d));
  ds.samples.resize(static_cast<std::size_t>(ds.manifest.num_samples));

  std::vector<float> raw(static_cast<std::size_t>(cfg.tokens) * dim);
  for (int c = 0; c < cfg.num_classes; ++c) {
    for (int d = 0; d < cfg.num_domains; ++d) {
      auto cell_rng = make_rng(cfg.seed, {kSaltCell, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(d)});
      const DomainTransform& tf = transforms[static_cast<std::size_t>(d)];
      const auto proto = prototypes[static_cast<std::size_t>(c)].data();
      for (int slot = 0; slot < cfg.samples_per_cell; ++slot) {
        for (std::size_t i = 0; i < raw.size(); ++i) {
          raw[i] = proto[i] + static_cast<float>(cfg.noise_sigma * unit(cell_rng));
        }
        SampleRecord rec;
        rec.sample_id = sample_id_of(cfg, c, d, slot);
        rec.class_id = c;
        rec.domain_id = d;
        rec.tokens = Tensor<float>::zeros({static_cast<std::size_t>(cfg.tokens), static_cast<std::size_t>(dim)});
        auto out = rec.tokens.data();
        for (int t = 0; t < cfg.tokens; ++t) {
          const float* row = raw.data() + static_cast<std::size_t>(t) * dim;
          float* orow = out.data() + static_cast<std::size_t>(t) * dim;
          for (int i = 0; i < dim; ++i) {
            double acc = tf.bias[static_cast<std::size_t>(i)];
            const float* mrow = tf.mix.data() + static_cast<std::size_t>(i) * dim;
            for (int j = 0; j < dim; ++j) acc += static_cast<double>(mrow[j]) * row[j];
            orow[i] = static_cast<float>(acc);
          }
        }
        ds.samples[static_cast<std::size_t>(rec.sample_id)] = std::move(rec);
      }
    }
  }
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("save_dataset: cannot create " + dir + ": " + ec.message());

  json m;
  m["schema_version"] = ds.manifest.schema_version;
  m["num_samples"] = ds.manifest.num_samples;
  m["class_names"] = ds.manifest.class_names;
  m["domain_names"] = ds.manifest.domain_names;
  m["generator"] = generator_to_json(ds.manifest.generator);

  const auto manifest_path = std::filesystem::path(dir) / "manifest.json";
  std::ofstream mf(manifest_path);
  if (!mf) throw IoError("save_dataset: cannot open " + manifest_path.string());
  mf << m.dump(2) << "\n";
  if (!mf) throw IoError("save_dataset: write failed for " + manifest_path.string());

  const auto bin_path = std::filesystem::path(dir) / "samples.bin";
  std::ofstream bf(bin_path, std::ios::binary);
  if (!bf) throw IoError("save_dataset: cannot open " + bin_path.string());
  for (const SampleRecord& rec : ds.samples) write_tensor(bf, rec.tokens);
  if (!bf) throw IoError("save_dataset: write failed for " + bin_path.string());
}

Dataset load_dataset(const std::string& dir) {
  const auto manifest_path = std::filesystem::path(dir) / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("load_dataset: cannot open " + manifest_path.string());
  json m;
  try {
    m = json::parse(mf);
  } catch (const json::parse_error& e) {
    throw FormatError("load_dataset: manifest is not valid JSON: " + std::string(e.what()));
  }

  Dataset ds;
  try {
    ds.manifest.schema_version = m.at("schema_version").get<int>();
    if (ds.manifest.schema_version != 1) {
      throw FormatError("load_dataset: unsupported schema_version " +
                        std::to_string(ds.manifest.schema_version));
    }
    ds.manifest.num_samples = m.at("num_samples").get<std::int64_t>();
    ds.manifest.class_names = m.at("class_names").get<std::vector<std::string>>();
    ds.manifest.domain_names = m.at("domain_names").get<std::vector<std::string>>();
    ds.manifest.generator = generator_from_json(m.at("generator"));
  } catch (const json::exception& e) {
    throw FormatError("load_dataset: manifest missing fields: " + std::string(e.what()));
  }

  const GeneratorConfig& g = ds.manifest.generator;
  const std::int64_t expected =
      static_cast<std::int64_t>(g.num_classes) * g.num_domains * g.samples_per_cell;
  if (ds.manifest.num_samples != expected) {
    throw FormatError("load_dataset: num_samples " + std::to_string(ds.manifest.num_samples) +
                      " does not match the " + std::to_string(expected) + "-sample grid");
  }

  const auto bin_path = std::filesystem::path(dir) / "samples.bin";
  std::ifstream bf(bin_path, std::ios::binary);
  if (!bf) throw IoError("load_dataset: cannot open " + bin_path.string());
  ds.samples.resize(static_cast<std::size_t>(ds.manifest.num_samples));
  for (std::int64_t id = 0; id < ds.manifest.num_samples; ++id) {
    SampleRecord rec;
    rec.sample_id = id;
    rec.class_id = static_cast<int>(id / (static_cast<std::int64_t>(g.num_domains) * g.samples_per_cell));
    rec.domain_id = static_cast<int>((id / g.samples_per_cell) % g.num_domains);
    rec.tokens = read_tensor(bf);
    if (rec.tokens.rank() != 2 || rec.tokens.shape()[0] != static_cast<std::size_t>(g.tokens) ||
        rec.tokens.shape()[1] != static_cast<std::size_t>(g.token_dim)) {
      throw FormatError("load_dataset: sample " + std::to_string(id) + " has shape " +
                        shape_to_string(rec.tokens.shape()));
    }
    ds.samples[static_cast<std::size_t>(id)] = std::move(rec);
  }
  if (bf.peek() != std::char_traits<char>::eof()) {
    throw FormatError("load_dataset: trailing bytes after the last sample");
  }
  return ds;
}

// ---- splits ----

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kUcdr: return "ucdr";
    case Protocol::kUcCdr: return "uccdr";
    case Protocol::kUdCdr: return "udcdr";
  }
  throw ContractError("unknown protocol");
}

std::string to_string(GalleryMode m) {
  return m == GalleryMode::kUnseenOnly ? "unseen_only" : "seen_plus_unseen";
}

std::string to_string(SplitTag t) {
  switch (t) {
    case SplitTag::kNone: return "none";
    case SplitTag::kTrain: return "train";
    case SplitTag::kValQuery: return "val_query";
    case SplitTag::kValGallery: return "val_gallery";
    case SplitTag::kTestQuery: return "test_query";
    case SplitTag::kTestGallery: return "test_gallery";
  }
  throw ContractError("unknown split tag");
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "ucdr") return Protocol::kUcdr;
  if (s == "uccdr") return Protocol::kUcCdr;
  if (s == "udcdr") return Protocol::kUdCdr;
  throw ConfigError("unknown protocol '" + s + "' (expected ucdr, uccdr, or udcdr)");
}

GalleryMode gallery_mode_from_string(const std::string& s) {
  if (s == "unseen_only") return GalleryMode::kUnseenOnly;
  if (s == "seen_plus_unseen") return GalleryMode::kSeenPlusUnseen;
  throw ConfigError("unknown gallery_mode '" + s + "'");
}

SplitTag split_tag_from_string(const std::string& s) {
  if (s == "none") return SplitTag::kNone;
  if (s == "train") return SplitTag::kTrain;
  if (s == "val_query") return SplitTag::kValQuery;
  if (s == "val_gallery") return SplitTag::kValGallery;
  if (s == "test_query") return SplitTag::kTestQuery;
  if (s == "test_gallery") return SplitTag::kTestGallery;
  throw FormatError("unknown split tag '" + s + "'");
}

std::vector<std::int64_t> SplitAssignment::ids_with(SplitTag tag) const {
  std::vector<std::int64_t> ids;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == tag) ids.push_back(static_cast<std::int64_t>(i));
  }
  return ids;
}

bool SplitAssignment::class_is_seen(int class_id) const {
  return std::find(seen_classes.begin(), seen_classes.end(), class_id) != seen_classes.end();
}

bool SplitAssignment::domain_is_seen(int domain_id) const {
  return std::find(seen_domains.begin(), seen_domains.end(), domain_id) != seen_domains.end();
}

SplitAssignment make_splits(const DatasetManifest& manifest, Protocol protocol,
                            std::optional<int> holdout_domain, double holdout_class_fraction,
                            GalleryMode gallery_mode) {
  const GeneratorConfig& g = manifest.generator;
  const int C = g.num_classes, D = g.num_domains, spc = g.samples_per_cell;

  if (holdout_class_fraction < 0.0 || holdout_class_fraction >= 1.0) {
    throw ConfigError("holdout_class_fraction must lie in [0, 1)");
  }

  SplitAssignment sp;
  sp.protocol = protocol;
  sp.gallery_mode = gallery_mode;
  sp.holdout_class_fraction = holdout_class_fraction;

  // Query domain. Domain 0 is the canonical gallery domain and can never be
  // held out or queried.
  if (protocol == Protocol::kUcCdr) {
    sp.holdout_domain = holdout_domain.value_or(D - 1);
  } else {
    if (!holdout_domain.has_value()) {
      throw ProtocolError(to_string(protocol) + " requires a holdout domain");
    }
    sp.holdout_domain = *holdout_domain;
  }
  if (sp.holdout_domain < 1 || sp.holdout_domain >= D) {
    throw ProtocolError("holdout domain " + std::to_string(sp.holdout_domain) +
                        " must lie in [1, " + std::to_string(D) + ") since domain 0 is the gallery domain");
  }

  // Class partition: a seeded shuffle picks the unseen classes; the first
  // half of the unseen set validates, the rest tests.
  std::vector<int> order(static_cast<std::size_t>(C));
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(g.seed, {kSaltSplit});
  std::shuffle(order.begin(), order.end(), rng);

  const int unseen = static_cast<int>(std::floor(holdout_class_fraction * C));
  if (protocol == Protocol::kUdCdr) {
    if (unseen != 0) throw ProtocolError("udcdr holds out a domain only; holdout_class_fraction must be 0");
  } else if (unseen < 2) {
    throw ProtocolError(to_string(protocol) + " needs at least 2 held-out classes, got " +
                        std::to_string(unseen) + "; raise holdout_class_fraction");
  }
  if (C - unseen < 1) throw ProtocolError("no seen classes remain after the class holdout");

  const int val_count = unseen / 2;
  sp.val_classes.assign(order.begin(), order.begin() + val_count);
  sp.test_classes.assign(order.begin() + val_count, order.begin() + unseen);
  sp.seen_classes.assign(order.begin() + unseen, order.end());
  std::sort(sp.val_classes.begin(), sp.val_classes.end());
  std::sort(sp.test_classes.begin(), sp.test_classes.end());
  std::sort(sp.seen_classes.begin(), sp.seen_classes.end());

  for (int d = 0; d < D; ++d) {
    if (protocol == Protocol::kUcCdr || d != sp.holdout_domain) sp.seen_domains.push_back(d);
  }

  // Reserved tail of every seen-class domain-0 cell; keeps the train set
  // identical across gallery modes.
  const int reserve = std::min(spc, std::max(2, spc / 6));
  const int reserve_val = reserve / 2;

  sp.tags.assign(static_cast<std::size_t>(manifest.num_samples), SplitTag::kNone);
  auto tag_cell = [&](int c, int d, int from, int to, SplitTag tag) {
    for (int slot = from; slot < to; ++slot) {
      sp.tags[static_cast<std::size_t>(sample_id_of(g, c, d, slot))] = tag;
    }
  };

  for (int c = 0; c < C; ++c) {
    const bool seen_class = sp.class_is_seen(c);
    const bool val_class = std::find(sp.val_classes.begin(), sp.val_classes.end(), c) != sp.val_classes.end();
    for (int d = 0; d < D; ++d) {
      const bool seen_domain = sp.domain_is_seen(d);
      const bool query_domain = d == sp.holdout_domain;
      if (protocol == Protocol::kUdCdr && query_domain) {
        // Every class is seen under udcdr; each held-out-domain cell splits
        // into validation and test queries.
        tag_cell(c, d, 0, spc / 2, SplitTag::kValQuery);
        tag_cell(c, d, spc / 2, spc, SplitTag::kTestQuery);
      } else if (seen_class && seen_domain) {
        if (d == 0) {
          tag_cell(c, d, 0, spc - reserve, SplitTag::kTrain);
          if (protocol == Protocol::kUdCdr || gallery_mode == GalleryMode::kSeenPlusUnseen) {
            tag_cell(c, d, spc - reserve, spc - reserve + reserve_val, SplitTag::kValGallery);
            tag_cell(c, d, spc - reserve + reserve_val, spc, SplitTag::kTestGallery);
          }
        } else {
          tag_cell(c, d, 0, spc, SplitTag::kTrain);
        }
      } else if (!seen_class) {
        if (d == 0) {
          tag_cell(c, d, 0, spc, val_class ? SplitTag::kValGallery : SplitTag::kTestGallery);
        } else if (query_domain) {
          tag_cell(c, d, 0, spc, val_class ? SplitTag::kValQuery : SplitTag::kTestQuery);
        }
      }
    }
  }

  for (SplitTag tag : {SplitTag::kTrain, SplitTag::kValQuery, SplitTag::kValGallery, SplitTag::kTestQuery,
                       SplitTag::kTestGallery}) {
    if (sp.ids_with(tag).empty()) {
      throw ProtocolError(to_string(protocol) + " split '" + to_string(tag) +
                          "' is empty; the dataset is too small for this protocol");
    }
  }
  return sp;
}

void save_splits(const std::string& path, const SplitAssignment& sp) {
  json j;
  j["schema_version"] = 1;
  j["protocol"] = to_string(sp.protocol);
  j["gallery_mode"] = to_string(sp.gallery_mode);
  j["holdout_domain"] = sp.holdout_domain;
  j["holdout_class_fraction"] = sp.holdout_class_fraction;
  j["seen_classes"] = sp.seen_classes;
  j["val_classes"] = sp.val_classes;
  j["test_classes"] = sp.test_classes;
  j["seen_domains"] = sp.seen_domains;
  json tags = json::object();
  for (std::size_t i = 0; i < sp.tags.size(); ++i) {
    tags[std::to_string(i)] = to_string(sp.tags[i]);
  }
  j["tags"] = std::move(tags);

  std::ofstream out(path);
  if (!out) throw IoError("save_splits: cannot open " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("save_splits: write failed for " + path);
}

SplitAssignment load_splits(const std::string& path, const DatasetManifest& manifest) {
  std::ifstream in(path);
  if (!in) throw IoError("load_splits: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("load_splits: not valid JSON: " + std::string(e.what()));
  }

  SplitAssignment sp;
  try {
    if (j.at("schema_version").get<int>() != 1) {
      throw FormatError("load_splits: unsupported schema_version");
    }
    sp.protocol = protocol_from_string(j.at("protocol").get<std::string>());
    sp.gallery_mode = gallery_mode_from_string(j.at("gallery_mode").get<std::string>());
    sp.holdout_domain = j.at("holdout_domain").get<int>();
    sp.holdout_class_fraction = j.at("holdout_class_fraction").get<double>();
    sp.seen_classes = j.at("seen_classes").get<std::vector<int>>();
    sp.val_classes = j.at("val_classes").get<std::vector<int>>();
    sp.test_classes = j.at("test_classes").get<std::vector<int>>();
    sp.seen_domains = j.at("seen_domains").get<std::vector<int>>();
    const json& tags = j.at("tags");
    if (static_cast<std::int64_t>(tags.size()) != manifest.num_samples) {
      throw FormatError("load_splits: " + std::to_string(tags.size()) + " tags for " +
                        std::to_string(manifest.num_samples) + " samples");
    }
    sp.tags.assign(static_cast<std::size_t>(manifest.num_samples), SplitTag::kNone);
    for (const auto& [key, value] : tags.items()) {
      const std::int64_t id = std::stoll(key);
      if (id < 0 || id >= manifest.num_samples) {
        throw FormatError("load_splits: sample_id " + key + " out of range");
      }
      sp.tags[static_cast<std::size_t>(id)] = split_tag_from_string(value.get<std::string>());
    }
  } catch (const json::exception& e) {
    throw FormatError("load_splits: missing fields: " + std::string(e.what()));
  }
  return sp;
}

}  // namespace ucdr
