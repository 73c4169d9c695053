#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "ucdr/dataset.hpp"
#include "ucdr/errors.hpp"
#include "ucdr/util.hpp"

using namespace ucdr;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig cfg;
  cfg.num_classes = 6;
  cfg.num_domains = 4;
  cfg.tokens = 4;
  cfg.token_dim = 8;
  cfg.samples_per_cell = 12;
  cfg.seed = 5;
  return cfg;
}

std::uint64_t dataset_hash(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& s : ds.samples) h = fnv1a64_span(s.tokens.data(), h);
  return h;
}

}  // namespace

TEST_CASE("generator validates its config") {
  GeneratorConfig cfg = small_config();
  cfg.num_classes = 0;
  CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
  cfg = small_config();
  cfg.noise_sigma = -1.0;
  CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
}

TEST_CASE("generation is deterministic and seed sensitive") {
  auto a = generate_dataset(small_config());
  auto b = generate_dataset(small_config());
  CHECK(dataset_hash(a) == dataset_hash(b));

  GeneratorConfig other = small_config();
  other.seed = 6;
  CHECK(dataset_hash(generate_dataset(other)) != dataset_hash(a));
}

TEST_CASE("sample ids encode cell and slot") {
  auto cfg = small_config();
  auto ds = generate_dataset(cfg);
  REQUIRE(ds.manifest.num_samples == 6 * 4 * 12);
  for (const auto& s : ds.samples) {
    CHECK(s.sample_id == sample_id_of(cfg, s.class_id, s.domain_id, static_cast<int>(s.sample_id % 12)));
    CHECK(s.tokens.shape() == Shape{4, 8});
    CHECK(all_finite(s.tokens.data()));
  }
}

TEST_CASE("cell contents do not depend on grid size") {
  // Growing the grid must not disturb previously existing cells.
  auto cfg = small_config();
  auto ds = generate_dataset(cfg);
  GeneratorConfig bigger = cfg;
  bigger.num_classes = 8;
  bigger.num_domains = 5;
  auto ds2 = generate_dataset(bigger);
  for (int c = 0; c < cfg.num_classes; ++c) {
    for (int d = 0; d < cfg.num_domains; ++d) {
      for (int slot = 0; slot < cfg.samples_per_cell; ++slot) {
        const auto& a = ds.samples[static_cast<std::size_t>(sample_id_of(cfg, c, d, slot))];
        const auto& b = ds2.samples[static_cast<std::size_t>(sample_id_of(bigger, c, d, slot))];
        REQUIRE(a.tokens.size() == b.tokens.size());
        for (std::size_t i = 0; i < a.tokens.size(); ++i) {
          CHECK(a.tokens.data()[i] == b.tokens.data()[i]);
        }
      }
    }
  }
}

TEST_CASE("same class clusters tighter than different classes on average") {
  auto ds = generate_dataset(small_config());
  auto dist = [](const SampleRecord& a, const SampleRecord& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.tokens.size(); ++i) {
      const double d = a.tokens.data()[i] - b.tokens.data()[i];
      acc += d * d;
    }
    return acc;
  };
  // Within domain 0: same-class pairs vs different-class pairs.
  double same = 0, diff = 0;
  int ns = 0, nd = 0;
  for (const auto& a : ds.samples) {
    if (a.domain_id != 0) continue;
    for (const auto& b : ds.samples) {
      if (b.domain_id != 0 || b.sample_id <= a.sample_id) continue;
      if (a.class_id == b.class_id) {
        same += dist(a, b);
        ++ns;
      } else {
        diff += dist(a, b);
        ++nd;
      }
    }
  }
  CHECK(same / ns < diff / nd);
}

TEST_CASE("dataset round trips through the directory format") {
  auto dir = std::filesystem::temp_directory_path() / "ucdr_ds_test";
  std::filesystem::remove_all(dir);
  auto ds = generate_dataset(small_config());
  save_dataset(dir.string(), ds);
  auto back = load_dataset(dir.string());
  CHECK(back.manifest.num_samples == ds.manifest.num_samples);
  CHECK(back.manifest.class_names == ds.manifest.class_names);
  CHECK(back.manifest.generator.seed == ds.manifest.generator.seed);
  CHECK(dataset_hash(back) == dataset_hash(ds));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].class_id == ds.samples[i].class_id);
    CHECK(back.samples[i].domain_id == ds.samples[i].domain_id);
  }

  // Saving twice produces identical bytes.
  auto dir2 = std::filesystem::temp_directory_path() / "ucdr_ds_test2";
  std::filesystem::remove_all(dir2);
  save_dataset(dir2.string(), ds);
  for (const char* name : {"manifest.json", "samples.bin"}) {
    std::ifstream f1(dir / name, std::ios::binary), f2(dir2 / name, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
  }
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("default grid splits as expected under ucdr") {
  GeneratorConfig cfg;  // 12 classes, 5 domains, 60 per cell
  auto ds = generate_dataset(cfg);
  auto sp = make_splits(ds.manifest, Protocol::kUcdr, 4, 1.0 / 3.0, GalleryMode::kUnseenOnly);

  CHECK(sp.seen_classes.size() == 8);
  CHECK(sp.val_classes.size() == 2);
  CHECK(sp.test_classes.size() == 2);
  CHECK(sp.seen_domains == std::vector<int>{0, 1, 2, 3});

  // Train: 8 seen classes x 4 seen domains x 60, minus the reserved tail of
  // each domain-0 cell.
  const auto train = sp.ids_with(SplitTag::kTrain);
  CHECK(train.size() == 8 * 4 * 60 - 8 * 10);
  CHECK(sp.ids_with(SplitTag::kTestQuery).size() == 2 * 60);
  CHECK(sp.ids_with(SplitTag::kTestGallery).size() == 2 * 60);
  CHECK(sp.ids_with(SplitTag::kValQuery).size() == 2 * 60);
  CHECK(sp.ids_with(SplitTag::kValGallery).size() == 2 * 60);

  for (auto id : train) {
    const auto& s = ds.samples[static_cast<std::size_t>(id)];
    CHECK(sp.class_is_seen(s.class_id));
    CHECK(sp.domain_is_seen(s.domain_id));
  }
  for (auto id : sp.ids_with(SplitTag::kTestQuery)) {
    const auto& s = ds.samples[static_cast<std::size_t>(id)];
    CHECK_FALSE(sp.class_is_seen(s.class_id));
    CHECK(s.domain_id == 4);
  }
  for (auto id : sp.ids_with(SplitTag::kTestGallery)) {
    CHECK(ds.samples[static_cast<std::size_t>(id)].domain_id == 0);
  }
}

TEST_CASE("gallery mode widens galleries without touching training") {
  GeneratorConfig cfg;
  auto ds = generate_dataset(cfg);
  auto narrow = make_splits(ds.manifest, Protocol::kUcdr, 4, 1.0 / 3.0, GalleryMode::kUnseenOnly);
  auto wide = make_splits(ds.manifest, Protocol::kUcdr, 4, 1.0 / 3.0, GalleryMode::kSeenPlusUnseen);
  CHECK(narrow.ids_with(SplitTag::kTrain) == wide.ids_with(SplitTag::kTrain));
  CHECK(narrow.ids_with(SplitTag::kTestQuery) == wide.ids_with(SplitTag::kTestQuery));
  CHECK(wide.ids_with(SplitTag::kTestGallery).size() > narrow.ids_with(SplitTag::kTestGallery).size());
  for (auto id : wide.ids_with(SplitTag::kTestGallery)) {
    CHECK(ds.samples[static_cast<std::size_t>(id)].domain_id == 0);
  }
}

TEST_CASE("uccdr queries come from a seen domain") {
  GeneratorConfig cfg;
  auto ds = generate_dataset(cfg);
  auto sp = make_splits(ds.manifest, Protocol::kUcCdr, std::nullopt, 1.0 / 3.0, GalleryMode::kUnseenOnly);
  CHECK(sp.holdout_domain == 4);
  CHECK(sp.seen_domains.size() == 5);
  for (auto id : sp.ids_with(SplitTag::kTestQuery)) {
    const auto& s = ds.samples[static_cast<std::size_t>(id)];
    CHECK(s.domain_id == 4);
    CHECK_FALSE(sp.class_is_seen(s.class_id));
  }
  // Seen classes in the query domain remain trainable.
  std::set<int> train_domains;
  for (auto id : sp.ids_with(SplitTag::kTrain)) {
    train_domains.insert(ds.samples[static_cast<std::size_t>(id)].domain_id);
  }
  CHECK(train_domains.count(4) == 1);
}

TEST_CASE("udcdr holds out a domain with seen classes") {
  GeneratorConfig cfg;
  auto ds = generate_dataset(cfg);
  auto sp = make_splits(ds.manifest, Protocol::kUdCdr, 3, 0.0, GalleryMode::kUnseenOnly);
  CHECK(sp.seen_classes.size() == 12);
  CHECK(sp.val_classes.empty());
  for (auto id : sp.ids_with(SplitTag::kTestQuery)) {
    const auto& s = ds.samples[static_cast<std::size_t>(id)];
    CHECK(s.domain_id == 3);
    CHECK(sp.class_is_seen(s.class_id));
  }
  for (auto id : sp.ids_with(SplitTag::kTrain)) {
    CHECK(ds.samples[static_cast<std::size_t>(id)].domain_id != 3);
  }
  CHECK_FALSE(sp.ids_with(SplitTag::kValQuery).empty());
  CHECK_FALSE(sp.ids_with(SplitTag::kTestGallery).empty());

  CHECK_THROWS_AS(make_splits(ds.manifest, Protocol::kUdCdr, 3, 0.25, GalleryMode::kUnseenOnly),
                  ProtocolError);
}

TEST_CASE("split constraint violations are protocol errors") {
  GeneratorConfig cfg;
  auto ds = generate_dataset(cfg);
  CHECK_THROWS_AS(make_splits(ds.manifest, Protocol::kUcdr, std::nullopt, 1.0 / 3.0, GalleryMode::kUnseenOnly),
                  ProtocolError);
  CHECK_THROWS_AS(make_splits(ds.manifest, Protocol::kUcdr, 0, 1.0 / 3.0, GalleryMode::kUnseenOnly),
                  ProtocolError);
  CHECK_THROWS_AS(make_splits(ds.manifest, Protocol::kUcdr, 5, 1.0 / 3.0, GalleryMode::kUnseenOnly),
                  ProtocolError);
  CHECK_THROWS_AS(make_splits(ds.manifest, Protocol::kUcdr, 4, 0.05, GalleryMode::kUnseenOnly),
                  ProtocolError);
  CHECK_THROWS_AS(make_splits(ds.manifest, Protocol::kUcdr, 4, 1.5, GalleryMode::kUnseenOnly), ConfigError);
}

TEST_CASE("each sample carries exactly one tag and splits are disjoint") {
  GeneratorConfig cfg;
  auto ds = generate_dataset(cfg);
  auto sp = make_splits(ds.manifest, Protocol::kUcdr, 4, 1.0 / 3.0, GalleryMode::kSeenPlusUnseen);
  std::size_t tagged = 0;
  for (auto t : {SplitTag::kTrain, SplitTag::kValQuery, SplitTag::kValGallery, SplitTag::kTestQuery,
                 SplitTag::kTestGallery, SplitTag::kNone}) {
    tagged += sp.ids_with(t).size();
  }
  CHECK(tagged == static_cast<std::size_t>(ds.manifest.num_samples));
}

TEST_CASE("splits round trip through json") {
  GeneratorConfig cfg;
  auto ds = generate_dataset(cfg);
  auto sp = make_splits(ds.manifest, Protocol::kUcdr, 4, 1.0 / 3.0, GalleryMode::kUnseenOnly);
  auto path = std::filesystem::temp_directory_path() / "ucdr_splits_test.json";
  save_splits(path.string(), sp);
  auto back = load_splits(path.string(), ds.manifest);
  CHECK(back.protocol == sp.protocol);
  CHECK(back.holdout_domain == sp.holdout_domain);
  CHECK(back.seen_classes == sp.seen_classes);
  CHECK(back.tags == sp.tags);
  std::filesystem::remove(path);
}
