#include <cmath>
#include <optional>
#include <vector>

#include "doctest.h"
#include "ucdr/ops.hpp"
#include "ucdr/pipeline.hpp"

using namespace ucdr;

namespace {

ModelConfig tiny_model_cfg() {
  ModelConfig cfg;
  cfg.image.tokens = 3;
  cfg.image.input_dim = 6;
  cfg.image.embed_dim = 5;
  cfg.image.blocks = 1;
  cfg.image.heads = 2;
  cfg.image.ffn_hidden = 8;
  cfg.image.seed = 3;
  cfg.text.text_dim = 4;
  cfg.text.embed_dim = 5;
  cfg.text.max_tokens = 8;
  cfg.text.blocks = 1;
  cfg.text.heads = 2;
  cfg.text.ffn_hidden = 8;
  cfg.text.seed = 4;
  cfg.tmpl.text_dim = 4;
  cfg.tmpl.context_tokens = 2;
  cfg.tmpl.num_classes = 10;
  cfg.tmpl.num_domains = 4;
  cfg.tmpl.seed = 5;
  cfg.bank.prompt_dim = 3;
  cfg.bank.input_dim = 6;
  cfg.bank.seed = 6;
  cfg.tpg.input_dim = 6;
  cfg.tpg.feature_dim = 4;
  cfg.tpg.hidden = 5;
  cfg.tpg.key_dim = 3;
  cfg.tpg.prompt_dim = 3;
  cfg.tpg.seed = 7;
  return cfg;
}

Model<double> tiny_model() { return Model<double>::make(tiny_model_cfg(), {1, 4, 7}, {0, 2}); }

}  // namespace

TEST_CASE("model config cross-field validation") {
  auto bad = tiny_model_cfg();
  bad.bank.input_dim = 7;
  CHECK_THROWS_AS(validate_model_config(bad), ConfigError);

  bad = tiny_model_cfg();
  bad.tpg.prompt_dim = 2;
  CHECK_THROWS_AS(validate_model_config(bad), ConfigError);

  bad = tiny_model_cfg();
  bad.text.embed_dim = 6;
  CHECK_THROWS_AS(validate_model_config(bad), ConfigError);

  bad = tiny_model_cfg();
  bad.tmpl.text_dim = 5;
  CHECK_THROWS_AS(validate_model_config(bad), ConfigError);

  bad = tiny_model_cfg();
  bad.text.max_tokens = 5;  // template needs 3 + 1 + 2 rows
  CHECK_THROWS_AS(validate_model_config(bad), ConfigError);

  CHECK_THROWS_AS(Model<double>::make(tiny_model_cfg(), {}, {0}), ConfigError);
  CHECK_THROWS_AS(Model<double>::make(tiny_model_cfg(), {1}, {}), ConfigError);
}

TEST_CASE("seen vocabularies are sorted and drive row lookups") {
  auto m = Model<double>::make(tiny_model_cfg(), {7, 1, 4}, {2, 0});
  CHECK(m.seen_classes == std::vector<int>{1, 4, 7});
  CHECK(m.seen_domains == std::vector<int>{0, 2});
  CHECK(m.text_row_of(1) == 0);
  CHECK(m.text_row_of(4) == 1);
  CHECK(m.text_row_of(7) == 2);
  CHECK_THROWS_AS(m.text_row_of(5), ContractError);
  CHECK_THROWS_AS(m.text_row_of(-1), ContractError);
}

TEST_CASE("text feature matrix stacks per-class text embeddings in row order") {
  auto m = tiny_model();
  auto matrix = m.text_feature_matrix(2);
  REQUIRE(matrix.rank() == 2);
  CHECK(matrix.shape()[0] == 3);
  CHECK(matrix.shape()[1] == 5);
  const std::vector<int> classes{1, 4, 7};
  for (std::size_t r = 0; r < 3; ++r) {
    auto row = encode_text(m.text_encoder, m.semantic_template, classes[r], 2);
    double norm = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(matrix.at(r * 5 + j) == doctest::Approx(row.at(j)).epsilon(1e-12));
      norm += matrix.at(r * 5 + j) * matrix.at(r * 5 + j);
    }
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("text matrix reaches the domain context on the tape") {
  auto m = tiny_model();
  m.semantic_template.domain_context().set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> y;
  {
    TapeScope<double> scope(tape);
    y = sum_all(m.text_feature_matrix(0));
  }
  tape.backward(y);
  REQUIRE(m.semantic_template.domain_context().has_grad());
  double total = 0.0;
  for (double g : m.semantic_template.domain_context().grad()) total += std::abs(g);
  CHECK(total > 0.0);
}

TEST_CASE("phase parameter lists follow the text-side ablation") {
  auto m = tiny_model();
  CHECK(m.phase1_parameters().size() == 5);
  CHECK(m.phase2_parameters().size() == 8);

  auto cfg = tiny_model_cfg();
  cfg.use_tst = false;
  auto ablated = Model<double>::make(cfg, {1, 4}, {0});
  CHECK(ablated.phase1_parameters().size() == 4);
  CHECK(ablated.semantic_template.use_domain_context() == false);
  CHECK(ablated.semantic_template.sequence_length() == 4);

  std::int64_t n = count_parameters(m.phase1_parameters());
  // 3*3 class rows + 2*3 domain rows + 6*6 projection + 6 bias + 4*2*4 context
  CHECK(n == 9 + 6 + 36 + 6 + 32);
}

TEST_CASE("mean prompt is the projected mean of the bank rows and stays off the tape") {
  auto m = tiny_model();
  Tape<double> tape;
  Tensor<double> mp;
  {
    TapeScope<double> scope(tape);
    mp = m.mean_prompt();
  }
  CHECK(tape.step_count() == 0);
  REQUIRE(mp.rank() == 1);
  CHECK(mp.size() == 6);

  auto manual = m.bank.project(concat({mean_rows(m.bank.class_prompts()), mean_rows(m.bank.domain_prompts())}, 0));
  for (std::size_t j = 0; j < 6; ++j) CHECK(mp.at(j) == doctest::Approx(manual.at(j)).epsilon(1e-12));
}

TEST_CASE("exclusion flags mark exactly the true-label rows") {
  auto m = tiny_model();
  auto none = m.class_exclusion(std::nullopt);
  CHECK(none == std::vector<std::uint8_t>{0, 0, 0});
  auto c4 = m.class_exclusion(4);
  CHECK(c4 == std::vector<std::uint8_t>{0, 1, 0});
  auto d2 = m.domain_exclusion(2);
  CHECK(d2 == std::vector<std::uint8_t>{0, 1});
  CHECK_THROWS_AS(m.class_exclusion(99), ContractError);
  CHECK_THROWS_AS(m.domain_exclusion(1), ContractError);
}

TEST_CASE("models built from the same config agree exactly") {
  auto a = tiny_model();
  auto b = tiny_model();
  auto rng = make_rng(77, {});
  auto tokens = Tensor<double>::gaussian({3, 6}, rng, 1.0);
  auto prompt_a = a.bank.select(4, 2);
  auto prompt_b = b.bank.select(4, 2);
  auto ea = a.image_encoder.encode(tokens, &prompt_a);
  auto eb = b.image_encoder.encode(tokens, &prompt_b);
  for (std::size_t j = 0; j < 5; ++j) CHECK(ea.at(j) == eb.at(j));
}
