#pragma once

#include "json.hpp"
#include "ucdr/pipeline.hpp"

namespace ucdr {

inline nlohmann::json to_json(const ImageEncoderConfig& c) {
  return nlohmann::json{{"tokens", c.tokens},   {"input_dim", c.input_dim}, {"embed_dim", c.embed_dim},
                        {"blocks", c.blocks},   {"heads", c.heads},         {"ffn_hidden", c.ffn_hidden},
                        {"seed", c.seed}};
}

inline ImageEncoderConfig image_encoder_config_from_json(const nlohmann::json& j) {
  ImageEncoderConfig c;
  c.tokens = j.at("tokens").get<int>();
  c.input_dim = j.at("input_dim").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const TextEncoderConfig& c) {
  return nlohmann::json{{"text_dim", c.text_dim}, {"embed_dim", c.embed_dim},   {"max_tokens", c.max_tokens},
                        {"blocks", c.blocks},     {"heads", c.heads},           {"ffn_hidden", c.ffn_hidden},
                        {"seed", c.seed}};
}

inline TextEncoderConfig text_encoder_config_from_json(const nlohmann::json& j) {
  TextEncoderConfig c;
  c.text_dim = j.at("text_dim").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.max_tokens = j.at("max_tokens").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const SemanticTemplateConfig& c) {
  return nlohmann::json{{"text_dim", c.text_dim},
                        {"context_tokens", c.context_tokens},
                        {"num_classes", c.num_classes},
                        {"num_domains", c.num_domains},
                        {"seed", c.seed}};
}

inline SemanticTemplateConfig semantic_template_config_from_json(const nlohmann::json& j) {
  SemanticTemplateConfig c;
  c.text_dim = j.at("text_dim").get<int>();
  c.context_tokens = j.at("context_tokens").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.num_domains = j.at("num_domains").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const PromptBankConfig& c) {
  return nlohmann::json{{"prompt_dim", c.prompt_dim},
                        {"input_dim", c.input_dim},
                        {"momentum_rate", c.momentum_rate},
                        {"seed", c.seed}};
}

inline PromptBankConfig prompt_bank_config_from_json(const nlohmann::json& j) {
  PromptBankConfig c;
  c.prompt_dim = j.at("prompt_dim").get<int>();
  c.input_dim = j.at("input_dim").get<int>();
  c.momentum_rate = j.at("momentum_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const TpgConfig& c) {
  return nlohmann::json{{"input_dim", c.input_dim},   {"feature_dim", c.feature_dim},
                        {"hidden", c.hidden},         {"key_dim", c.key_dim},
                        {"prompt_dim", c.prompt_dim}, {"crossed_pairing", c.crossed_pairing},
                        {"seed", c.seed}};
}

inline TpgConfig tpg_config_from_json(const nlohmann::json& j) {
  TpgConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.key_dim = j.at("key_dim").get<int>();
  c.prompt_dim = j.at("prompt_dim").get<int>();
  c.crossed_pairing = j.at("crossed_pairing").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"image", to_json(c.image)}, {"text", to_json(c.text)}, {"template", to_json(c.tmpl)},
                        {"bank", to_json(c.bank)},   {"tpg", to_json(c.tpg)},   {"use_tst", c.use_tst}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image = image_encoder_config_from_json(j.at("image"));
  c.text = text_encoder_config_from_json(j.at("text"));
  c.tmpl = semantic_template_config_from_json(j.at("template"));
  c.bank = prompt_bank_config_from_json(j.at("bank"));
  c.tpg = tpg_config_from_json(j.at("tpg"));
  c.use_tst = j.at("use_tst").get<bool>();
  return c;
}

}  // namespace ucdr
