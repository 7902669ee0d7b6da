#pragma once

#include <json.hpp>

#include "model.hpp"

namespace mmpivot {

using OrderedJson = nlohmann::ordered_json;

// Field order is fixed so serialized configs and checkpoint manifests are
// byte-reproducible.
inline OrderedJson embed_config_to_json(const EmbedConfig& c) {
  OrderedJson j;
  j["embed_dim"] = c.embed_dim;
  j["word_dim"] = c.word_dim;
  j["margin"] = c.margin;
  j["similarity_mode"] = similarity_mode_name(c.similarity_mode);
  j["model_kind"] = model_kind_name(c.model_kind);
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["grad_clip"] = c.grad_clip;
  j["seed"] = c.seed;
  j["d_img"] = c.d_img;
  return j;
}

template <typename Json>
EmbedConfig embed_config_from_json(const Json& j) {
  EmbedConfig c;
  try {
    c.embed_dim = j.at("embed_dim").template get<int64_t>();
    c.word_dim = j.at("word_dim").template get<int64_t>();
    c.margin = j.at("margin").template get<double>();
    c.similarity_mode =
        parse_similarity_mode(j.at("similarity_mode").template get<std::string>());
    c.model_kind = parse_model_kind(j.at("model_kind").template get<std::string>());
    c.learning_rate = j.at("learning_rate").template get<double>();
    c.batch_size = j.at("batch_size").template get<int64_t>();
    c.max_epochs = j.at("max_epochs").template get<int64_t>();
    c.patience = j.at("patience").template get<int64_t>();
    c.grad_clip = j.at("grad_clip").template get<double>();
    c.seed = j.at("seed").template get<uint64_t>();
    c.d_img = j.at("d_img").template get<int64_t>();
  } catch (const typename Json::exception& e) {
    fail_invalid("bad config: ", e.what());
  }
  return c;
}

}  // namespace mmpivot
