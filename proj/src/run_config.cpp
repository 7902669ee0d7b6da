#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "error.hpp"

namespace mmpivot {

double default_margin(SimilarityMode mode) {
  return mode == SimilarityMode::kSymmetric ? 0.2 : 0.05;
}

RunConfig default_run_config() { return RunConfig{}; }

OrderedJson run_config_to_json(const RunConfig& config) {
  OrderedJson j = embed_config_to_json(config.embed);
  j["languages"] = config.languages;
  j["epoch_policy"] = epoch_policy_name(config.epoch_policy);
  j["train_captions"] = config.train_captions;
  j["train_ids"] = config.train_ids;
  j["train_features"] = config.train_features;
  j["val_captions"] = config.val_captions;
  j["val_ids"] = config.val_ids;
  j["val_features"] = config.val_features;
  j["test_captions"] = config.test_captions;
  j["test_ids"] = config.test_ids;
  j["test_features"] = config.test_features;
  j["output_dir"] = config.output_dir;
  return j;
}

namespace {

std::vector<std::string> parse_languages(const OrderedJson& value) {
  std::vector<std::string> tags;
  if (value.is_array()) {
    for (const auto& item : value) {
      if (!item.is_string()) fail_invalid("languages entries must be strings");
      tags.push_back(item.get<std::string>());
    }
  } else if (value.is_string()) {
    // comma form, as produced by --set languages=en,de
    std::stringstream stream(value.get<std::string>());
    std::string tag;
    while (std::getline(stream, tag, ',')) tags.push_back(tag);
  } else {
    fail_invalid("languages must be an array of tags or a comma-separated string");
  }
  if (tags.empty()) fail_invalid("languages must name at least one language");
  std::set<std::string> seen;
  for (const std::string& tag : tags) {
    if (tag.empty()) fail_invalid("language tags must be non-empty");
    if (!seen.insert(tag).second) fail_invalid("duplicate language tag \"", tag, "\"");
  }
  return tags;
}

std::string get_string(const OrderedJson& j, const char* key) {
  const auto& value = j.at(key);
  if (!value.is_string()) fail_invalid(key, " must be a string");
  return value.get<std::string>();
}

}  // namespace

RunConfig run_config_from_json(const OrderedJson& user) {
  if (!user.is_object()) fail_invalid("config must be a JSON object");
  static const std::set<std::string> known = {
      "embed_dim",     "word_dim",     "margin",        "similarity_mode",
      "model_kind",    "learning_rate", "batch_size",   "max_epochs",
      "patience",      "grad_clip",    "seed",          "d_img",
      "languages",     "epoch_policy", "train_captions", "train_ids",
      "train_features", "val_captions", "val_ids",      "val_features",
      "test_captions", "test_ids",     "test_features", "output_dir"};
  for (const auto& [key, value] : user.items())
    if (!known.count(key)) fail_invalid("unknown config key \"", key, "\"");

  const bool margin_explicit = user.contains("margin");
  OrderedJson merged = run_config_to_json(default_run_config());
  for (const auto& [key, value] : user.items()) merged[key] = value;

  RunConfig config;
  config.embed = embed_config_from_json(merged);
  if (!margin_explicit) config.embed.margin = default_margin(config.embed.similarity_mode);
  config.languages = parse_languages(merged.at("languages"));
  try {
    config.epoch_policy = parse_epoch_policy(get_string(merged, "epoch_policy"));
    config.train_captions = get_string(merged, "train_captions");
    config.train_ids = get_string(merged, "train_ids");
    config.train_features = get_string(merged, "train_features");
    config.val_captions = get_string(merged, "val_captions");
    config.val_ids = get_string(merged, "val_ids");
    config.val_features = get_string(merged, "val_features");
    config.test_captions = get_string(merged, "test_captions");
    config.test_ids = get_string(merged, "test_ids");
    config.test_features = get_string(merged, "test_features");
    config.output_dir = get_string(merged, "output_dir");
  } catch (const OrderedJson::exception& e) {
    fail_invalid("bad config: ", e.what());
  }
  return config;
}

void apply_override(OrderedJson& user, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail_invalid("override must look like key=value, got \"", assignment, "\"");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  OrderedJson value;
  try {
    value = OrderedJson::parse(text);
  } catch (const OrderedJson::exception&) {
    value = text;  // bare words (mode names, paths) stay strings
  }
  user[key] = value;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  OrderedJson user = OrderedJson::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) fail_invalid("cannot open config ", path);
    try {
      user = OrderedJson::parse(in);
    } catch (const OrderedJson::exception& e) {
      fail_invalid("cannot parse config ", path, ": ", e.what());
    }
  }
  if (!user.is_object()) fail_invalid("config must be a JSON object: ", path);
  for (const std::string& assignment : overrides) apply_override(user, assignment);
  return run_config_from_json(user);
}

void write_run_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail_invalid("cannot write ", path);
  out << run_config_to_json(config).dump(2) << '\n';
  if (!out.flush()) fail_runtime("write failed for ", path);
}

}  // namespace mmpivot
