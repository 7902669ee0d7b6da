#include "mmpivot.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "model.hpp"
#include "run_config.hpp"
#include "similarity.hpp"
#include "synth.hpp"
#include "train.hpp"

struct mmp_model {
  mmpivot::ModelBundle bundle;
};

namespace {

using namespace mmpivot;

thread_local std::string t_last_error;

template <typename Fn>
mmp_status guard(Fn&& fn) {
  try {
    fn();
    t_last_error.clear();
    return MMP_OK;
  } catch (const Error& e) {
    t_last_error = e.what();
    return e.kind() == Error::Kind::kInvalidInput ? MMP_INVALID_INPUT : MMP_RUNTIME_ERROR;
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return MMP_RUNTIME_ERROR;
  } catch (...) {
    t_last_error = "unknown error";
    return MMP_RUNTIME_ERROR;
  }
}

char* copy_string(const std::string& text) {
  char* out = static_cast<char*>(std::malloc(text.size() + 1));
  if (!out) fail_runtime("out of memory copying ", text.size(), " bytes");
  std::memcpy(out, text.c_str(), text.size() + 1);
  return out;
}

const char* require(const char* value, const char* name) {
  if (!value) fail_invalid(name, " must not be null");
  return value;
}

unsigned thread_count(int threads) {
  if (threads < 1) fail_invalid("threads must be >= 1, got ", threads);
  return static_cast<unsigned>(threads);
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream stream(text);
  std::string token;
  while (stream >> token) tokens.push_back(token);
  return tokens;
}

int language_index(const ModelBundle& bundle, const std::string& tag) {
  for (size_t k = 0; k < bundle.languages.size(); ++k)
    if (bundle.languages[k] == tag) return static_cast<int>(k);
  fail_invalid("model has no language \"", tag, "\"");
}

const mmp_model* require_model(const mmp_model* model) {
  if (!model) fail_invalid("model must not be null");
  return model;
}

SynthSpec to_synth_spec(const mmp_synth_spec* spec) {
  if (!spec) fail_invalid("spec must not be null");
  SynthSpec out;
  out.n_images = spec->n_images;
  out.captions_per_language = spec->captions_per_language;
  out.vocab_size = spec->vocab_size;
  out.d_img = spec->d_img;
  out.seed = spec->seed;
  out.noise_scale = spec->noise_scale;
  out.n_classes = spec->n_classes;
  if (spec->id_prefix) out.id_prefix = spec->id_prefix;
  if (spec->languages) {
    out.languages.clear();
    for (size_t i = 0; i < spec->n_languages; ++i) {
      if (!spec->languages[i]) fail_invalid("languages[", i, "] must not be null");
      out.languages.emplace_back(spec->languages[i]);
    }
  }
  return out;
}

void fill_buffer(const std::vector<float>& values, float* out, size_t out_len) {
  if (!out) fail_invalid("out must not be null");
  if (out_len < values.size())
    fail_invalid("out buffer holds ", out_len, " floats, need ", values.size());
  std::memcpy(out, values.data(), values.size() * sizeof(float));
}

}  // namespace

extern "C" {

const char* mmp_last_error(void) { return t_last_error.c_str(); }

const char* mmp_version(void) { return "0.1.0"; }

void mmp_string_free(char* text) { std::free(text); }

void mmp_synth_spec_defaults(mmp_synth_spec* spec) {
  if (!spec) return;
  const SynthSpec defaults;
  spec->n_images = defaults.n_images;
  spec->captions_per_language = defaults.captions_per_language;
  spec->vocab_size = defaults.vocab_size;
  spec->d_img = defaults.d_img;
  spec->seed = defaults.seed;
  spec->noise_scale = defaults.noise_scale;
  spec->n_classes = defaults.n_classes;
  spec->id_prefix = nullptr;
  spec->languages = nullptr;
  spec->n_languages = 0;
}

mmp_status mmp_synth_generate(const mmp_synth_spec* spec, const char* captions_path,
                              const char* ids_path, const char* features_path) {
  return guard([&] {
    generate_corpus(to_synth_spec(spec), require(captions_path, "captions_path"),
                    require(ids_path, "ids_path"), require(features_path, "features_path"));
  });
}

mmp_status mmp_default_config(const char* similarity_mode, char** json_out) {
  return guard([&] {
    if (!json_out) fail_invalid("json_out must not be null");
    RunConfig config = default_run_config();
    config.embed.similarity_mode =
        parse_similarity_mode(require(similarity_mode, "similarity_mode"));
    config.embed.margin = default_margin(config.embed.similarity_mode);
    *json_out = copy_string(run_config_to_json(config).dump(2) + "\n");
  });
}

mmp_status mmp_train(const char* config_path, const char* const* overrides,
                     size_t n_overrides, const char* output_dir, int threads,
                     char** checkpoint_out) {
  return guard([&] {
    std::vector<std::string> override_list;
    for (size_t i = 0; i < n_overrides; ++i) {
      if (!overrides || !overrides[i]) fail_invalid("overrides[", i, "] must not be null");
      override_list.emplace_back(overrides[i]);
    }
    RunConfig rc = load_run_config(config_path ? config_path : "", override_list);
    if (output_dir && *output_dir) rc.output_dir = output_dir;
    if (rc.output_dir.empty()) fail_invalid("output_dir must be set");
    for (const auto& [value, name] :
         {std::pair<const std::string&, const char*>{rc.train_captions, "train_captions"},
          {rc.train_ids, "train_ids"},
          {rc.train_features, "train_features"},
          {rc.val_captions, "val_captions"},
          {rc.val_ids, "val_ids"},
          {rc.val_features, "val_features"}})
      if (value.empty()) fail_invalid("config is missing ", name);

    const unsigned n_threads = thread_count(threads);
    FeatureTable train_features = load_feature_table(rc.train_ids, rc.train_features);
    std::vector<CaptionRecord> train_records = load_captions(rc.train_captions, rc.languages);
    FeatureTable val_features = load_feature_table(rc.val_ids, rc.val_features);
    std::vector<CaptionRecord> val_records = load_captions(rc.val_captions, rc.languages);
    if (val_features.dim() != train_features.dim())
      fail_invalid("validation features have dim ", val_features.dim(),
                   ", training features have dim ", train_features.dim());
    if (rc.embed.d_img == 0) rc.embed.d_img = train_features.dim();

    std::filesystem::create_directories(rc.output_dir);
    write_run_config(rc, rc.output_dir + "/resolved_config.json");

    const int n_languages = static_cast<int>(rc.languages.size());
    TrainInputs inputs;
    for (int k = 0; k < n_languages; ++k)
      inputs.vocabs.push_back(build_vocabulary(train_records, k, 1));
    inputs.train = bind_dataset(std::move(train_records), std::move(train_features), n_languages);
    inputs.val = make_eval_split(val_records, std::move(val_features), inputs.vocabs);
    inputs.languages = rc.languages;
    inputs.policy = rc.epoch_policy;

    TrainResult result = train_model(rc.embed, inputs, rc.output_dir, n_threads);
    if (checkpoint_out) *checkpoint_out = copy_string(result.checkpoint_path);
  });
}

mmp_status mmp_model_open(const char* checkpoint_path, mmp_model** model_out) {
  return guard([&] {
    if (!model_out) fail_invalid("model_out must not be null");
    ModelBundle bundle = load_checkpoint(require(checkpoint_path, "checkpoint_path"));
    *model_out = new mmp_model{std::move(bundle)};
  });
}

void mmp_model_close(mmp_model* model) { delete model; }

mmp_status mmp_model_config(const mmp_model* model, char** json_out) {
  return guard([&] {
    require_model(model);
    if (!json_out) fail_invalid("json_out must not be null");
    *json_out = copy_string(embed_config_to_json(model->bundle.config).dump(2) + "\n");
  });
}

int64_t mmp_model_embed_dim(const mmp_model* model) {
  return model ? model->bundle.config.embed_dim : 0;
}

int64_t mmp_model_image_dim(const mmp_model* model) {
  return model ? model->bundle.config.d_img : 0;
}

size_t mmp_model_language_count(const mmp_model* model) {
  return model ? model->bundle.languages.size() : 0;
}

const char* mmp_model_language_tag(const mmp_model* model, size_t index) {
  if (!model || index >= model->bundle.languages.size()) return nullptr;
  return model->bundle.languages[index].c_str();
}

mmp_status mmp_embed_sentence(const mmp_model* model, const char* language,
                              const char* sentence, float* out, size_t out_len) {
  return guard([&] {
    require_model(model);
    const ModelBundle& bundle = model->bundle;
    const int lang = language_index(bundle, require(language, "language"));
    const std::vector<std::string> tokens = split_whitespace(require(sentence, "sentence"));
    const std::vector<int32_t> ids =
        encode_tokens(bundle.vocabs[static_cast<size_t>(lang)], tokens);
    fill_buffer(encode_sentence(bundle.params, bundle.config, lang, ids), out, out_len);
  });
}

mmp_status mmp_embed_image(const mmp_model* model, const float* feature,
                           size_t feature_len, float* out, size_t out_len) {
  return guard([&] {
    require_model(model);
    if (!feature) fail_invalid("feature must not be null");
    const ModelBundle& bundle = model->bundle;
    if (feature_len != static_cast<size_t>(bundle.config.d_img))
      fail_invalid("feature has ", feature_len, " values, model expects ",
                   bundle.config.d_img);
    std::vector<float> row(feature, feature + feature_len);
    fill_buffer(encode_image(bundle.params, bundle.config, row), out, out_len);
  });
}

mmp_status mmp_similarity(const mmp_model* model, const float* a, const float* b,
                          size_t len, double* score_out) {
  return guard([&] {
    require_model(model);
    if (!a || !b) fail_invalid("embeddings must not be null");
    if (!score_out) fail_invalid("score_out must not be null");
    if (len == 0) fail_invalid("embeddings must not be empty");
    *score_out = similarity(model->bundle.config.similarity_mode,
                            std::span<const float>(a, len), std::span<const float>(b, len));
  });
}

mmp_status mmp_eval_ranking(mmp_model* model, const char* captions_path,
                            const char* ids_path, const char* features_path,
                            int threads, char** json_out, char** table_out) {
  return guard([&] {
    require_model(model);
    const ModelBundle& bundle = model->bundle;
    const unsigned n_threads = thread_count(threads);
    std::vector<CaptionRecord> records =
        load_captions(require(captions_path, "captions_path"), bundle.languages);
    FeatureTable features = load_feature_table(require(ids_path, "ids_path"),
                                               require(features_path, "features_path"));
    if (features.dim() != bundle.config.d_img)
      fail_invalid("features have dim ", features.dim(), ", model expects ",
                   bundle.config.d_img);
    EvalSplit split = make_eval_split(records, std::move(features), bundle.vocabs);
    RankingReport report =
        rank_evaluation(bundle.params, bundle.config, bundle.languages, split, n_threads);
    if (json_out) *json_out = copy_string(ranking_report_json(report));
    if (table_out) *table_out = copy_string(ranking_report_table(report));
  });
}

mmp_status mmp_eval_sts(mmp_model* model, const char* pairs_path, const char* language,
                        int threads, char** json_out) {
  return guard([&] {
    require_model(model);
    const ModelBundle& bundle = model->bundle;
    const unsigned n_threads = thread_count(threads);
    const int lang = language_index(bundle, require(language, "language"));
    const std::vector<StsPair> pairs = load_sts_pairs(require(pairs_path, "pairs_path"));
    StsReport report = sts_evaluate(bundle, lang, pairs, n_threads);
    if (json_out) *json_out = copy_string(sts_report_json(report));
  });
}

}  // extern "C"
