#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <mmpivot.h>

#include "test_util.hpp"

namespace {

// takes ownership of a char* returned through the C API
struct Owned {
  char* text = nullptr;
  ~Owned() { mmp_string_free(text); }
  std::string str() const { return text ? text : ""; }
};

struct Model {
  mmp_model* handle = nullptr;
  ~Model() { mmp_model_close(handle); }
};

struct Corpus {
  testutil::TempDir dir;
  std::string train_captions, train_ids, train_features;
  std::string val_captions, val_ids, val_features;

  Corpus() {
    mmp_synth_spec spec;
    mmp_synth_spec_defaults(&spec);
    spec.n_images = 10;
    spec.captions_per_language = 2;
    spec.vocab_size = 4;
    spec.d_img = 6;
    spec.seed = 5;
    spec.noise_scale = 0.05;

    train_captions = dir.file("train_captions.tsv");
    train_ids = dir.file("train_ids.txt");
    train_features = dir.file("train_features.bin");
    REQUIRE(mmp_synth_generate(&spec, train_captions.c_str(), train_ids.c_str(),
                               train_features.c_str()) == MMP_OK);

    spec.id_prefix = "val";
    val_captions = dir.file("val_captions.tsv");
    val_ids = dir.file("val_ids.txt");
    val_features = dir.file("val_features.bin");
    REQUIRE(mmp_synth_generate(&spec, val_captions.c_str(), val_ids.c_str(),
                               val_features.c_str()) == MMP_OK);
  }
};

// one trained checkpoint shared by the model-handle tests
std::string trained_checkpoint(const Corpus& corpus, const std::string& out_dir) {
  const std::string config_path = out_dir + "/config.json";
  testutil::write_text(config_path, "{\n  \"train_captions\": \"" + corpus.train_captions +
                                        "\",\n  \"train_ids\": \"" + corpus.train_ids +
                                        "\",\n  \"train_features\": \"" + corpus.train_features +
                                        "\",\n  \"val_captions\": \"" + corpus.val_captions +
                                        "\",\n  \"val_ids\": \"" + corpus.val_ids +
                                        "\",\n  \"val_features\": \"" + corpus.val_features +
                                        "\"\n}\n");
  const std::vector<const char*> overrides = {"embed_dim=8", "word_dim=4", "batch_size=4",
                                              "max_epochs=2", "learning_rate=0.005"};
  Owned checkpoint;
  const mmp_status status = mmp_train(config_path.c_str(), overrides.data(), overrides.size(),
                                      out_dir.c_str(), 1, &checkpoint.text);
  INFO(mmp_last_error());
  REQUIRE(status == MMP_OK);
  return checkpoint.str();
}

}  // namespace

TEST_CASE("the library reports a version and frees nulls quietly") {
  CHECK(std::string(mmp_version()) == "0.1.0");
  mmp_string_free(nullptr);
  mmp_model_close(nullptr);
}

TEST_CASE("default configs follow the similarity mode") {
  Owned sym;
  REQUIRE(mmp_default_config("symmetric", &sym.text) == MMP_OK);
  CHECK(std::string(mmp_last_error()).empty());
  const auto sym_json = nlohmann::json::parse(sym.str());
  CHECK(sym_json.at("margin").get<double>() == 0.2);
  CHECK(sym_json.at("embed_dim").get<int>() == 1024);
  CHECK(sym_json.at("word_dim").get<int>() == 300);
  CHECK(sym_json.at("learning_rate").get<double>() == 0.001);
  CHECK(sym_json.at("batch_size").get<int>() == 64);

  Owned asym;
  REQUIRE(mmp_default_config("asymmetric", &asym.text) == MMP_OK);
  CHECK(nlohmann::json::parse(asym.str()).at("margin").get<double>() == 0.05);

  Owned bad;
  CHECK(mmp_default_config("euclidean", &bad.text) == MMP_INVALID_INPUT);
  CHECK(std::string(mmp_last_error()).find("euclidean") != std::string::npos);
  CHECK(mmp_default_config(nullptr, &bad.text) == MMP_INVALID_INPUT);
  CHECK(mmp_default_config("symmetric", nullptr) == MMP_INVALID_INPUT);
}

TEST_CASE("synthetic corpora validate their spec through the C surface") {
  testutil::TempDir dir;
  mmp_synth_spec spec;
  mmp_synth_spec_defaults(&spec);
  CHECK(spec.n_images == 32);
  CHECK(spec.vocab_size == 4);

  spec.n_images = 0;
  CHECK(mmp_synth_generate(&spec, dir.file("c.tsv").c_str(), dir.file("i.txt").c_str(),
                           dir.file("f.bin").c_str()) == MMP_INVALID_INPUT);
  CHECK(!std::string(mmp_last_error()).empty());

  mmp_synth_spec_defaults(&spec);
  spec.n_images = 4;
  spec.captions_per_language = 1;
  spec.d_img = 3;
  const char* languages[] = {"aa", "bb", "cc"};
  spec.languages = languages;
  spec.n_languages = 3;
  REQUIRE(mmp_synth_generate(&spec, dir.file("c.tsv").c_str(), dir.file("i.txt").c_str(),
                             dir.file("f.bin").c_str()) == MMP_OK);
  const std::string captions = testutil::read_text(dir.file("c.tsv"));
  CHECK(captions.find("\taa\t") != std::string::npos);
  CHECK(captions.find("\tcc\t") != std::string::npos);

  CHECK(mmp_synth_generate(nullptr, dir.file("c.tsv").c_str(), dir.file("i.txt").c_str(),
                           dir.file("f.bin").c_str()) == MMP_INVALID_INPUT);
  CHECK(mmp_synth_generate(&spec, nullptr, dir.file("i.txt").c_str(),
                           dir.file("f.bin").c_str()) == MMP_INVALID_INPUT);
}

TEST_CASE("training through the C API produces a working model handle") {
  const Corpus corpus;
  testutil::TempDir out;
  const std::string checkpoint = trained_checkpoint(corpus, out.path().string());

  CHECK(checkpoint == out.file("checkpoint_best.mmck"));
  CHECK(std::filesystem::exists(checkpoint));
  CHECK(std::filesystem::exists(out.file("resolved_config.json")));
  CHECK(std::filesystem::exists(out.file("train_log.jsonl")));

  // the resolved snapshot records the overrides
  const auto resolved = nlohmann::json::parse(testutil::read_text(out.file("resolved_config.json")));
  CHECK(resolved.at("embed_dim").get<int>() == 8);
  CHECK(resolved.at("batch_size").get<int>() == 4);
  CHECK(resolved.at("d_img").get<int>() == 6);  // inferred from the features

  Model model;
  REQUIRE(mmp_model_open(checkpoint.c_str(), &model.handle) == MMP_OK);
  CHECK(mmp_model_embed_dim(model.handle) == 8);
  CHECK(mmp_model_image_dim(model.handle) == 6);
  CHECK(mmp_model_language_count(model.handle) == 2);
  CHECK(std::string(mmp_model_language_tag(model.handle, 0)) == "en");
  CHECK(std::string(mmp_model_language_tag(model.handle, 1)) == "de");
  CHECK(mmp_model_language_tag(model.handle, 2) == nullptr);
  CHECK(mmp_model_embed_dim(nullptr) == 0);
  CHECK(mmp_model_language_count(nullptr) == 0);

  Owned config;
  REQUIRE(mmp_model_config(model.handle, &config.text) == MMP_OK);
  CHECK(nlohmann::json::parse(config.str()).at("embed_dim").get<int>() == 8);

  SUBCASE("sentence and image embeddings round through the C types") {
    std::vector<float> sentence(8), image(8);
    REQUIRE(mmp_embed_sentence(model.handle, "en", "en_0 en_1", sentence.data(),
                               sentence.size()) == MMP_OK);
    double norm = 0;
    for (const float v : sentence) norm += double(v) * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));  // symmetric mode normalizes

    std::vector<float> again(8);
    REQUIRE(mmp_embed_sentence(model.handle, "en", "en_0 en_1", again.data(), again.size()) ==
            MMP_OK);
    CHECK(again == sentence);

    const std::vector<float> feature = {0.1f, -0.2f, 0.3f, 0.0f, 0.5f, -0.1f};
    REQUIRE(mmp_embed_image(model.handle, feature.data(), feature.size(), image.data(),
                            image.size()) == MMP_OK);

    double score = 0;
    REQUIRE(mmp_similarity(model.handle, sentence.data(), image.data(), 8, &score) == MMP_OK);
    CHECK(score >= -1.0 - 1e-9);
    CHECK(score <= 1.0 + 1e-9);
    REQUIRE(mmp_similarity(model.handle, sentence.data(), sentence.data(), 8, &score) == MMP_OK);
    CHECK(score == doctest::Approx(1.0).epsilon(1e-6));

    CHECK(mmp_embed_sentence(model.handle, "fr", "en_0", sentence.data(), 8) ==
          MMP_INVALID_INPUT);
    CHECK(std::string(mmp_last_error()).find("fr") != std::string::npos);
    CHECK(mmp_embed_sentence(model.handle, "en", "", sentence.data(), 8) == MMP_INVALID_INPUT);
    CHECK(mmp_embed_sentence(model.handle, "en", "en_0", sentence.data(), 4) ==
          MMP_INVALID_INPUT);
    CHECK(mmp_embed_image(model.handle, feature.data(), 3, image.data(), 8) ==
          MMP_INVALID_INPUT);
    CHECK(mmp_similarity(model.handle, sentence.data(), nullptr, 8, &score) ==
          MMP_INVALID_INPUT);
    CHECK(mmp_similarity(nullptr, sentence.data(), image.data(), 8, &score) ==
          MMP_INVALID_INPUT);
  }

  SUBCASE("ranking evaluation returns both renderings, deterministically") {
    Owned json1, table1, json2;
    REQUIRE(mmp_eval_ranking(model.handle, corpus.val_captions.c_str(),
                             corpus.val_ids.c_str(), corpus.val_features.c_str(), 1,
                             &json1.text, &table1.text) == MMP_OK);
    const auto parsed = nlohmann::json::parse(json1.str());
    CHECK(parsed.contains("en"));
    CHECK(parsed.contains("de"));
    CHECK(parsed.at("en").at("text_to_image").at("r1").get<double>() >= 0.0);
    CHECK(table1.str().find("text->image") != std::string::npos);

    REQUIRE(mmp_eval_ranking(model.handle, corpus.val_captions.c_str(),
                             corpus.val_ids.c_str(), corpus.val_features.c_str(), 2,
                             &json2.text, nullptr) == MMP_OK);
    CHECK(json1.str() == json2.str());

    Owned json3;
    CHECK(mmp_eval_ranking(model.handle, corpus.dir.file("nope.tsv").c_str(),
                           corpus.val_ids.c_str(), corpus.val_features.c_str(), 1, &json3.text,
                           nullptr) == MMP_INVALID_INPUT);
    CHECK(std::string(mmp_last_error()).find("nope.tsv") != std::string::npos);
  }

  SUBCASE("sts scoring reads pairs files and flags degenerate gold") {
    const std::string pairs_path = corpus.dir.file("pairs.tsv");
    testutil::write_text(pairs_path,
                         "en_0 en_1\ten_0 en_1\t5.0\n"
                         "en_0\ten_1 en_1\t1.5\n"
                         "en_2 en_0\ten_2\t3.0\n");
    Owned json;
    const mmp_status status =
        mmp_eval_sts(model.handle, pairs_path.c_str(), "en", 1, &json.text);
    INFO(mmp_last_error());
    REQUIRE(status == MMP_OK);
    const auto parsed = nlohmann::json::parse(json.str());
    CHECK(parsed.at("n_pairs").get<int>() == 3);
    CHECK(std::abs(parsed.at("pearson_r").get<double>()) <= 1.0);

    const std::string constant_path = corpus.dir.file("constant.tsv");
    testutil::write_text(constant_path,
                         "en_0\ten_0\t5.0\n"
                         "en_0\ten_0\t1.0\n");
    Owned unused;
    CHECK(mmp_eval_sts(model.handle, constant_path.c_str(), "en", 1, &unused.text) ==
          MMP_RUNTIME_ERROR);
    CHECK(std::string(mmp_last_error()).find("undefined correlation") != std::string::npos);

    Owned missing;
    CHECK(mmp_eval_sts(model.handle, corpus.dir.file("absent.tsv").c_str(), "en", 1,
                       &missing.text) == MMP_INVALID_INPUT);
    CHECK(mmp_eval_sts(model.handle, pairs_path.c_str(), "xx", 1, &missing.text) ==
          MMP_INVALID_INPUT);
  }
}

TEST_CASE("model opening fails cleanly on bad paths and bad bytes") {
  testutil::TempDir dir;
  mmp_model* model = nullptr;
  CHECK(mmp_model_open(dir.file("absent.mmck").c_str(), &model) == MMP_INVALID_INPUT);
  CHECK(model == nullptr);
  CHECK(!std::string(mmp_last_error()).empty());

  testutil::write_text(dir.file("junk.mmck"), "ZZZZ not a checkpoint");
  CHECK(mmp_model_open(dir.file("junk.mmck").c_str(), &model) != MMP_OK);
  CHECK(model == nullptr);

  CHECK(mmp_model_open(nullptr, &model) == MMP_INVALID_INPUT);
  CHECK(mmp_model_open(dir.file("absent.mmck").c_str(), nullptr) == MMP_INVALID_INPUT);
}

TEST_CASE("training surfaces config mistakes as input errors") {
  const Corpus corpus;
  testutil::TempDir out;

  // missing feature file: the error names the path
  const std::string config_path = out.file("bad.json");
  testutil::write_text(config_path, "{\n  \"train_captions\": \"" + corpus.train_captions +
                                        "\",\n  \"train_ids\": \"" + corpus.train_ids +
                                        "\",\n  \"train_features\": \"" + out.file("gone.bin") +
                                        "\",\n  \"val_captions\": \"" + corpus.val_captions +
                                        "\",\n  \"val_ids\": \"" + corpus.val_ids +
                                        "\",\n  \"val_features\": \"" + corpus.val_features +
                                        "\"\n}\n");
  Owned checkpoint;
  CHECK(mmp_train(config_path.c_str(), nullptr, 0, out.file("run").c_str(), 1,
                  &checkpoint.text) == MMP_INVALID_INPUT);
  CHECK(std::string(mmp_last_error()).find("gone.bin") != std::string::npos);

  // paths missing from the config entirely
  const std::string empty_config = out.file("empty.json");
  testutil::write_text(empty_config, "{}\n");
  CHECK(mmp_train(empty_config.c_str(), nullptr, 0, out.file("run").c_str(), 1,
                  &checkpoint.text) == MMP_INVALID_INPUT);
  CHECK(std::string(mmp_last_error()).find("train_captions") != std::string::npos);

  // an unknown override key
  const char* bad_override[] = {"embedd_im=8"};
  CHECK(mmp_train(config_path.c_str(), bad_override, 1, out.file("run").c_str(), 1,
                  &checkpoint.text) == MMP_INVALID_INPUT);

  // threads must be positive
  CHECK(mmp_train(config_path.c_str(), nullptr, 0, out.file("run").c_str(), 0,
                  &checkpoint.text) == MMP_INVALID_INPUT);
}
