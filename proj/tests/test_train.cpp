#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "synth.hpp"
#include "test_util.hpp"
#include "train.hpp"

using namespace mmpivot;

namespace {

EmbedConfig small_config() {
  EmbedConfig config;
  config.embed_dim = 2;
  config.word_dim = 2;
  config.d_img = 2;
  return config;
}

ModelParams small_params(uint64_t seed = 3) {
  Rng rng(seed);
  return init_params(small_config(), {3}, rng);
}

// gradients keyed like the parameters, every entry drawn from one stream
Bindings gradients_like(const ModelParams& params, Rng& rng, double lo, double hi) {
  Bindings grads;
  params.for_each([&](const std::string& name, const Tensor& t) {
    Tensor g(t.shape());
    for (int64_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(rng.uniform(lo, hi));
    grads.emplace(name, std::move(g));
  });
  return grads;
}

double global_norm_excluding_pad(const ModelParams& params, const Bindings& grads) {
  double sq = 0;
  params.for_each([&](const std::string& name, const Tensor& t) {
    const Tensor& g = grads.at(name);
    const bool embedding = name.ends_with(".embedding");
    for (int64_t i = 0; i < g.size(); ++i) {
      if (embedding && i < t.cols()) continue;
      sq += double(g[i]) * double(g[i]);
    }
  });
  return std::sqrt(sq);
}

struct CorpusFixture {
  testutil::TempDir dir;
  std::vector<CaptionRecord> records;
  FeatureTable features;
  std::vector<Vocabulary> vocabs;

  CorpusFixture() {
    SynthSpec spec;
    spec.n_images = 10;
    spec.captions_per_language = 2;
    spec.vocab_size = 4;
    spec.d_img = 6;
    spec.seed = 5;
    spec.noise_scale = 0.05;
    generate_corpus(spec, dir.file("captions.tsv"), dir.file("ids.txt"),
                    dir.file("features.bin"));
    records = load_captions(dir.file("captions.tsv"), {"en", "de"});
    features = load_feature_table(dir.file("ids.txt"), dir.file("features.bin"));
    vocabs = {build_vocabulary(records, 0, 1), build_vocabulary(records, 1, 1)};
  }

  TrainInputs inputs() const {
    TrainInputs in;
    in.train = bind_dataset(records, features, 2);
    in.val = make_eval_split(records, features, vocabs);
    in.vocabs = vocabs;
    in.languages = {"en", "de"};
    return in;
  }

  EmbedConfig config() const {
    EmbedConfig c;
    c.embed_dim = 8;
    c.word_dim = 4;
    c.d_img = 6;
    c.batch_size = 4;
    c.max_epochs = 3;
    c.patience = 5;
    c.learning_rate = 0.005;
    return c;
  }
};

}  // namespace

TEST_CASE("one adam step matches the bias-corrected formula") {
  const EmbedConfig config = small_config();
  ModelParams params = small_params();
  const ModelParams before = params;
  AdamState state = make_adam_state(params);

  Rng rng(11);
  const Bindings grads = gradients_like(params, rng, -0.01, 0.01);
  REQUIRE(global_norm_excluding_pad(params, grads) < config.grad_clip);  // no rescale

  adam_step(params, grads, state, config);
  CHECK(state.step == 1);

  const double correct1 = 1.0 - std::pow(kAdamBeta1, 1.0);
  const double correct2 = 1.0 - std::pow(kAdamBeta2, 1.0);
  params.for_each([&](const std::string& name, Tensor& t) {
    const Tensor& g = grads.at(name);
    const Tensor& old = [&]() -> const Tensor& {
      if (name == "lang0.embedding") return before.languages[0].embedding;
      if (name == "image_projection") return before.image_projection;
      if (name == "lang0.gru.w_z") return before.languages[0].gru.w_z;
      if (name == "lang0.gru.w_r") return before.languages[0].gru.w_r;
      if (name == "lang0.gru.w_h") return before.languages[0].gru.w_h;
      if (name == "lang0.gru.u_z") return before.languages[0].gru.u_z;
      if (name == "lang0.gru.u_r") return before.languages[0].gru.u_r;
      if (name == "lang0.gru.u_h") return before.languages[0].gru.u_h;
      if (name == "lang0.gru.b_z") return before.languages[0].gru.b_z;
      if (name == "lang0.gru.b_r") return before.languages[0].gru.b_r;
      REQUIRE(name == "lang0.gru.b_h");
      return before.languages[0].gru.b_h;
    }();
    const bool embedding = name.ends_with(".embedding");
    for (int64_t i = 0; i < t.size(); ++i) {
      const double gi = embedding && i < t.cols() ? 0.0 : double(g[i]);
      const double mi = kAdamBeta1 * 0.0 + (1.0 - kAdamBeta1) * gi;
      const double vi = kAdamBeta2 * 0.0 + (1.0 - kAdamBeta2) * gi * gi;
      const double step = config.learning_rate * (mi / correct1) /
                          (std::sqrt(vi / correct2) + kAdamEpsilon);
      float expected = static_cast<float>(double(old[i]) - step);
      if (embedding && i < t.cols()) expected = 0.0f;
      CHECK(t[i] == expected);
    }
  });
}

TEST_CASE("clipping is exactly invariant to power-of-two gradient scales") {
  const EmbedConfig config = small_config();
  ModelParams a = small_params();
  ModelParams b = a;
  AdamState state_a = make_adam_state(a);
  AdamState state_b = make_adam_state(b);

  Rng rng(12);
  const Bindings grads = gradients_like(a, rng, -1.0, 1.0);
  REQUIRE(global_norm_excluding_pad(a, grads) > config.grad_clip);  // clip engages

  Bindings scaled;
  for (const auto& [name, g] : grads) {
    Tensor four(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) four[i] = 4.0f * g[i];
    scaled.emplace(name, std::move(four));
  }

  adam_step(a, grads, state_a, config);
  adam_step(b, scaled, state_b, config);

  std::map<std::string, const Tensor*> from_b;
  b.for_each([&](const std::string& name, const Tensor& t) { from_b.emplace(name, &t); });
  a.for_each([&](const std::string& name, const Tensor& t) {
    REQUIRE(from_b.count(name) == 1);
    CHECK(t == *from_b.at(name));
  });
}

TEST_CASE("the padding row neither moves nor influences the clip norm") {
  const EmbedConfig config = small_config();
  ModelParams a = small_params();
  ModelParams b = a;
  AdamState state_a = make_adam_state(a);
  AdamState state_b = make_adam_state(b);

  Rng rng(13);
  const Bindings grads = gradients_like(a, rng, -1.0, 1.0);
  Bindings noisy_pad = grads;
  {
    Tensor& emb = noisy_pad.at("lang0.embedding");
    for (int64_t c = 0; c < emb.cols(); ++c) emb(kPadId, c) = 1.0e6f;  // would dominate the norm
  }

  adam_step(a, grads, state_a, config);
  adam_step(b, noisy_pad, state_b, config);
  CHECK(a.languages[0].embedding == b.languages[0].embedding);
  CHECK(a.image_projection == b.image_projection);
  for (int64_t c = 0; c < a.languages[0].embedding.cols(); ++c)
    CHECK(a.languages[0].embedding(kPadId, c) == 0.0f);

  // even a NaN there counts as zero: the row is not a parameter
  Bindings nan_pad = grads;
  nan_pad.at("lang0.embedding")(kPadId, 0) = std::numeric_limits<float>::quiet_NaN();
  ModelParams c = small_params();
  AdamState state_c = make_adam_state(c);
  CHECK_NOTHROW(adam_step(c, nan_pad, state_c, config));
}

TEST_CASE("adam rejects broken gradients") {
  const EmbedConfig config = small_config();
  ModelParams params = small_params();
  AdamState state = make_adam_state(params);
  Rng rng(14);

  Bindings missing = gradients_like(params, rng, -0.1, 0.1);
  missing.erase("image_projection");
  CHECK_THROWS_WITH_AS(adam_step(params, missing, state, config),
                       doctest::Contains("missing gradient"), Error);

  Bindings wrong = gradients_like(params, rng, -0.1, 0.1);
  wrong.at("image_projection") = Tensor(Shape{1, 1});
  CHECK_THROWS_AS(adam_step(params, wrong, state, config), Error);

  Bindings infinite = gradients_like(params, rng, -0.1, 0.1);
  infinite.at("image_projection")(0, 0) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_WITH_AS(adam_step(params, infinite, state, config),
                       doctest::Contains("non-finite gradient"), Error);
}

TEST_CASE("the early-stop metric sums recalls over languages and directions") {
  RankingReport report;
  report.languages = {"en"};
  report.text_to_image = {{10.0, 20.0, 30.0, 4.0}};
  report.image_to_text = {{20.0, 30.0, 40.0, 2.0}};
  CHECK(early_stop_metric(report) == 150.0);

  report.languages.push_back("de");
  report.text_to_image.push_back({5.0, 5.0, 5.0, 9.0});
  report.image_to_text.push_back({5.0, 5.0, 5.0, 9.0});
  CHECK(early_stop_metric(report) == 180.0);  // median ranks never count
}

TEST_CASE("the training log serializes one json object per epoch") {
  TrainLog log;
  log.epochs.push_back({1, 0.5, 120.0, 0.25});
  log.epochs.push_back({2, 0.25, 150.0, 0.5});
  CHECK(train_log_jsonl(log) ==
        "{\"epoch\":1,\"mean_loss\":0.5,\"val_metric\":120.0,\"wall_seconds\":0.25}\n"
        "{\"epoch\":2,\"mean_loss\":0.25,\"val_metric\":150.0,\"wall_seconds\":0.5}\n");
  CHECK(train_log_jsonl(TrainLog{}).empty());
}

TEST_CASE("training runs, logs, and keeps the best checkpoint") {
  const CorpusFixture fix;
  const EmbedConfig config = fix.config();
  testutil::TempDir out;

  const TrainResult result = train_model(config, fix.inputs(), out.file("run"), 1);
  CHECK(result.checkpoint_path == out.file("run") + "/checkpoint_best.mmck");
  REQUIRE(std::filesystem::exists(result.checkpoint_path));
  REQUIRE(!result.log.epochs.empty());
  CHECK(result.log.epochs.size() <= 3);

  double best = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < result.log.epochs.size(); ++i) {
    const EpochRecord& rec = result.log.epochs[i];
    CHECK(rec.epoch == static_cast<int64_t>(i + 1));
    CHECK(std::isfinite(rec.mean_loss));
    CHECK(rec.mean_loss >= 0.0);
    CHECK(rec.wall_seconds >= 0.0);
    best = std::max(best, rec.val_metric);
  }
  CHECK(result.best_metric == best);
  REQUIRE(result.best_epoch >= 1);
  CHECK(result.log.epochs[static_cast<size_t>(result.best_epoch - 1)].val_metric == best);

  const ModelBundle loaded = load_checkpoint(result.checkpoint_path);
  CHECK(loaded.languages == std::vector<std::string>{"en", "de"});
  CHECK(loaded.config.embed_dim == config.embed_dim);
  CHECK(loaded.config.d_img == 6);

  CHECK(testutil::read_text(out.file("run") + "/train_log.jsonl") ==
        train_log_jsonl(result.log));
}

TEST_CASE("identical runs produce byte-identical checkpoints") {
  const CorpusFixture fix;
  const EmbedConfig config = fix.config();
  testutil::TempDir out;

  const TrainResult first = train_model(config, fix.inputs(), out.file("a"), 1);
  const TrainResult second = train_model(config, fix.inputs(), out.file("b"), 1);
  CHECK(testutil::read_text(first.checkpoint_path) == testutil::read_text(second.checkpoint_path));
  REQUIRE(first.log.epochs.size() == second.log.epochs.size());
  for (size_t i = 0; i < first.log.epochs.size(); ++i) {
    CHECK(first.log.epochs[i].mean_loss == second.log.epochs[i].mean_loss);
    CHECK(first.log.epochs[i].val_metric == second.log.epochs[i].val_metric);
  }
}

TEST_CASE("zero max_epochs yields the untrained checkpoint") {
  const CorpusFixture fix;
  EmbedConfig config = fix.config();
  config.max_epochs = 0;
  testutil::TempDir out;

  const TrainResult result = train_model(config, fix.inputs(), out.file("zero"), 1);
  CHECK(result.log.epochs.empty());
  CHECK(result.best_epoch == 0);
  REQUIRE(std::filesystem::exists(result.checkpoint_path));
  CHECK_NOTHROW(load_checkpoint(result.checkpoint_path));
  CHECK(testutil::read_text(out.file("zero") + "/train_log.jsonl").empty());

  const TrainResult again = train_model(config, fix.inputs(), out.file("zero2"), 1);
  CHECK(testutil::read_text(result.checkpoint_path) == testutil::read_text(again.checkpoint_path));
}

TEST_CASE("training validates its inputs up front") {
  const CorpusFixture fix;
  testutil::TempDir out;

  EmbedConfig big = fix.config();
  big.batch_size = 100;
  CHECK_THROWS_WITH_AS(train_model(big, fix.inputs(), out.file("x"), 1),
                       doctest::Contains("captions in every language"), Error);

  EmbedConfig narrow = fix.config();
  narrow.d_img = 5;
  CHECK_THROWS_AS(train_model(narrow, fix.inputs(), out.file("x"), 1), Error);

  EmbedConfig parallel = fix.config();
  parallel.model_kind = ModelKind::kParallel;
  std::vector<CaptionRecord> en_records;
  for (const CaptionRecord& r : fix.records)
    if (r.language == 0) en_records.push_back(r);
  TrainInputs mono;
  mono.train = bind_dataset(en_records, fix.features, 1);
  mono.val = make_eval_split(en_records, fix.features, {fix.vocabs[0]});
  mono.vocabs = {fix.vocabs[0]};
  mono.languages = {"en"};
  CHECK_THROWS_WITH_AS(train_model(parallel, mono, out.file("x"), 1),
                       doctest::Contains("exactly 2 languages"), Error);
}
