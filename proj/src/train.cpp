#include "train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "config_json.hpp"
#include "error.hpp"
#include "loss.hpp"

namespace mmpivot {

AdamState make_adam_state(const ModelParams& params) {
  AdamState state;
  params.for_each([&](const std::string& name, const Tensor& t) {
    state.m.emplace(name, Tensor(t.shape()));
    state.v.emplace(name, Tensor(t.shape()));
  });
  return state;
}

static_assert(kPadId == 0, "the padding row is assumed to be row 0 below");

void adam_step(ModelParams& params, const Bindings& grads, AdamState& state,
               const EmbedConfig& config) {
  struct Slot {
    std::string name;
    Tensor* param;
    const Tensor* grad;
    bool is_embedding;
  };
  std::vector<Slot> slots;
  params.for_each([&](const std::string& name, Tensor& t) {
    const auto it = grads.find(name);
    if (it == grads.end()) fail_invalid("missing gradient for '", name, "'");
    if (it->second.shape() != t.shape())
      fail_invalid("gradient for '", name, "' has shape ", shape_string(it->second.shape()),
                   ", expected ", shape_string(t.shape()));
    slots.push_back({name, &t, &it->second, name.ends_with(".embedding")});
  });

  // The padding row is not a trainable parameter: its gradient counts as
  // zero, both for the clipping norm and for the update.
  const auto effective = [](const Slot& s, int64_t i) -> double {
    if (s.is_embedding && i < s.param->cols()) return 0.0;
    return double((*s.grad)[i]);
  };

  double sq_norm = 0;
  for (const Slot& s : slots) {
    for (int64_t i = 0; i < s.grad->size(); ++i) {
      const double g = effective(s, i);
      if (!std::isfinite(g)) fail_runtime("non-finite gradient for ", s.name);
      sq_norm += g * g;
    }
  }
  const double norm = std::sqrt(sq_norm);
  const double scale = norm > config.grad_clip ? config.grad_clip / norm : 1.0;

  state.step += 1;
  const double correct1 = 1.0 - std::pow(kAdamBeta1, double(state.step));
  const double correct2 = 1.0 - std::pow(kAdamBeta2, double(state.step));
  for (Slot& s : slots) {
    Tensor& p = *s.param;
    Tensor& m = state.m.at(s.name);
    Tensor& v = state.v.at(s.name);
    for (int64_t i = 0; i < p.size(); ++i) {
      const double g = effective(s, i) * scale;
      const double mi = kAdamBeta1 * double(m[i]) + (1.0 - kAdamBeta1) * g;
      const double vi = kAdamBeta2 * double(v[i]) + (1.0 - kAdamBeta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double step = config.learning_rate * (mi / correct1) /
                          (std::sqrt(vi / correct2) + kAdamEpsilon);
      p[i] = static_cast<float>(double(p[i]) - step);
    }
    if (s.is_embedding) {
      auto pad = p.row_span(kPadId);
      std::fill(pad.begin(), pad.end(), 0.0f);
    }
  }
}

double early_stop_metric(const RankingReport& report) {
  double total = 0;
  for (size_t k = 0; k < report.languages.size(); ++k) {
    const DirectionMetrics& t2i = report.text_to_image[k];
    const DirectionMetrics& i2t = report.image_to_text[k];
    total += t2i.r1 + t2i.r5 + t2i.r10 + i2t.r1 + i2t.r5 + i2t.r10;
  }
  return total;
}

std::string train_log_jsonl(const TrainLog& log) {
  std::string out;
  for (const EpochRecord& rec : log.epochs) {
    OrderedJson j;
    j["epoch"] = rec.epoch;
    j["mean_loss"] = rec.mean_loss;
    j["val_metric"] = rec.val_metric;
    j["wall_seconds"] = rec.wall_seconds;
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

int64_t count_zero_rows(const Tensor& t) {
  int64_t zeros = 0;
  for (int64_t i = 0; i < t.rows(); ++i) {
    bool all_zero = true;
    for (const float x : t.row_span(i))
      if (x != 0.0f) {
        all_zero = false;
        break;
      }
    if (all_zero) ++zeros;
  }
  return zeros;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail_invalid("cannot write ", path);
  out << text;
  if (!out.flush()) fail_runtime("write failed for ", path);
}

}  // namespace

TrainResult train_model(const EmbedConfig& config, const TrainInputs& inputs,
                        const std::string& out_dir, unsigned threads) {
  config.validate();
  const size_t n_langs = inputs.languages.size();
  if (inputs.vocabs.size() != n_langs ||
      static_cast<size_t>(inputs.train.n_languages) != n_langs)
    fail_invalid("languages/vocabularies/dataset disagree: ", n_langs, "/",
                 inputs.vocabs.size(), "/", inputs.train.n_languages);
  if (config.model_kind == ModelKind::kParallel && n_langs != 2)
    fail_invalid("the cross-language objective needs exactly 2 languages, got ", n_langs);
  if (config.d_img != inputs.train.features.dim())
    fail_invalid("config says d_img=", config.d_img, " but features are ",
                 inputs.train.features.dim(), "-wide");
  if (inputs.train.n_eligible() < config.batch_size)
    fail_invalid("only ", inputs.train.n_eligible(),
                 " images have captions in every language, need ", config.batch_size);

  std::filesystem::create_directories(out_dir);
  const std::string checkpoint_path =
      (std::filesystem::path(out_dir) / "checkpoint_best.mmck").string();

  std::vector<int32_t> vocab_sizes;
  for (const Vocabulary& v : inputs.vocabs) vocab_sizes.push_back(v.size());
  Rng init_rng(config.seed, "init");
  ModelParams params = init_params(config, vocab_sizes, init_rng);
  AdamState adam = make_adam_state(params);
  Rng batch_rng(config.seed, "batches");

  // the degenerate zero-epoch answer; overwritten by the first improvement
  save_checkpoint({config, inputs.languages, inputs.vocabs, params}, checkpoint_path);

  TrainResult result;
  result.checkpoint_path = checkpoint_path;
  result.best_metric = -std::numeric_limits<double>::infinity();
  result.best_epoch = 0;

  int64_t since_improvement = 0;
  for (int64_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const std::vector<Batch> batches =
        epoch_batches(inputs.train, inputs.vocabs, config.batch_size, inputs.policy, batch_rng);
    double loss_sum = 0;
    int64_t zero_rows = 0;
    for (const Batch& batch : batches) {
      Tape tape;
      const auto nodes = declare_params(tape, params);
      BatchEmbeddings e;
      e.img = build_image_batch(tape, nodes, config, batch.image_rows);
      for (int k = 0; k < inputs.train.n_languages; ++k)
        e.caps.push_back(build_sentence_batch(tape, nodes, config, k,
                                              batch.caption_ids[static_cast<size_t>(k)]));
      e.mode = config.similarity_mode;
      e.margin = config.margin;
      const int32_t loss = config.model_kind == ModelKind::kPivot
                               ? build_pivot_loss(tape, e)
                               : build_parallel_loss(tape, e);
      const Bindings bindings = param_bindings(params);
      const auto values = tape_forward<float>(tape, bindings);
      loss_sum += values[static_cast<size_t>(loss)][0];
      if (config.similarity_mode == SimilarityMode::kSymmetric) {
        zero_rows += count_zero_rows(values[static_cast<size_t>(e.img)]);
        for (int32_t cap : e.caps) zero_rows += count_zero_rows(values[static_cast<size_t>(cap)]);
      }
      const Bindings grads = tape_backward<float>(tape, values, loss);
      adam_step(params, grads, adam, config);
    }
    if (zero_rows > 0)
      std::fprintf(stderr, "epoch %lld: %lld zero embeddings were normalized to zero\n",
                   static_cast<long long>(epoch), static_cast<long long>(zero_rows));

    const RankingReport val_report =
        rank_evaluation(params, config, inputs.languages, inputs.val, threads);
    const double metric = early_stop_metric(val_report);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.epochs.push_back(
        {epoch, loss_sum / double(batches.size()), metric, wall});
    std::fprintf(stderr, "epoch %lld: mean loss %.6f, val metric %.2f\n",
                 static_cast<long long>(epoch), loss_sum / double(batches.size()), metric);

    if (metric > result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = epoch;
      since_improvement = 0;
      save_checkpoint({config, inputs.languages, inputs.vocabs, params}, checkpoint_path);
    } else if (++since_improvement >= config.patience) {
      break;
    }
  }

  write_text_file((std::filesystem::path(out_dir) / "train_log.jsonl").string(),
                  train_log_jsonl(result.log));
  return result;
}

}  // namespace mmpivot
