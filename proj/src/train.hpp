#pragma once

#include <map>
#include <string>
#include <vector>

#include "data.hpp"
#include "eval.hpp"
#include "model.hpp"

namespace mmpivot {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

struct AdamState {
  std::map<std::string, Tensor> m;  // first moments, keyed like the parameters
  std::map<std::string, Tensor> v;  // second moments
  int64_t step = 0;
};

AdamState make_adam_state(const ModelParams& params);

// One bias-corrected Adam update. Gradients are first rescaled so their
// global L2 norm is at most config.grad_clip; the padding embedding rows
// carry no gradient and end the step exactly zero.
void adam_step(ModelParams& params, const Bindings& grads, AdamState& state,
               const EmbedConfig& config);

// Sum of R@1 + R@5 + R@10 over every language and both directions; higher
// is better.
double early_stop_metric(const RankingReport& report);

struct EpochRecord {
  int64_t epoch = 0;  // 1-based
  double mean_loss = 0;
  double val_metric = 0;
  double wall_seconds = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

// One JSON object per line, one line per epoch.
std::string train_log_jsonl(const TrainLog& log);

struct TrainInputs {
  Dataset train;
  EvalSplit val;
  std::vector<Vocabulary> vocabs;
  std::vector<std::string> languages;
  EpochPolicy policy = EpochPolicy::kPerImage;
};

struct TrainResult {
  std::string checkpoint_path;
  TrainLog log;
  double best_metric = 0;
  int64_t best_epoch = 0;  // 0 means the untrained initialization
};

// The optimization loop: per epoch, sweep the training batches, apply Adam,
// score retrieval on the validation split, and keep the checkpoint of the
// best epoch (never the last). Stops at max_epochs, or once `patience`
// epochs pass without the validation metric improving. Writes
// checkpoint_best.mmck and train_log.jsonl under out_dir.
TrainResult train_model(const EmbedConfig& config, const TrainInputs& inputs,
                        const std::string& out_dir, unsigned threads = 1);

}  // namespace mmpivot
