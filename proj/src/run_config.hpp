#pragma once

#include <string>
#include <vector>

#include "config_json.hpp"
#include "data.hpp"
#include "model.hpp"

namespace mmpivot {

// Everything a training run needs: model hyperparameters plus the data
// paths and output directory. Serialized as a flat JSON object so a run's
// resolved snapshot can be fed back in to reproduce it.
struct RunConfig {
  EmbedConfig embed;
  std::vector<std::string> languages = {"en", "de"};
  EpochPolicy epoch_policy = EpochPolicy::kPerImage;

  std::string train_captions;
  std::string train_ids;
  std::string train_features;
  std::string val_captions;
  std::string val_ids;
  std::string val_features;
  std::string test_captions;
  std::string test_ids;
  std::string test_features;
  std::string output_dir = "run";
};

// Margin defaults are tied to the similarity mode; an explicit margin in
// the config or overrides wins over both.
double default_margin(SimilarityMode mode);

RunConfig default_run_config();

OrderedJson run_config_to_json(const RunConfig& config);

// Strict parse: unknown keys are rejected, missing keys take defaults,
// and a missing margin resolves against the (possibly overridden) mode.
RunConfig run_config_from_json(const OrderedJson& user);

// Applies one `key=value` override onto the raw JSON object. Values that
// parse as JSON (numbers, booleans, arrays) are stored typed; anything
// else is kept as a string.
void apply_override(OrderedJson& user, const std::string& assignment);

// Reads the config file (empty path means all defaults) and layers the
// overrides on top.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides);

void write_run_config(const RunConfig& config, const std::string& path);

}  // namespace mmpivot
