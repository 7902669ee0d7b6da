#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace mmpivot {

// One tokenized description of an image. `language` indexes the declared
// language list (0-based).
struct CaptionRecord {
  std::string image_id;
  int language = 0;
  std::vector<std::string> tokens;
};

// Token ids are dense; 0 and 1 are reserved for padding and unknowns.
inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kUnkId = 1;
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";

class Vocabulary {
 public:
  Vocabulary() = default;

  // id_to_token must start with <pad>, <unk> and contain no duplicates.
  Vocabulary(int language, std::vector<std::string> id_to_token);

  int language() const { return language_; }
  int32_t size() const { return static_cast<int32_t>(id_to_token_.size()); }
  const std::vector<std::string>& id_to_token() const { return id_to_token_; }

  // UNK for unmapped tokens.
  int32_t id_of(const std::string& token) const;
  const std::string& token_of(int32_t id) const;

 private:
  int language_ = 0;
  std::vector<std::string> id_to_token_;
  std::map<std::string, int32_t> token_to_id_;
};

struct FeatureTable {
  std::vector<std::string> ids;  // row j of matrix belongs to ids[j]
  Tensor matrix;                 // n_rows x dim
  std::map<std::string, int64_t> index;  // id -> row

  int64_t dim() const { return matrix.cols(); }
  int64_t rows() const { return matrix.rows(); }
  // -1 when absent
  int64_t row_of(const std::string& image_id) const;
};

// Validates (unique non-empty ids, one per row, finite values) and builds the
// id index.
FeatureTable make_feature_table(std::vector<std::string> ids, Tensor matrix);

struct StsPair {
  std::vector<std::string> tokens1;
  std::vector<std::string> tokens2;
  double gold = 0.0;  // in [0, 5]
};

// Captions and features joined for sampling. Eligible images are those with
// at least one caption in every language, kept in feature-row order.
struct Dataset {
  std::vector<CaptionRecord> records;
  FeatureTable features;
  int n_languages = 0;

  std::vector<int64_t> eligible_rows;  // feature rows of eligible images
  // captions_of[e][k]: record indices for eligible image e, language k
  std::vector<std::vector<std::vector<int64_t>>> captions_of;

  int64_t n_eligible() const { return static_cast<int64_t>(eligible_rows.size()); }
  const std::string& image_id(int64_t e) const { return features.ids[eligible_rows[e]]; }
};

// Aligned per-image rows; every other row of the same batch acts as a
// negative for both loss variants.
struct Batch {
  Tensor image_rows;                                   // b x d_img
  std::vector<std::string> image_ids;                  // b
  std::vector<std::vector<std::vector<int32_t>>> caption_ids;  // [lang][j] -> token ids

  int64_t size() const { return static_cast<int64_t>(image_ids.size()); }
  int64_t length(int lang, int64_t j) const {
    return static_cast<int64_t>(caption_ids[static_cast<size_t>(lang)][static_cast<size_t>(j)].size());
  }
};

enum class EpochPolicy { kPerImage, kPerCaption };

const char* epoch_policy_name(EpochPolicy policy);
EpochPolicy parse_epoch_policy(const std::string& text);

// UTF-8 TSV, one caption per line: image_id TAB language-tag TAB
// space-separated tokens. Language tags must come from `languages`.
std::vector<CaptionRecord> load_captions(const std::string& path,
                                         const std::vector<std::string>& languages);

// Every token of frequency >= min_count, plus the reserved entries. Ids are
// assigned by descending frequency, ties broken lexically, so rebuilding
// from the same corpus is reproducible.
Vocabulary build_vocabulary(const std::vector<CaptionRecord>& records, int language,
                            int64_t min_count);

std::vector<int32_t> encode_tokens(const Vocabulary& vocab,
                                   const std::vector<std::string>& tokens);

// ids file: one image id per line. Binary: "MMFE", u32 version=1, u32 n_rows,
// u32 dim, then n_rows x dim float32, row-major, all little-endian.
FeatureTable load_feature_table(const std::string& ids_path, const std::string& bin_path);
void write_feature_table(const FeatureTable& table, const std::string& ids_path,
                         const std::string& bin_path);

// UTF-8 TSV: tokens1 TAB tokens2 TAB gold-score in [0, 5].
std::vector<StsPair> load_sts_pairs(const std::string& path);

// Joins captions with features. A caption naming an image that has no
// feature row is an input error.
Dataset bind_dataset(std::vector<CaptionRecord> records, FeatureTable features,
                     int n_languages);

// batch_size distinct images without replacement, one uniformly chosen
// caption per (image, language). Needs batch_size >= 2 so that every row has
// at least one in-batch negative.
Batch sample_minibatch(const Dataset& dataset, const std::vector<Vocabulary>& vocabs,
                       int64_t batch_size, Rng& rng);

// One epoch worth of batches. Per-image: visit each eligible image once in a
// shuffled order, dropping the tail that cannot fill a batch. Per-caption:
// repeat rounds over the images that still have unvisited first-language
// captions, consuming one per round, until fewer than batch_size remain.
std::vector<Batch> epoch_batches(const Dataset& dataset, const std::vector<Vocabulary>& vocabs,
                                 int64_t batch_size, EpochPolicy policy, Rng& rng);

}  // namespace mmpivot
