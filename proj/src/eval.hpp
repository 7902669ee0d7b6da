#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace mmpivot {

struct DirectionMetrics {
  double r1 = 0, r5 = 0, r10 = 0;  // recall percentages
  double mr = 0;                   // median rank
};

struct RankingReport {
  std::vector<std::string> languages;
  std::vector<DirectionMetrics> text_to_image;  // slot k belongs to languages[k]
  std::vector<DirectionMetrics> image_to_text;
};

struct StsReport {
  std::vector<double> predictions;  // one per pair, file order
  double pearson_r = 0;
};

// An evaluation split: every image in `features` is a candidate (and an
// image-to-text query); every caption is a text-to-image query.
struct EvalSplit {
  FeatureTable features;
  std::vector<std::vector<std::vector<int32_t>>> captions;  // [lang][q] token ids
  std::vector<std::vector<int64_t>> caption_image;          // [lang][q] gold feature row
};

EvalSplit make_eval_split(const std::vector<CaptionRecord>& records, FeatureTable features,
                          const std::vector<Vocabulary>& vocabs);

// Pessimistic competition rank per query: rank(g) = 1 + |{c != g :
// score[c] >= score[g]}|, minimized over the query's gold set, so ties and
// storage order can never flatter the result.
std::vector<int64_t> gold_ranks(const TensorD& scores,
                                const std::vector<std::vector<int64_t>>& gold);

double recall_at_k(const std::vector<int64_t>& ranks, int64_t k);

// Middle value; mean of the two middle values for even counts.
double median_rank(std::vector<int64_t> ranks);

// `languages` labels the report rows; slot k is the tag of language k.
RankingReport rank_evaluation(const ModelParams& params, const EmbedConfig& config,
                              const std::vector<std::string>& languages, const EvalSplit& split,
                              unsigned threads = 1);

// Undefined when either side has zero variance; that raises a runtime error
// rather than returning a number.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Scores each pair with the model's similarity; asymmetric scores are
// averaged over both argument orders so one number describes the pair.
StsReport sts_evaluate(const ModelBundle& bundle, int lang, const std::vector<StsPair>& pairs,
                       unsigned threads = 1);

std::string ranking_report_json(const RankingReport& report);
std::string ranking_report_table(const RankingReport& report);
std::string sts_report_json(const StsReport& report);

}  // namespace mmpivot
