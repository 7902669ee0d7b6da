#include "eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "config_json.hpp"
#include "error.hpp"
#include "similarity.hpp"

namespace mmpivot {

EvalSplit make_eval_split(const std::vector<CaptionRecord>& records, FeatureTable features,
                          const std::vector<Vocabulary>& vocabs) {
  if (vocabs.empty()) fail_invalid("need at least one vocabulary");
  EvalSplit split;
  split.captions.resize(vocabs.size());
  split.caption_image.resize(vocabs.size());
  for (const CaptionRecord& rec : records) {
    if (rec.language < 0 || rec.language >= static_cast<int>(vocabs.size()))
      fail_invalid("caption for '", rec.image_id, "' has language index ", rec.language,
                   ", expected [0, ", vocabs.size(), ")");
    const int64_t row = features.row_of(rec.image_id);
    if (row < 0)
      fail_invalid("caption references image '", rec.image_id, "' absent from the feature table");
    const size_t k = static_cast<size_t>(rec.language);
    split.captions[k].push_back(encode_tokens(vocabs[k], rec.tokens));
    split.caption_image[k].push_back(row);
  }
  for (size_t k = 0; k < vocabs.size(); ++k)
    if (split.captions[k].empty()) fail_invalid("split has no captions for language ", k);
  split.features = std::move(features);
  return split;
}

std::vector<int64_t> gold_ranks(const TensorD& scores,
                                const std::vector<std::vector<int64_t>>& gold) {
  if (static_cast<int64_t>(gold.size()) != scores.rows())
    fail_invalid("got ", gold.size(), " gold sets for ", scores.rows(), " queries");
  std::vector<int64_t> ranks;
  ranks.reserve(gold.size());
  for (int64_t q = 0; q < scores.rows(); ++q) {
    const auto& golds = gold[static_cast<size_t>(q)];
    if (golds.empty()) fail_invalid("query ", q, " has an empty gold set");
    const auto row = scores.row_span(q);
    int64_t best = scores.cols() + 1;
    for (int64_t g : golds) {
      if (g < 0 || g >= scores.cols())
        fail_invalid("gold index ", g, " out of range for ", scores.cols(), " candidates");
      int64_t rank = 1;
      for (int64_t c = 0; c < scores.cols(); ++c)
        if (c != g && row[static_cast<size_t>(c)] >= row[static_cast<size_t>(g)]) ++rank;
      best = std::min(best, rank);
    }
    ranks.push_back(best);
  }
  return ranks;
}

double recall_at_k(const std::vector<int64_t>& ranks, int64_t k) {
  if (ranks.empty()) fail_invalid("recall over an empty rank list");
  if (k < 1) fail_invalid("recall cutoff must be >= 1, got ", k);
  int64_t hits = 0;
  for (int64_t r : ranks) {
    if (r < 1) fail_invalid("ranks must be >= 1, got ", r);
    if (r <= k) ++hits;
  }
  return 100.0 * double(hits) / double(ranks.size());
}

double median_rank(std::vector<int64_t> ranks) {
  if (ranks.empty()) fail_invalid("median of an empty rank list");
  std::sort(ranks.begin(), ranks.end());
  const size_t n = ranks.size();
  if (n % 2 == 1) return double(ranks[n / 2]);
  return (double(ranks[n / 2 - 1]) + double(ranks[n / 2])) / 2.0;
}

namespace {

DirectionMetrics metrics_from_ranks(const std::vector<int64_t>& ranks) {
  DirectionMetrics m;
  m.r1 = recall_at_k(ranks, 1);
  m.r5 = recall_at_k(ranks, 5);
  m.r10 = recall_at_k(ranks, 10);
  m.mr = median_rank(ranks);
  return m;
}

TensorD transposed(const TensorD& m) {
  TensorD out(Shape{m.cols(), m.rows()});
  for (int64_t i = 0; i < m.rows(); ++i)
    for (int64_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

}  // namespace

RankingReport rank_evaluation(const ModelParams& params, const EmbedConfig& config,
                              const std::vector<std::string>& languages, const EvalSplit& split,
                              unsigned threads) {
  if (split.captions.size() != params.languages.size())
    fail_invalid("split has ", split.captions.size(), " languages, model has ",
                 params.languages.size());
  if (languages.size() != params.languages.size())
    fail_invalid("got ", languages.size(), " language tags for ", params.languages.size(),
                 " languages");
  RankingReport report;
  const Tensor img_emb = encode_images(params, config, split.features.matrix, threads);
  for (size_t k = 0; k < split.captions.size(); ++k) {
    const Tensor cap_emb =
        encode_sentences(params, config, static_cast<int>(k), split.captions[k], threads);
    // captions take the general argument role whichever side is the query
    const TensorD scores = score_matrix(cap_emb, img_emb, config.similarity_mode, threads);

    std::vector<std::vector<int64_t>> gold_images;
    gold_images.reserve(split.caption_image[k].size());
    for (int64_t row : split.caption_image[k]) gold_images.push_back({row});
    report.text_to_image.push_back(metrics_from_ranks(gold_ranks(scores, gold_images)));

    std::vector<std::vector<int64_t>> gold_captions(
        static_cast<size_t>(split.features.rows()));
    for (size_t q = 0; q < split.caption_image[k].size(); ++q)
      gold_captions[static_cast<size_t>(split.caption_image[k][q])].push_back(
          static_cast<int64_t>(q));
    for (int64_t i = 0; i < split.features.rows(); ++i)
      if (gold_captions[static_cast<size_t>(i)].empty())
        fail_invalid("image '", split.features.ids[static_cast<size_t>(i)],
                     "' has no captions for language ", k);
    report.image_to_text.push_back(
        metrics_from_ranks(gold_ranks(transposed(scores), gold_captions)));
    report.languages.push_back(languages[k]);
  }
  return report;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) fail_invalid("pearson needs equal lengths, got ", x.size(), " vs ",
                                         y.size());
  if (x.empty()) fail_invalid("pearson over empty vectors");
  const double n = double(x.size());
  double mean_x = 0, mean_y = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mean_x += x[i];
    mean_y += y[i];
  }
  mean_x /= n;
  mean_y /= n;
  double cov = 0, var_x = 0, var_y = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mean_x;
    const double dy = y[i] - mean_y;
    cov += dx * dy;
    var_x += dx * dx;
    var_y += dy * dy;
  }
  if (var_x == 0.0 || var_y == 0.0) fail_runtime("undefined correlation: zero variance");
  return cov / std::sqrt(var_x * var_y);
}

StsReport sts_evaluate(const ModelBundle& bundle, int lang, const std::vector<StsPair>& pairs,
                       unsigned threads) {
  if (lang < 0 || lang >= static_cast<int>(bundle.vocabs.size()))
    fail_invalid("language index ", lang, " out of range [0, ", bundle.vocabs.size(), ")");
  if (pairs.empty()) fail_invalid("no sentence pairs to score");
  const Vocabulary& vocab = bundle.vocabs[static_cast<size_t>(lang)];

  std::vector<std::vector<int32_t>> left, right;
  left.reserve(pairs.size());
  right.reserve(pairs.size());
  for (const StsPair& p : pairs) {
    left.push_back(encode_tokens(vocab, p.tokens1));
    right.push_back(encode_tokens(vocab, p.tokens2));
  }
  const Tensor u = encode_sentences(bundle.params, bundle.config, lang, left, threads);
  const Tensor v = encode_sentences(bundle.params, bundle.config, lang, right, threads);

  StsReport report;
  report.predictions.reserve(pairs.size());
  std::vector<double> gold;
  gold.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto a = u.row_span(static_cast<int64_t>(i));
    const auto b = v.row_span(static_cast<int64_t>(i));
    double score;
    if (bundle.config.similarity_mode == SimilarityMode::kSymmetric) {
      score = sym_similarity(a, b);
    } else {
      score = (asym_similarity(a, b) + asym_similarity(b, a)) / 2.0;
    }
    report.predictions.push_back(score);
    gold.push_back(pairs[i].gold);
  }
  report.pearson_r = pearson(report.predictions, gold);
  return report;
}

namespace {

OrderedJson direction_json(const DirectionMetrics& m) {
  OrderedJson j;
  j["r1"] = m.r1;
  j["r5"] = m.r5;
  j["r10"] = m.r10;
  j["mr"] = m.mr;
  return j;
}

}  // namespace

std::string ranking_report_json(const RankingReport& report) {
  OrderedJson j;
  for (size_t k = 0; k < report.languages.size(); ++k) {
    OrderedJson lang;
    lang["text_to_image"] = direction_json(report.text_to_image[k]);
    lang["image_to_text"] = direction_json(report.image_to_text[k]);
    j[report.languages[k]] = std::move(lang);
  }
  return j.dump(2) + "\n";
}

std::string ranking_report_table(const RankingReport& report) {
  std::string out = concat("language    direction      ", "   R@1    R@5   R@10     Mr\n");
  const auto row = [&out](const std::string& lang, const char* direction,
                          const DirectionMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-11s %-14s %6.1f %6.1f %6.1f %6.1f\n", lang.c_str(),
                  direction, m.r1, m.r5, m.r10, m.mr);
    out += buf;
  };
  for (size_t k = 0; k < report.languages.size(); ++k) {
    row(report.languages[k], "text->image", report.text_to_image[k]);
    row(report.languages[k], "image->text", report.image_to_text[k]);
  }
  return out;
}

std::string sts_report_json(const StsReport& report) {
  OrderedJson j;
  j["pearson_r"] = report.pearson_r;
  j["n_pairs"] = report.predictions.size();
  return j.dump(2) + "\n";
}

}  // namespace mmpivot
