#include "similarity.hpp"

#include <cmath>

#include "error.hpp"
#include "parallel.hpp"

namespace mmpivot {

const char* similarity_mode_name(SimilarityMode mode) {
  return mode == SimilarityMode::kSymmetric ? "symmetric" : "asymmetric";
}

SimilarityMode parse_similarity_mode(std::string_view text) {
  if (text == "symmetric") return SimilarityMode::kSymmetric;
  if (text == "asymmetric") return SimilarityMode::kAsymmetric;
  fail_invalid("unknown similarity mode '", text, "' (expected symmetric or asymmetric)");
}

namespace {

void check_dims(std::span<const float> a, std::span<const float> b, const char* op) {
  if (a.size() != b.size())
    fail_invalid(op, ": dimension mismatch, ", a.size(), " vs ", b.size());
  if (a.empty()) fail_invalid(op, ": empty vectors");
}

}  // namespace

double sym_similarity(std::span<const float> a, std::span<const float> b) {
  check_dims(a, b, "sym_similarity");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double asym_similarity(std::span<const float> general, std::span<const float> specific) {
  check_dims(general, specific, "asym_similarity");
  double penalty = 0;
  for (size_t i = 0; i < general.size(); ++i) {
    const double excess = static_cast<double>(general[i]) - static_cast<double>(specific[i]);
    if (excess > 0) penalty += excess * excess;
  }
  return -penalty;
}

double similarity(SimilarityMode mode, std::span<const float> a, std::span<const float> b) {
  return mode == SimilarityMode::kSymmetric ? sym_similarity(a, b) : asym_similarity(a, b);
}

TensorD score_matrix(const Tensor& a, const Tensor& b, SimilarityMode mode, unsigned threads) {
  if (a.cols() != b.cols())
    fail_invalid("score_matrix: dimension mismatch, ", shape_string(a.shape()), " vs ",
                 shape_string(b.shape()));
  TensorD scores(Shape{a.rows(), b.rows()});
  parallel_for(a.rows(), threads, [&](int64_t begin, int64_t end) {
    for (int64_t p = begin; p < end; ++p) {
      const auto row_a = a.row_span(p);
      for (int64_t q = 0; q < b.rows(); ++q)
        scores(p, q) = similarity(mode, row_a, b.row_span(q));
    }
  });
  return scores;
}

}  // namespace mmpivot
