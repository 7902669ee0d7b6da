#include "loss.hpp"

#include <cmath>

#include "error.hpp"

namespace mmpivot {

int32_t build_score_matrix(Tape& tape, int32_t a, int32_t b, SimilarityMode mode) {
  const Shape& sa = tape.node(a).shape;
  const Shape& sb = tape.node(b).shape;
  if (sa[1] != sb[1])
    fail_invalid("score matrix needs equal embedding widths, got ", shape_string(sa), " vs ",
                 shape_string(sb));
  if (mode == SimilarityMode::kSymmetric) {
    // rows are unit length (or zero), so the dot product is the cosine
    return tape.matmul(a, b, false, true);
  }
  const int64_t m = sa[0];
  const int64_t n = sb[0];
  std::vector<int64_t> rows_a(static_cast<size_t>(m * n));
  std::vector<int64_t> rows_b(static_cast<size_t>(m * n));
  for (int64_t p = 0; p < m; ++p)
    for (int64_t q = 0; q < n; ++q) {
      rows_a[static_cast<size_t>(p * n + q)] = p;
      rows_b[static_cast<size_t>(p * n + q)] = q;
    }
  const int32_t excess =
      tape.relu(tape.sub(tape.gather_rows(a, std::move(rows_a)),
                         tape.gather_rows(b, std::move(rows_b))));
  return tape.reshape(tape.scalar_mul(tape.sqnorm_rows(excess), -1.0), m, n);
}

int32_t build_contrastive_block(Tape& tape, int32_t scores, double margin) {
  const Shape& s = tape.node(scores).shape;
  if (s[0] != s[1]) fail_invalid("contrastive block needs a square matrix, got ", shape_string(s));
  if (!std::isfinite(margin) || margin <= 0) fail_invalid("margin must be > 0, got ", margin);
  const int64_t b = s[0];
  if (b < 2) fail_invalid("a batch of ", b, " has no negatives; need >= 2");

  std::vector<int64_t> diag_rows(static_cast<size_t>(b));
  for (int64_t j = 0; j < b; ++j) diag_rows[static_cast<size_t>(j)] = j * (b + 1);
  const int32_t diag = tape.gather_rows(tape.reshape(scores, b * b, 1), std::move(diag_rows));
  // column j carries margin - S[j,j]; the margin rides on a scalar_mul so it
  // keeps full precision when the tape is evaluated in 64-bit
  const int32_t bias =
      tape.add(tape.scalar_mul(tape.constant(Tensor::full(Shape{1, b}, 1.0f), "ones"), margin),
               tape.scalar_mul(tape.transpose(diag), -1.0));

  Tensor off(Shape{b, b});
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < b; ++j) off(i, j) = i == j ? 0.0f : 1.0f;
  const int32_t offdiag = tape.constant(std::move(off), "offdiag");

  // entry (j', j) is margin - S[j,j] + S[j',j], the wrong-candidate direction
  const int32_t versus_rows = tape.sum(tape.mul(tape.relu(tape.add_rowvec(scores, bias)), offdiag));
  // entry (j', j) is margin - S[j,j] + S[j,j'], the wrong-query direction
  const int32_t versus_cols =
      tape.sum(tape.mul(tape.relu(tape.add_rowvec(tape.transpose(scores), bias)), offdiag));
  return tape.add(versus_rows, versus_cols);
}

namespace {

void check_batch(const Tape& tape, const BatchEmbeddings& e) {
  if (e.caps.empty()) fail_invalid("batch has no caption embeddings");
  const Shape& img = tape.node(e.img).shape;
  if (img[0] < 2) fail_invalid("a batch of ", img[0], " has no negatives; need >= 2");
  for (int32_t cap : e.caps) {
    const Shape& s = tape.node(cap).shape;
    if (s != img)
      fail_invalid("caption embeddings ", shape_string(s), " do not match images ",
                   shape_string(img));
  }
}

}  // namespace

int32_t build_pivot_loss(Tape& tape, const BatchEmbeddings& e) {
  check_batch(tape, e);
  int32_t total = -1;
  for (int32_t cap : e.caps) {
    const int32_t block =
        build_contrastive_block(tape, build_score_matrix(tape, cap, e.img, e.mode), e.margin);
    total = total < 0 ? block : tape.add(total, block);
  }
  return total;
}

int32_t build_parallel_loss(Tape& tape, const BatchEmbeddings& e) {
  if (e.caps.size() != 2)
    fail_invalid("the cross-language term needs exactly 2 languages, got ", e.caps.size());
  const int32_t pivot = build_pivot_loss(tape, e);
  const int32_t cross = build_contrastive_block(
      tape, build_score_matrix(tape, e.caps[0], e.caps[1], e.mode), e.margin);
  return tape.add(pivot, cross);
}

namespace {

double eval_loss(const Tensor& img, const std::vector<Tensor>& caps, SimilarityMode mode,
                 double margin, bool with_cross_term) {
  Tape tape;
  BatchEmbeddings e;
  e.img = tape.constant(img, "img");
  for (size_t k = 0; k < caps.size(); ++k)
    e.caps.push_back(tape.constant(caps[k], concat("cap", k)));
  e.mode = mode;
  e.margin = margin;
  const int32_t loss = with_cross_term ? build_parallel_loss(tape, e) : build_pivot_loss(tape, e);
  return tape_forward<double>(tape, {})[static_cast<size_t>(loss)][0];
}

}  // namespace

double pivot_loss(const Tensor& img, const std::vector<Tensor>& caps, SimilarityMode mode,
                  double margin) {
  return eval_loss(img, caps, mode, margin, false);
}

double parallel_loss(const Tensor& img, const std::vector<Tensor>& caps, SimilarityMode mode,
                     double margin) {
  return eval_loss(img, caps, mode, margin, true);
}

}  // namespace mmpivot
