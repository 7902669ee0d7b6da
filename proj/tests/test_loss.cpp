#include <doctest.h>

#include <cmath>
#include <vector>

#include "loss.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "similarity.hpp"
#include "tape.hpp"
#include "tensor.hpp"

using namespace mmpivot;

namespace {

// Scalar reference for the hinge block: plain triple loop, no tape. Scores
// arrive as a dense matrix.
double ref_block(const TensorD& s, double margin) {
  double total = 0;
  for (int64_t j = 0; j < s.rows(); ++j)
    for (int64_t jp = 0; jp < s.rows(); ++jp) {
      if (jp == j) continue;
      total += std::max(0.0, margin - s(j, j) + s(jp, j));
      total += std::max(0.0, margin - s(j, j) + s(j, jp));
    }
  return total;
}

// Pairwise scores by scalar loop. Rows arrive normalized for the mode, so
// the symmetric score reduces to a plain dot product.
TensorD ref_scores(const Tensor& a, const Tensor& b, SimilarityMode mode) {
  TensorD s(Shape{a.rows(), b.rows()});
  for (int64_t p = 0; p < a.rows(); ++p)
    for (int64_t q = 0; q < b.rows(); ++q) {
      if (mode == SimilarityMode::kSymmetric) {
        double dot = 0;
        for (int64_t i = 0; i < a.cols(); ++i) dot += double(a(p, i)) * double(b(q, i));
        s(p, q) = dot;
      } else {
        s(p, q) = asym_similarity(a.row_span(p), b.row_span(q));
      }
    }
  return s;
}

double ref_pivot(const Tensor& img, const std::vector<Tensor>& caps, SimilarityMode mode,
                 double margin) {
  double total = 0;
  for (const Tensor& cap : caps) total += ref_block(ref_scores(cap, img, mode), margin);
  return total;
}

double ref_parallel(const Tensor& img, const std::vector<Tensor>& caps, SimilarityMode mode,
                    double margin) {
  return ref_pivot(img, caps, mode, margin) +
         ref_block(ref_scores(caps[0], caps[1], mode), margin);
}

Tensor random_normalized(Rng& rng, int64_t rows, int64_t cols, SimilarityMode mode) {
  Tensor t(Shape{rows, cols});
  for (int64_t r = 0; r < rows; ++r) {
    std::vector<float> v(static_cast<size_t>(cols));
    double norm = 0;
    do {
      norm = 0;
      for (auto& x : v) {
        x = static_cast<float>(rng.uniform(-1.0, 1.0));
        norm += double(x) * x;
      }
    } while (norm < 0.25);
    v = normalize_embedding(std::move(v), mode);
    for (int64_t c = 0; c < cols; ++c) t(r, c) = v[static_cast<size_t>(c)];
  }
  return t;
}

constexpr double kLossTol = 1e-6;  // on |ref - got| / max(1, |ref|)

bool close_guarded(double ref, double got) {
  return std::abs(ref - got) <= kLossTol * std::max(1.0, std::abs(ref));
}

}  // namespace

TEST_CASE("contrastive block matches the worked score matrix") {
  Tape tape;
  const int32_t scores = tape.input("s", 2, 2);
  const int32_t node = build_contrastive_block(tape, scores, 0.2);
  const Tensor m(Shape{2, 2}, {0.9f, 0.3f, 0.8f, 0.6f});
  const auto values = tape_forward<double>(tape, widen_bindings<double>({{"s", m}}));
  const double got = values[static_cast<size_t>(node)][0];
  CHECK(got == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(got == ref_block(m.cast<double>(), 0.2));  // same double arithmetic, exactly
}

TEST_CASE("the caption-to-caption block of the worked example adds 0.4") {
  Tape tape;
  const int32_t scores = tape.input("c", 2, 2);
  const int32_t node = build_contrastive_block(tape, scores, 0.2);
  const Tensor c(Shape{2, 2}, {0.5f, 0.45f, 0.2f, 0.4f});
  const auto values = tape_forward<double>(tape, widen_bindings<double>({{"c", c}}));
  CHECK(values[static_cast<size_t>(node)][0] == doctest::Approx(0.4).epsilon(1e-6));
}

TEST_CASE("vectorized losses match the scalar triple-loop reference") {
  Rng rng(31);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t b = 2 + static_cast<int64_t>(rng.below(4));   // 2..5
    const int64_t n = 1 + static_cast<int64_t>(rng.below(4));   // 1..4
    const SimilarityMode mode =
        trial % 2 ? SimilarityMode::kAsymmetric : SimilarityMode::kSymmetric;
    const double margin = rng.uniform(0.05, 0.5);

    const Tensor img = random_normalized(rng, b, n, mode);
    const std::vector<Tensor> caps = {random_normalized(rng, b, n, mode),
                                      random_normalized(rng, b, n, mode)};

    CHECK(close_guarded(ref_pivot(img, caps, mode, margin),
                        pivot_loss(img, caps, mode, margin)));
    CHECK(close_guarded(ref_parallel(img, caps, mode, margin),
                        parallel_loss(img, caps, mode, margin)));
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("diagonal dominance at the margin gives exactly zero loss") {
  // orthonormal one-hot embeddings: every gold score is 1, every distractor 0
  const int64_t b = 3, n = 4;
  Tensor img(Shape{b, n}), cap(Shape{b, n});
  for (int64_t j = 0; j < b; ++j) {
    img(j, j) = 1.0f;
    cap(j, j) = 1.0f;
  }
  CHECK(pivot_loss(img, {cap}, SimilarityMode::kSymmetric, 0.2) == 0.0);
  CHECK(parallel_loss(img, {cap, cap}, SimilarityMode::kSymmetric, 0.2) == 0.0);
}

TEST_CASE("one pair below the margin yields exactly the analytic hinge") {
  const int64_t b = 3, n = 4;
  Tensor img(Shape{b, n}), cap(Shape{b, n});
  for (int64_t j = 0; j < b; ++j) {
    img(j, j) = 1.0f;
    cap(j, j) = 1.0f;
  }
  // rotate caption 1 toward image 0 until its own pair dips below margin
  const float s = std::sin(0.7f), c = std::cos(0.7f);
  cap(1, 0) = s;
  cap(1, 1) = c;

  const double margin = 0.2;
  const double expected = std::max(0.0, margin - double(c) + double(s));
  REQUIRE(expected > 0.0);
  CHECK(pivot_loss(img, {cap}, SimilarityMode::kSymmetric, margin) == expected);
}

TEST_CASE("raising the margin never lowers the loss") {
  Rng rng(32);
  const Tensor img = random_normalized(rng, 4, 3, SimilarityMode::kSymmetric);
  const std::vector<Tensor> caps = {random_normalized(rng, 4, 3, SimilarityMode::kSymmetric)};
  double prev = 0;
  for (const double margin : {0.05, 0.1, 0.2, 0.4, 0.8}) {
    const double loss = pivot_loss(img, caps, SimilarityMode::kSymmetric, margin);
    CHECK(loss >= prev);
    prev = loss;
  }
}

TEST_CASE("score matrix graph equals the direct computation") {
  Rng rng(33);
  const Tensor a = random_normalized(rng, 3, 4, SimilarityMode::kAsymmetric);
  const Tensor b = random_normalized(rng, 2, 4, SimilarityMode::kAsymmetric);
  Tape tape;
  const int32_t na = tape.input("a", 3, 4);
  const int32_t nb = tape.input("b", 2, 4);
  const int32_t scores = build_score_matrix(tape, na, nb, SimilarityMode::kAsymmetric);
  const auto values =
      tape_forward<double>(tape, widen_bindings<double>({{"a", a}, {"b", b}}));
  const TensorD direct = score_matrix(a, b, SimilarityMode::kAsymmetric);
  REQUIRE(values[static_cast<size_t>(scores)].shape() == direct.shape());
  for (int64_t i = 0; i < direct.size(); ++i)
    CHECK(values[static_cast<size_t>(scores)][i] == direct[i]);
}

TEST_CASE("loss graphs are differentiable end to end") {
  Rng rng(34);
  for (const SimilarityMode mode : {SimilarityMode::kSymmetric, SimilarityMode::kAsymmetric}) {
    Tape tape;
    BatchEmbeddings e;
    e.img = tape.input("img", 3, 3);
    e.caps = {tape.input("cap0", 3, 3), tape.input("cap1", 3, 3)};
    e.mode = mode;
    e.margin = 0.2;
    const int32_t loss = build_parallel_loss(tape, e);
    Bindings bind{{"img", random_normalized(rng, 3, 3, mode)},
                  {"cap0", random_normalized(rng, 3, 3, mode)},
                  {"cap1", random_normalized(rng, 3, 3, mode)}};
    CHECK(tape_check_gradient(tape, bind, loss, 1e-5) <= 1e-4);
  }
}

TEST_CASE("graph losses agree with the standalone evaluators") {
  Rng rng(35);
  for (const SimilarityMode mode : {SimilarityMode::kSymmetric, SimilarityMode::kAsymmetric}) {
    const Tensor img = random_normalized(rng, 4, 3, mode);
    const std::vector<Tensor> caps = {random_normalized(rng, 4, 3, mode),
                                      random_normalized(rng, 4, 3, mode)};
    Tape tape;
    BatchEmbeddings e;
    e.img = tape.input("img", 4, 3);
    e.caps = {tape.input("cap0", 4, 3), tape.input("cap1", 4, 3)};
    e.mode = mode;
    e.margin = 0.2;
    const int32_t pivot = build_pivot_loss(tape, e);
    const int32_t parallel = build_parallel_loss(tape, e);
    Bindings bind{{"img", img}, {"cap0", caps[0]}, {"cap1", caps[1]}};
    const auto values = tape_forward<float>(tape, bind);
    CHECK(double(values[static_cast<size_t>(pivot)][0]) ==
          doctest::Approx(pivot_loss(img, caps, mode, 0.2)).epsilon(1e-4));
    CHECK(double(values[static_cast<size_t>(parallel)][0]) ==
          doctest::Approx(parallel_loss(img, caps, mode, 0.2)).epsilon(1e-4));
  }
}

TEST_CASE("loss builders validate their inputs") {
  Tape tape;
  BatchEmbeddings e;
  e.img = tape.input("img", 3, 3);
  e.caps = {tape.input("cap0", 3, 3)};
  e.mode = SimilarityMode::kSymmetric;
  e.margin = 0.2;
  CHECK_THROWS_AS(build_parallel_loss(tape, e), Error);  // needs exactly two languages

  BatchEmbeddings empty = e;
  empty.caps.clear();
  CHECK_THROWS_AS(build_pivot_loss(tape, empty), Error);

  BatchEmbeddings bad_margin = e;
  bad_margin.margin = 0.0;
  CHECK_THROWS_AS(build_pivot_loss(tape, bad_margin), Error);

  Tape small;
  BatchEmbeddings single;
  single.img = small.input("img", 1, 3);
  single.caps = {small.input("cap0", 1, 3)};
  single.margin = 0.2;
  CHECK_THROWS_AS(build_pivot_loss(small, single), Error);  // no negatives in a 1-batch

  const std::vector<Tensor> caps = {Tensor(Shape{2, 3})};
  CHECK_THROWS_AS(parallel_loss(Tensor(Shape{2, 3}), caps, SimilarityMode::kSymmetric, 0.2),
                  Error);
}
