#pragma once

#include <span>
#include <string_view>

#include "tensor.hpp"

namespace mmpivot {

// How embedding pairs are scored. Symmetric mode is cosine similarity;
// asymmetric mode is the (negated) order-violation penalty, which rewards
// the general item for sitting below the specific one coordinatewise.
enum class SimilarityMode { kSymmetric, kAsymmetric };

const char* similarity_mode_name(SimilarityMode mode);
SimilarityMode parse_similarity_mode(std::string_view text);

// cos(a, b). Both-zero input is defined as 0 rather than an error, since a
// zero embedding is a logged anomaly upstream, not a reason to crash here.
double sym_similarity(std::span<const float> a, std::span<const float> b);

// -|max(0, general - specific)|^2. Zero iff general <= specific everywhere.
double asym_similarity(std::span<const float> general, std::span<const float> specific);

// Dispatch on mode; in asymmetric mode `a` takes the general role.
double similarity(SimilarityMode mode, std::span<const float> a, std::span<const float> b);

// Pairwise scores: entry (p, q) is the scalar similarity of row p of `a`
// (general role) and row q of `b`. Each entry is computed by the scalar op,
// so results are bit-identical to calling it directly, regardless of the
// thread count.
TensorD score_matrix(const Tensor& a, const Tensor& b, SimilarityMode mode, unsigned threads = 1);

}  // namespace mmpivot
