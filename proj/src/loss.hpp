#pragma once

#include <vector>

#include "similarity.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace mmpivot {

// Tape nodes holding one batch's normalized embeddings: row j of every
// member refers to the same image, so rows j' != j are the negatives.
struct BatchEmbeddings {
  int32_t img = -1;            // b x N
  std::vector<int32_t> caps;   // per language, b x N
  SimilarityMode mode = SimilarityMode::kSymmetric;
  double margin = 0.0;
};

// Pairwise scores of two embedding nodes; rows of `a` take the general role
// in asymmetric mode. Appends to the tape and returns the m x n score node.
int32_t build_score_matrix(Tape& tape, int32_t a, int32_t b, SimilarityMode mode);

// Sum over j != j' of both hinge directions on a square score matrix:
//   max(0, margin - S[j,j] + S[j',j]) + max(0, margin - S[j,j] + S[j,j'])
// Returns a 1 x 1 node.
int32_t build_contrastive_block(Tape& tape, int32_t scores, double margin);

// Hinge ranking loss anchored on the image: one contrastive block per
// language over score_matrix(cap_k, img). Summed, not averaged.
int32_t build_pivot_loss(Tape& tape, const BatchEmbeddings& e);

// Pivot loss plus the caption-to-caption block over
// score_matrix(cap_0, cap_1); needs exactly two languages.
int32_t build_parallel_loss(Tape& tape, const BatchEmbeddings& e);

// Standalone evaluation on concrete embeddings, computed in 64-bit. Rows of
// img/caps must already be normalized for the mode.
double pivot_loss(const Tensor& img, const std::vector<Tensor>& caps, SimilarityMode mode,
                  double margin);
double parallel_loss(const Tensor& img, const std::vector<Tensor>& caps, SimilarityMode mode,
                     double margin);

}  // namespace mmpivot
