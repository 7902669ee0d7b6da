#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "data.hpp"
#include "rng.hpp"
#include "similarity.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace mmpivot {

// Whether training uses the image-anchored loss alone or adds the
// caption-to-caption term.
enum class ModelKind { kPivot, kParallel };

const char* model_kind_name(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

struct EmbedConfig {
  int64_t embed_dim = 1024;  // joint space width N
  int64_t word_dim = 300;
  double margin = 0.2;
  SimilarityMode similarity_mode = SimilarityMode::kSymmetric;
  ModelKind model_kind = ModelKind::kPivot;
  double learning_rate = 0.001;
  int64_t batch_size = 64;
  int64_t max_epochs = 100;
  int64_t patience = 5;
  double grad_clip = 2.0;
  uint64_t seed = 42;
  int64_t d_img = 0;  // image feature width, fixed when data is first seen

  void validate() const;
};

struct GruWeights {
  Tensor w_z, w_r, w_h;  // word_dim x N
  Tensor u_z, u_r, u_h;  // N x N
  Tensor b_z, b_r, b_h;  // 1 x N
};

struct LanguageParams {
  Tensor embedding;  // |V_k| x word_dim; row 0 is the padding row, pinned to zero
  GruWeights gru;
};

struct ModelParams {
  std::vector<LanguageParams> languages;
  Tensor image_projection;  // d_img x N

  // Visits every parameter in a fixed order (languages first, projection
  // last) under its canonical name, e.g. "lang0.gru.w_z".
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

// Uniform on [-0.08, 0.08] everywhere except the image projection, which is
// scaled to sqrt(6 / (d_img + N)). The padding embedding rows start (and
// stay) zero.
ModelParams init_params(const EmbedConfig& config, const std::vector<int32_t>& vocab_sizes,
                        Rng& rng);

// One tape input per parameter, under the canonical names.
std::map<std::string, int32_t> declare_params(Tape& tape, const ModelParams& params);
Bindings param_bindings(const ModelParams& params);

// Appends the GRU recurrence for a batch of sentences of language `lang` and
// returns the node holding the b x N mode-normalized embeddings. Sequences
// are right-padded internally; constant 0/1 masks freeze finished rows, so
// each sentence's embedding is bit-independent of what it is batched with.
int32_t build_sentence_batch(Tape& tape, const std::map<std::string, int32_t>& param_nodes,
                             const EmbedConfig& config, int lang,
                             const std::vector<std::vector<int32_t>>& caption_ids);

// Projection + normalization for a batch of image feature rows.
int32_t build_image_batch(Tape& tape, const std::map<std::string, int32_t>& param_nodes,
                          const EmbedConfig& config, Tensor image_rows);

// Convenience encoders over the tape machinery; rows are bit-identical to
// what training sees. Batched variants chunk internally and may fan out
// across threads without changing results.
Tensor encode_sentences(const ModelParams& params, const EmbedConfig& config, int lang,
                        const std::vector<std::vector<int32_t>>& caption_ids,
                        unsigned threads = 1);
std::vector<float> encode_sentence(const ModelParams& params, const EmbedConfig& config,
                                   int lang, const std::vector<int32_t>& ids);
Tensor encode_images(const ModelParams& params, const EmbedConfig& config,
                     const Tensor& image_rows, unsigned threads = 1);
std::vector<float> encode_image(const ModelParams& params, const EmbedConfig& config,
                                const std::vector<float>& feature);

// Symmetric mode: v / |v| (zero stays zero). Asymmetric mode: |v|
// componentwise, magnitudes kept.
std::vector<float> normalize_embedding(std::vector<float> v, SimilarityMode mode);

// A trained model as stored on disk: hyperparameters, the language tag list
// (index k of `languages` names the captions' language k), vocabularies, and
// weights.
struct ModelBundle {
  EmbedConfig config;
  std::vector<std::string> languages;
  std::vector<Vocabulary> vocabs;
  ModelParams params;
};

// Checkpoint file: magic "MMCK", u32 version=1, u32 manifest byte length,
// manifest JSON {config, languages, vocabularies, tensors: name -> {shape,
// offset, length}}, then the tensor blob, float32 little-endian, contiguous
// in manifest order. Round-trips bit-exactly.
void save_checkpoint(const ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

}  // namespace mmpivot
