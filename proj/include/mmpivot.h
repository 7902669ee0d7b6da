/* C interface to the multimodal pivot embedding engine.
 *
 * Every entry point returns an mmp_status; on failure mmp_last_error()
 * holds a message for the calling thread. Strings returned through
 * `char**` out-parameters are heap-allocated and must be released with
 * mmp_string_free(). Handles are opaque; release them with their close
 * function.
 */
#ifndef MMPIVOT_H
#define MMPIVOT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mmp_status {
  MMP_OK = 0,
  MMP_RUNTIME_ERROR = 1,
  MMP_INVALID_INPUT = 2
} mmp_status;

/* Message describing the calling thread's most recent failure; empty
 * string when the last call succeeded. The pointer stays valid until the
 * thread's next mmpivot call. */
const char* mmp_last_error(void);

const char* mmp_version(void);

void mmp_string_free(char* text);

/* ---------------------------------------------------------------- synth */

typedef struct mmp_synth_spec {
  int64_t n_images;
  int64_t captions_per_language;
  int64_t vocab_size; /* distinct digit tokens per language, >= 4 */
  int64_t d_img;
  uint64_t seed;
  double noise_scale;
  int64_t n_classes;            /* 0: every image its own class */
  const char* id_prefix;        /* NULL: "img" */
  const char* const* languages; /* NULL: {"en", "de"} */
  size_t n_languages;
} mmp_synth_spec;

void mmp_synth_spec_defaults(mmp_synth_spec* spec);

/* Writes a caption TSV, an image id list, and a feature matrix. Byte
 * reproducible from the spec. */
mmp_status mmp_synth_generate(const mmp_synth_spec* spec, const char* captions_path,
                              const char* ids_path, const char* features_path);

/* --------------------------------------------------------------- config */

/* Default run configuration as JSON for "symmetric" or "asymmetric"
 * similarity; the margin default follows the mode (0.2 vs 0.05). */
mmp_status mmp_default_config(const char* similarity_mode, char** json_out);

/* ------------------------------------------------------------- training */

/* Loads the JSON config at config_path (NULL: all defaults), applies
 * `overrides` ("key=value" each), trains, and writes resolved_config.json,
 * checkpoint_best.mmck, and train_log.jsonl under the config's output
 * directory (output_dir argument overrides it when non-NULL). On success
 * *checkpoint_out (when non-NULL) receives the checkpoint path. */
mmp_status mmp_train(const char* config_path, const char* const* overrides,
                     size_t n_overrides, const char* output_dir, int threads,
                     char** checkpoint_out);

/* ---------------------------------------------------------------- model */

typedef struct mmp_model mmp_model;

mmp_status mmp_model_open(const char* checkpoint_path, mmp_model** model_out);
void mmp_model_close(mmp_model* model);

/* Resolved hyperparameters as JSON. */
mmp_status mmp_model_config(const mmp_model* model, char** json_out);

int64_t mmp_model_embed_dim(const mmp_model* model);
int64_t mmp_model_image_dim(const mmp_model* model);
size_t mmp_model_language_count(const mmp_model* model);
/* Tag of language slot `index`; NULL if out of range. Valid while the
 * model stays open. */
const char* mmp_model_language_tag(const mmp_model* model, size_t index);

/* Embeds a whitespace-separated sentence in the given language into
 * `out` (capacity `out_len` floats, must be >= embed_dim). */
mmp_status mmp_embed_sentence(const mmp_model* model, const char* language,
                              const char* sentence, float* out, size_t out_len);

/* Embeds one image feature vector (length image_dim). */
mmp_status mmp_embed_image(const mmp_model* model, const float* feature,
                           size_t feature_len, float* out, size_t out_len);

/* Scores two embeddings with the model's similarity. Asymmetric mode
 * treats `a` as the general (caption-side) argument. */
mmp_status mmp_similarity(const mmp_model* model, const float* a, const float* b,
                          size_t len, double* score_out);

/* ----------------------------------------------------------- evaluation */

/* Ranking evaluation of the model on a captioned image split. On success
 * *json_out / *table_out (each optional) receive the report rendered as
 * JSON and as a fixed-width table. */
mmp_status mmp_eval_ranking(mmp_model* model, const char* captions_path,
                            const char* ids_path, const char* features_path,
                            int threads, char** json_out, char** table_out);

/* Sentence-pair correlation against gold scores in [0, 5]. */
mmp_status mmp_eval_sts(mmp_model* model, const char* pairs_path, const char* language,
                        int threads, char** json_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MMPIVOT_H */
