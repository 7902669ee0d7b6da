#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mmpivot {

// A deterministic bilingual toy corpus. Every image carries a latent class;
// its feature vector is a fixed random projection of the class code plus
// per-image noise, and its captions spell the class code in per-language
// pseudo-vocabularies that share no tokens. Same seed, same bytes.
struct SynthSpec {
  int64_t n_images = 32;
  int64_t captions_per_language = 2;
  int64_t vocab_size = 4;  // digits per language
  int64_t d_img = 16;
  uint64_t seed = 7;
  double noise_scale = 0.05;
  // 0 gives every image its own class; otherwise class = image index mod
  // n_classes, so a second generation with the same seed and a different
  // id_prefix yields fresh instances of the same classes.
  int64_t n_classes = 0;
  std::string id_prefix = "img";
  std::vector<std::string> languages = {"en", "de"};

  void validate() const;
};

void generate_corpus(const SynthSpec& spec, const std::string& captions_path,
                     const std::string& ids_path, const std::string& features_path);

}  // namespace mmpivot
