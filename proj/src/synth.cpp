#include "synth.hpp"

#include <cmath>
#include <fstream>

#include "data.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace mmpivot {

void SynthSpec::validate() const {
  if (n_images < 1) fail_invalid("n_images must be >= 1, got ", n_images);
  if (captions_per_language < 1)
    fail_invalid("captions_per_language must be >= 1, got ", captions_per_language);
  if (vocab_size < 4) fail_invalid("vocab_size must be >= 4, got ", vocab_size);
  if (d_img < 1) fail_invalid("d_img must be >= 1, got ", d_img);
  if (!std::isfinite(noise_scale) || noise_scale < 0)
    fail_invalid("noise_scale must be >= 0, got ", noise_scale);
  if (n_classes < 0) fail_invalid("n_classes must be >= 0, got ", n_classes);
  if (id_prefix.empty()) fail_invalid("id_prefix must be non-empty");
  if (languages.empty()) fail_invalid("need at least one language");
  for (const std::string& tag : languages)
    if (tag.empty()) fail_invalid("language tags must be non-empty");
}

namespace {

std::vector<int64_t> class_code(int64_t cls, int64_t base, int64_t length) {
  std::vector<int64_t> digits(static_cast<size_t>(length));
  for (int64_t pos = length - 1; pos >= 0; --pos) {
    digits[static_cast<size_t>(pos)] = cls % base;
    cls /= base;
  }
  return digits;
}

}  // namespace

void generate_corpus(const SynthSpec& spec, const std::string& captions_path,
                     const std::string& ids_path, const std::string& features_path) {
  spec.validate();
  const int64_t n_classes = spec.n_classes == 0 ? spec.n_images : spec.n_classes;

  // shortest code that can spell every class
  int64_t code_len = 1;
  for (int64_t reach = spec.vocab_size; reach < n_classes; reach *= spec.vocab_size) ++code_len;

  // The class-to-feature map lives in its own stream, so corpora generated
  // with the same seed but different id prefixes (train vs validation)
  // share it and differ only in noise.
  Rng structure_rng(spec.seed, "structure");
  const int64_t code_width = code_len * spec.vocab_size;
  Tensor projection(Shape{spec.d_img, code_width});
  const double scale = 1.0 / std::sqrt(double(code_len));
  for (int64_t i = 0; i < projection.size(); ++i)
    projection[i] = static_cast<float>(structure_rng.normal() * scale);

  FeatureTable table;
  table.matrix = Tensor(Shape{spec.n_images, spec.d_img});
  std::ofstream captions(captions_path);
  if (!captions) fail_invalid("cannot write ", captions_path);
  for (int64_t i = 0; i < spec.n_images; ++i) {
    const std::string image_id = spec.id_prefix + std::to_string(i);
    const std::vector<int64_t> code = class_code(i % n_classes, spec.vocab_size, code_len);

    auto feature = table.matrix.row_span(i);
    for (int64_t pos = 0; pos < code_len; ++pos) {
      const int64_t column = pos * spec.vocab_size + code[static_cast<size_t>(pos)];
      for (int64_t d = 0; d < spec.d_img; ++d) feature[static_cast<size_t>(d)] += projection(d, column);
    }
    Rng noise_rng(spec.seed, (image_id + ":noise").c_str());
    for (int64_t d = 0; d < spec.d_img; ++d)
      feature[static_cast<size_t>(d)] += static_cast<float>(spec.noise_scale * noise_rng.normal());

    for (const std::string& lang : spec.languages) {
      // variant j repeats digit 0 as a suffix: same class, different surface
      for (int64_t j = 0; j < spec.captions_per_language; ++j) {
        captions << image_id << '\t' << lang << '\t';
        for (int64_t pos = 0; pos < code_len; ++pos) {
          if (pos) captions << ' ';
          captions << lang << '_' << code[static_cast<size_t>(pos)];
        }
        for (int64_t extra = 0; extra < j; ++extra) captions << ' ' << lang << "_0";
        captions << '\n';
      }
    }
    table.ids.push_back(image_id);
  }
  if (!captions.flush()) fail_runtime("write failed for ", captions_path);

  write_feature_table(make_feature_table(std::move(table.ids), std::move(table.matrix)),
                      ids_path, features_path);
}

}  // namespace mmpivot
