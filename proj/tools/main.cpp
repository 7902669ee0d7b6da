// Command-line front end. Talks to the engine exclusively through the C
// API; reports go to files and stdout, logs to stderr.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mmpivot.h"

namespace {

struct OwnedString {
  char* text = nullptr;
  ~OwnedString() { mmp_string_free(text); }
};

struct ModelHandle {
  mmp_model* model = nullptr;
  ~ModelHandle() { mmp_model_close(model); }
};

int report_failure(mmp_status status) {
  std::fprintf(stderr, "error: %s\n", mmp_last_error());
  return static_cast<int>(status);
}

// 0 on success, otherwise the exit code to return
int write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) {
    std::fprintf(stderr, "error: cannot write %s\n", path.c_str());
    return 2;
  }
  out << content;
  if (!out.flush()) {
    std::fprintf(stderr, "error: write failed for %s\n", path.c_str());
    return 1;
  }
  return 0;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream stream(text);
  std::string part;
  while (std::getline(stream, part, ',')) parts.push_back(part);
  return parts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bilingual image-sentence embedding engine"};
  app.require_subcommand(1);

  std::string train_config;
  std::vector<std::string> train_overrides;
  std::string train_out;
  int train_threads = 1;
  CLI::App* train = app.add_subcommand("train", "train a model from a JSON run config");
  train->add_option("--config", train_config, "run config JSON (defaults apply when omitted)");
  train->add_option("--set", train_overrides, "config override, key=value; repeatable");
  train->add_option("--out", train_out, "output directory, overrides the config's output_dir");
  train->add_option("--threads", train_threads, "worker threads; 1 is bit-deterministic");

  std::string eval_ckpt, eval_captions, eval_ids, eval_features, eval_out;
  int eval_threads = 1;
  CLI::App* eval = app.add_subcommand("eval", "ranking evaluation on a captioned image split");
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--captions", eval_captions, "caption TSV")->required();
  eval->add_option("--ids", eval_ids, "image id list")->required();
  eval->add_option("--features", eval_features, "image feature matrix")->required();
  eval->add_option("--out", eval_out, "report directory; default: the checkpoint's directory");
  eval->add_option("--threads", eval_threads, "worker threads; 1 is bit-deterministic");

  std::string sts_ckpt, sts_pairs, sts_language, sts_out;
  int sts_threads = 1;
  CLI::App* sts = app.add_subcommand("sts", "sentence-pair correlation against gold scores");
  sts->add_option("--checkpoint", sts_ckpt, "model checkpoint")->required();
  sts->add_option("--pairs", sts_pairs, "pairs TSV: tokens TAB tokens TAB gold")->required();
  sts->add_option("--language", sts_language, "language tag of the pairs")->required();
  sts->add_option("--out", sts_out, "report directory; default: the checkpoint's directory");
  sts->add_option("--threads", sts_threads, "worker threads; 1 is bit-deterministic");

  mmp_synth_spec spec;
  mmp_synth_spec_defaults(&spec);
  std::string synth_out, synth_prefix = "img", synth_languages = "en,de";
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic bilingual corpus");
  synth->add_option("--out", synth_out, "directory for captions.tsv, image_ids.txt, features.bin")
      ->required();
  synth->add_option("--images", spec.n_images, "number of images");
  synth->add_option("--captions-per-language", spec.captions_per_language,
                    "caption variants per image and language");
  synth->add_option("--vocab-size", spec.vocab_size, "digit tokens per language");
  synth->add_option("--d-img", spec.d_img, "image feature dimension");
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_option("--noise", spec.noise_scale, "feature jitter scale");
  synth->add_option("--classes", spec.n_classes, "latent classes; 0 = one per image");
  synth->add_option("--prefix", synth_prefix, "image id prefix");
  synth->add_option("--languages", synth_languages, "comma-separated language tags");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*train) {
    std::vector<const char*> overrides;
    for (const std::string& item : train_overrides) overrides.push_back(item.c_str());
    OwnedString checkpoint;
    const mmp_status status =
        mmp_train(train_config.empty() ? nullptr : train_config.c_str(), overrides.data(),
                  overrides.size(), train_out.empty() ? nullptr : train_out.c_str(),
                  train_threads, &checkpoint.text);
    if (status != MMP_OK) return report_failure(status);
    std::printf("%s\n", checkpoint.text);
    return 0;
  }

  if (*eval) {
    ModelHandle model;
    mmp_status status = mmp_model_open(eval_ckpt.c_str(), &model.model);
    if (status != MMP_OK) return report_failure(status);
    OwnedString json, table;
    status = mmp_eval_ranking(model.model, eval_captions.c_str(), eval_ids.c_str(),
                              eval_features.c_str(), eval_threads, &json.text, &table.text);
    if (status != MMP_OK) return report_failure(status);
    std::string dir =
        eval_out.empty() ? std::filesystem::path(eval_ckpt).parent_path().string() : eval_out;
    if (dir.empty()) dir = ".";
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (const int code = write_file(dir + "/ranking_report.json", json.text)) return code;
    if (const int code = write_file(dir + "/ranking_report.txt", table.text)) return code;
    std::fputs(table.text, stdout);
    return 0;
  }

  if (*sts) {
    ModelHandle model;
    mmp_status status = mmp_model_open(sts_ckpt.c_str(), &model.model);
    if (status != MMP_OK) return report_failure(status);
    OwnedString json;
    status = mmp_eval_sts(model.model, sts_pairs.c_str(), sts_language.c_str(), sts_threads,
                          &json.text);
    if (status != MMP_OK) return report_failure(status);
    std::string dir =
        sts_out.empty() ? std::filesystem::path(sts_ckpt).parent_path().string() : sts_out;
    if (dir.empty()) dir = ".";
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (const int code = write_file(dir + "/sts_report.json", json.text)) return code;
    std::fputs(json.text, stdout);
    return 0;
  }

  if (*synth) {
    const std::vector<std::string> tags = split_commas(synth_languages);
    if (tags.empty()) {
      std::fprintf(stderr, "error: --languages must name at least one language\n");
      return 2;
    }
    std::vector<const char*> tag_ptrs;
    for (const std::string& tag : tags) tag_ptrs.push_back(tag.c_str());
    spec.id_prefix = synth_prefix.c_str();
    spec.languages = tag_ptrs.data();
    spec.n_languages = tag_ptrs.size();

    std::error_code ec;
    std::filesystem::create_directories(synth_out, ec);
    const std::string captions = synth_out + "/captions.tsv";
    const std::string ids = synth_out + "/image_ids.txt";
    const std::string features = synth_out + "/features.bin";
    const mmp_status status =
        mmp_synth_generate(&spec, captions.c_str(), ids.c_str(), features.c_str());
    if (status != MMP_OK) return report_failure(status);
    std::printf("%s\n%s\n%s\n", captions.c_str(), ids.c_str(), features.c_str());
    return 0;
  }

  return 2;  // unreachable: a subcommand is required
}
