#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "bytesio.hpp"
#include "config_json.hpp"
#include "error.hpp"
#include "parallel.hpp"

namespace mmpivot {

const char* model_kind_name(ModelKind kind) {
  return kind == ModelKind::kPivot ? "pivot" : "parallel";
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "pivot") return ModelKind::kPivot;
  if (text == "parallel") return ModelKind::kParallel;
  fail_invalid("unknown model kind '", text, "' (expected pivot or parallel)");
}

void EmbedConfig::validate() const {
  if (embed_dim <= 0) fail_invalid("embed_dim must be positive, got ", embed_dim);
  if (word_dim <= 0) fail_invalid("word_dim must be positive, got ", word_dim);
  if (!std::isfinite(margin) || margin <= 0) fail_invalid("margin must be > 0, got ", margin);
  if (!std::isfinite(learning_rate) || learning_rate <= 0)
    fail_invalid("learning_rate must be > 0, got ", learning_rate);
  if (batch_size < 2) fail_invalid("batch_size must be >= 2, got ", batch_size);
  if (max_epochs < 0) fail_invalid("max_epochs must be >= 0, got ", max_epochs);
  if (patience < 1) fail_invalid("patience must be >= 1, got ", patience);
  if (!std::isfinite(grad_clip) || grad_clip <= 0)
    fail_invalid("grad_clip must be > 0, got ", grad_clip);
  if (d_img <= 0) fail_invalid("d_img must be positive, got ", d_img);
}

namespace {

template <typename Params, typename Fn>
void visit_params(Params& params, const Fn& fn) {
  for (size_t k = 0; k < params.languages.size(); ++k) {
    auto& lp = params.languages[k];
    const std::string prefix = concat("lang", k, ".");
    fn(prefix + "embedding", lp.embedding);
    fn(prefix + "gru.w_z", lp.gru.w_z);
    fn(prefix + "gru.w_r", lp.gru.w_r);
    fn(prefix + "gru.w_h", lp.gru.w_h);
    fn(prefix + "gru.u_z", lp.gru.u_z);
    fn(prefix + "gru.u_r", lp.gru.u_r);
    fn(prefix + "gru.u_h", lp.gru.u_h);
    fn(prefix + "gru.b_z", lp.gru.b_z);
    fn(prefix + "gru.b_r", lp.gru.b_r);
    fn(prefix + "gru.b_h", lp.gru.b_h);
  }
  fn("image_projection", params.image_projection);
}

ModelParams allocate_params(const EmbedConfig& config, const std::vector<int32_t>& vocab_sizes) {
  const int64_t n = config.embed_dim;
  const int64_t wd = config.word_dim;
  ModelParams params;
  for (int32_t v : vocab_sizes) {
    if (v < 2) fail_invalid("vocabulary size must be >= 2, got ", v);
    LanguageParams lp;
    lp.embedding = Tensor(Shape{int64_t(v), wd});
    lp.gru.w_z = Tensor(Shape{wd, n});
    lp.gru.w_r = Tensor(Shape{wd, n});
    lp.gru.w_h = Tensor(Shape{wd, n});
    lp.gru.u_z = Tensor(Shape{n, n});
    lp.gru.u_r = Tensor(Shape{n, n});
    lp.gru.u_h = Tensor(Shape{n, n});
    lp.gru.b_z = Tensor(Shape{1, n});
    lp.gru.b_r = Tensor(Shape{1, n});
    lp.gru.b_h = Tensor(Shape{1, n});
    params.languages.push_back(std::move(lp));
  }
  params.image_projection = Tensor(Shape{config.d_img, n});
  return params;
}

int32_t node_of(const std::map<std::string, int32_t>& param_nodes, const std::string& name) {
  const auto it = param_nodes.find(name);
  if (it == param_nodes.end()) fail_invalid("missing parameter node '", name, "'");
  return it->second;
}

}  // namespace

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_params(*this, fn);
}

void ModelParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_params(*this, fn);
}

ModelParams init_params(const EmbedConfig& config, const std::vector<int32_t>& vocab_sizes,
                        Rng& rng) {
  config.validate();
  if (vocab_sizes.empty()) fail_invalid("need at least one vocabulary");
  ModelParams params = allocate_params(config, vocab_sizes);
  const double img_bound = std::sqrt(6.0 / double(config.d_img + config.embed_dim));
  params.for_each([&](const std::string& name, Tensor& t) {
    const double bound = name == "image_projection" ? img_bound : 0.08;
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<float>(rng.uniform(-bound, bound));
  });
  for (LanguageParams& lp : params.languages) {
    auto pad = lp.embedding.row_span(kPadId);
    std::fill(pad.begin(), pad.end(), 0.0f);
  }
  return params;
}

std::map<std::string, int32_t> declare_params(Tape& tape, const ModelParams& params) {
  std::map<std::string, int32_t> nodes;
  params.for_each([&](const std::string& name, const Tensor& t) {
    nodes.emplace(name, tape.input(name, t.rows(), t.cols()));
  });
  return nodes;
}

Bindings param_bindings(const ModelParams& params) {
  Bindings bindings;
  params.for_each([&](const std::string& name, const Tensor& t) { bindings.emplace(name, t); });
  return bindings;
}

int32_t build_sentence_batch(Tape& tape, const std::map<std::string, int32_t>& param_nodes,
                             const EmbedConfig& config, int lang,
                             const std::vector<std::vector<int32_t>>& caption_ids) {
  if (caption_ids.empty()) fail_invalid("sentence batch is empty");
  const std::string prefix = concat("lang", lang, ".");
  const int32_t emb = node_of(param_nodes, prefix + "embedding");
  const int32_t w_z = node_of(param_nodes, prefix + "gru.w_z");
  const int32_t w_r = node_of(param_nodes, prefix + "gru.w_r");
  const int32_t w_h = node_of(param_nodes, prefix + "gru.w_h");
  const int32_t u_z = node_of(param_nodes, prefix + "gru.u_z");
  const int32_t u_r = node_of(param_nodes, prefix + "gru.u_r");
  const int32_t u_h = node_of(param_nodes, prefix + "gru.u_h");
  const int32_t b_z = node_of(param_nodes, prefix + "gru.b_z");
  const int32_t b_r = node_of(param_nodes, prefix + "gru.b_r");
  const int32_t b_h = node_of(param_nodes, prefix + "gru.b_h");

  const int64_t vocab_rows = tape.node(emb).shape[0];
  const int64_t b = static_cast<int64_t>(caption_ids.size());
  const int64_t n = config.embed_dim;
  int64_t t_max = 0;
  int64_t t_full = std::numeric_limits<int64_t>::max();  // steps where no row is finished
  for (const auto& ids : caption_ids) {
    if (ids.empty()) fail_invalid("cannot encode an empty token sequence");
    for (int32_t id : ids)
      if (id < 0 || id >= vocab_rows)
        fail_invalid("token id ", id, " out of vocabulary range [0, ", vocab_rows, ")");
    t_max = std::max(t_max, static_cast<int64_t>(ids.size()));
    t_full = std::min(t_full, static_cast<int64_t>(ids.size()));
  }

  const auto len = [&](int64_t j) {
    return static_cast<int64_t>(caption_ids[static_cast<size_t>(j)].size());
  };

  int32_t h = tape.constant(Tensor(Shape{b, n}), "h0");
  const int32_t ones = tape.constant(Tensor::full(Shape{b, n}, 1.0f), "ones");
  for (int64_t t = 0; t < t_max; ++t) {
    std::vector<int64_t> rows(static_cast<size_t>(b));
    for (int64_t j = 0; j < b; ++j)
      rows[static_cast<size_t>(j)] =
          t < len(j) ? caption_ids[static_cast<size_t>(j)][static_cast<size_t>(t)] : kPadId;
    const int32_t x = tape.gather_rows(emb, std::move(rows));
    const int32_t z =
        tape.sigmoid(tape.add_rowvec(tape.add(tape.matmul(x, w_z), tape.matmul(h, u_z)), b_z));
    const int32_t r =
        tape.sigmoid(tape.add_rowvec(tape.add(tape.matmul(x, w_r), tape.matmul(h, u_r)), b_r));
    const int32_t cand = tape.tanh(tape.add_rowvec(
        tape.add(tape.matmul(x, w_h), tape.matmul(tape.mul(r, h), u_h)), b_h));
    const int32_t h_new = tape.add(tape.mul(tape.sub(ones, z), h), tape.mul(z, cand));
    if (t < t_full) {
      h = h_new;
      continue;
    }
    // Rows whose sentence already ended keep their final state untouched, so
    // the batch's padding length cannot leak into any embedding.
    Tensor advance(Shape{b, n});
    Tensor keep(Shape{b, n});
    for (int64_t j = 0; j < b; ++j) {
      const float active = t < len(j) ? 1.0f : 0.0f;
      auto adv = advance.row_span(j);
      auto kp = keep.row_span(j);
      std::fill(adv.begin(), adv.end(), active);
      std::fill(kp.begin(), kp.end(), 1.0f - active);
    }
    h = tape.add(tape.mul(tape.constant(std::move(advance), "advance"), h_new),
                 tape.mul(tape.constant(std::move(keep), "keep"), h));
  }
  return config.similarity_mode == SimilarityMode::kSymmetric ? tape.l2norm_rows(h)
                                                              : tape.abs(h);
}

int32_t build_image_batch(Tape& tape, const std::map<std::string, int32_t>& param_nodes,
                          const EmbedConfig& config, Tensor image_rows) {
  if (image_rows.cols() != config.d_img)
    fail_invalid("image features are ", image_rows.cols(), "-wide, model expects ",
                 config.d_img);
  const int32_t w_img = node_of(param_nodes, "image_projection");
  const int32_t imgs = tape.constant(std::move(image_rows), "image_rows");
  const int32_t proj = tape.matmul(imgs, w_img);
  return config.similarity_mode == SimilarityMode::kSymmetric ? tape.l2norm_rows(proj)
                                                              : tape.abs(proj);
}

namespace {

constexpr int64_t kEncodeChunk = 256;

// Runs fn(begin, end) over [0, total) in fixed-size chunks, possibly on
// several threads; each chunk writes disjoint rows of the caller's output.
template <typename Fn>
void for_chunks(int64_t total, unsigned threads, const Fn& fn) {
  const int64_t n_chunks = (total + kEncodeChunk - 1) / kEncodeChunk;
  parallel_for(n_chunks, threads, [&](int64_t cb, int64_t ce) {
    for (int64_t c = cb; c < ce; ++c)
      fn(c * kEncodeChunk, std::min(total, (c + 1) * kEncodeChunk));
  });
}

}  // namespace

Tensor encode_sentences(const ModelParams& params, const EmbedConfig& config, int lang,
                        const std::vector<std::vector<int32_t>>& caption_ids,
                        unsigned threads) {
  if (lang < 0 || lang >= static_cast<int>(params.languages.size()))
    fail_invalid("language index ", lang, " out of range [0, ", params.languages.size(), ")");
  if (caption_ids.empty()) fail_invalid("sentence batch is empty");
  const Bindings bindings = param_bindings(params);
  Tensor out(Shape{static_cast<int64_t>(caption_ids.size()), config.embed_dim});
  for_chunks(out.rows(), threads, [&](int64_t begin, int64_t end) {
    Tape tape;
    const auto nodes = declare_params(tape, params);
    const std::vector<std::vector<int32_t>> chunk(caption_ids.begin() + begin,
                                                  caption_ids.begin() + end);
    const int32_t top = build_sentence_batch(tape, nodes, config, lang, chunk);
    const auto values = tape_forward<float>(tape, bindings);
    const Tensor& emb = values[static_cast<size_t>(top)];
    for (int64_t j = begin; j < end; ++j) {
      const auto src = emb.row_span(j - begin);
      std::copy(src.begin(), src.end(), out.row_span(j).begin());
    }
  });
  return out;
}

std::vector<float> encode_sentence(const ModelParams& params, const EmbedConfig& config,
                                   int lang, const std::vector<int32_t>& ids) {
  const Tensor batch = encode_sentences(params, config, lang, {ids});
  const auto row = batch.row_span(0);
  return std::vector<float>(row.begin(), row.end());
}

Tensor encode_images(const ModelParams& params, const EmbedConfig& config,
                     const Tensor& image_rows, unsigned threads) {
  if (!image_rows.all_finite()) fail_invalid("image features contain a non-finite value");
  const Bindings bindings = param_bindings(params);
  Tensor out(Shape{image_rows.rows(), config.embed_dim});
  for_chunks(out.rows(), threads, [&](int64_t begin, int64_t end) {
    Tensor chunk(Shape{end - begin, image_rows.cols()});
    for (int64_t j = begin; j < end; ++j) {
      const auto src = image_rows.row_span(j);
      std::copy(src.begin(), src.end(), chunk.row_span(j - begin).begin());
    }
    Tape tape;
    const auto nodes = declare_params(tape, params);
    const int32_t top = build_image_batch(tape, nodes, config, std::move(chunk));
    const auto values = tape_forward<float>(tape, bindings);
    const Tensor& emb = values[static_cast<size_t>(top)];
    for (int64_t j = begin; j < end; ++j) {
      const auto src = emb.row_span(j - begin);
      std::copy(src.begin(), src.end(), out.row_span(j).begin());
    }
  });
  return out;
}

std::vector<float> encode_image(const ModelParams& params, const EmbedConfig& config,
                                const std::vector<float>& feature) {
  const Tensor batch = encode_images(
      params, config, Tensor(Shape{1, static_cast<int64_t>(feature.size())}, feature));
  const auto row = batch.row_span(0);
  return std::vector<float>(row.begin(), row.end());
}

std::vector<float> normalize_embedding(std::vector<float> v, SimilarityMode mode) {
  if (mode == SimilarityMode::kAsymmetric) {
    for (float& x : v) x = std::abs(x);
    return v;
  }
  float acc = 0;
  for (float x : v) acc += x * x;
  const float norm = std::sqrt(acc);
  if (norm > 0)
    for (float& x : v) x /= norm;
  return v;
}

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'M', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

void check_bundle(const ModelBundle& bundle) {
  bundle.config.validate();
  const size_t k = bundle.languages.size();
  if (k == 0) fail_invalid("checkpoint needs at least one language");
  if (bundle.vocabs.size() != k || bundle.params.languages.size() != k)
    fail_invalid("checkpoint languages/vocabularies/parameters disagree: ", k, "/",
                 bundle.vocabs.size(), "/", bundle.params.languages.size());
  for (size_t i = 0; i < k; ++i) {
    if (bundle.vocabs[i].language() != static_cast<int>(i))
      fail_invalid("vocabulary ", i, " is tagged for language ", bundle.vocabs[i].language());
    const Tensor& embedding = bundle.params.languages[i].embedding;
    if (embedding.rows() != bundle.vocabs[i].size())
      fail_invalid("language ", i, " has ", bundle.vocabs[i].size(), " tokens but ",
                   embedding.rows(), " embedding rows");
    for (float x : embedding.row_span(kPadId))
      if (x != 0.0f) fail_invalid("language ", i, " has a nonzero padding embedding row");
  }
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
  check_bundle(bundle);

  OrderedJson manifest;
  manifest["config"] = embed_config_to_json(bundle.config);
  manifest["languages"] = bundle.languages;
  OrderedJson vocab_list = OrderedJson::array();
  for (const Vocabulary& v : bundle.vocabs) vocab_list.push_back(v.id_to_token());
  manifest["vocabularies"] = std::move(vocab_list);

  OrderedJson tensors = OrderedJson::object();
  uint64_t offset = 0;
  bundle.params.for_each([&](const std::string& name, const Tensor& t) {
    OrderedJson entry;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["length"] = uint64_t(t.size()) * 4;
    tensors[name] = std::move(entry);
    offset += uint64_t(t.size()) * 4;
  });
  manifest["tensors"] = std::move(tensors);

  const std::string text = manifest.dump();
  std::vector<unsigned char> bytes(12 + text.size() + offset);
  std::memcpy(bytes.data(), kCheckpointMagic, 4);
  store_u32le(kCheckpointVersion, bytes.data() + 4);
  store_u32le(static_cast<uint32_t>(text.size()), bytes.data() + 8);
  std::memcpy(bytes.data() + 12, text.data(), text.size());

  unsigned char* blob = bytes.data() + 12 + text.size();
  bundle.params.for_each([&](const std::string&, const Tensor& t) {
    for (int64_t i = 0; i < t.size(); ++i) store_f32le(t[i], blob + size_t(i) * 4);
    blob += size_t(t.size()) * 4;
  });
  write_all_bytes(path, bytes);
}

ModelBundle load_checkpoint(const std::string& path) {
  const std::vector<unsigned char> bytes = read_all_bytes(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    fail_invalid(path, ": not a checkpoint file (bad magic)");
  const uint32_t version = load_u32le(bytes.data() + 4);
  if (version != kCheckpointVersion)
    fail_invalid(path, ": unsupported checkpoint version ", version);
  const uint32_t manifest_len = load_u32le(bytes.data() + 8);
  if (bytes.size() < size_t(12) + manifest_len) fail_invalid(path, ": truncated manifest");

  OrderedJson manifest;
  try {
    manifest = OrderedJson::parse(bytes.begin() + 12, bytes.begin() + 12 + manifest_len);
  } catch (const OrderedJson::exception& e) {
    fail_invalid(path, ": bad manifest: ", e.what());
  }

  ModelBundle bundle;
  try {
    bundle.config = embed_config_from_json(manifest.at("config"));
    bundle.languages = manifest.at("languages").get<std::vector<std::string>>();
    const OrderedJson& vocab_list = manifest.at("vocabularies");
    if (!vocab_list.is_array() || vocab_list.size() != bundle.languages.size())
      fail_invalid(path, ": vocabularies do not match languages");
    for (size_t k = 0; k < vocab_list.size(); ++k)
      bundle.vocabs.emplace_back(static_cast<int>(k),
                                 vocab_list[k].get<std::vector<std::string>>());
  } catch (const OrderedJson::exception& e) {
    fail_invalid(path, ": bad manifest: ", e.what());
  }
  bundle.config.validate();
  if (bundle.languages.empty()) fail_invalid(path, ": checkpoint declares no languages");

  std::vector<int32_t> vocab_sizes;
  for (const Vocabulary& v : bundle.vocabs) vocab_sizes.push_back(v.size());
  bundle.params = allocate_params(bundle.config, vocab_sizes);

  const unsigned char* blob = bytes.data() + 12 + manifest_len;
  const uint64_t blob_size = bytes.size() - 12 - manifest_len;
  const OrderedJson& tensors = manifest.at("tensors");
  uint64_t expected_offset = 0;
  size_t visited = 0;
  bundle.params.for_each([&](const std::string& name, Tensor& t) {
    if (!tensors.contains(name)) fail_invalid(path, ": manifest lacks tensor '", name, "'");
    const OrderedJson& entry = tensors.at(name);
    Shape shape;
    uint64_t offset = 0, length = 0;
    try {
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<uint64_t>();
      length = entry.at("length").get<uint64_t>();
    } catch (const OrderedJson::exception& e) {
      fail_invalid(path, ": bad manifest entry for '", name, "': ", e.what());
    }
    if (shape != t.shape())
      fail_invalid(path, ": tensor '", name, "' has shape ", shape_string(shape),
                   ", expected ", shape_string(t.shape()));
    if (length != uint64_t(t.size()) * 4 || offset != expected_offset ||
        offset + length > blob_size)
      fail_invalid(path, ": tensor '", name, "' does not fit the checkpoint blob");
    for (int64_t i = 0; i < t.size(); ++i) t[i] = load_f32le(blob + offset + size_t(i) * 4);
    if (!t.all_finite()) fail_invalid(path, ": tensor '", name, "' has non-finite entries");
    expected_offset += length;
    ++visited;
  });
  if (tensors.size() != visited)
    fail_invalid(path, ": manifest lists ", tensors.size(), " tensors, expected ", visited);
  if (blob_size != expected_offset)
    fail_invalid(path, ": blob is ", blob_size, " bytes, manifest expects ", expected_offset);

  for (const LanguageParams& lp : bundle.params.languages)
    for (float x : lp.embedding.row_span(kPadId))
      if (x != 0.0f) fail_invalid(path, ": padding embedding row is not zero");
  return bundle;
}

}  // namespace mmpivot
