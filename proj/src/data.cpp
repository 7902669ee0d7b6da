#include "data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bytesio.hpp"
#include "error.hpp"

namespace mmpivot {

Vocabulary::Vocabulary(int language, std::vector<std::string> id_to_token)
    : language_(language), id_to_token_(std::move(id_to_token)) {
  if (id_to_token_.size() < 2 || id_to_token_[0] != kPadToken || id_to_token_[1] != kUnkToken)
    fail_invalid("vocabulary must start with ", kPadToken, ", ", kUnkToken);
  for (size_t i = 0; i < id_to_token_.size(); ++i) {
    const auto [it, fresh] = token_to_id_.emplace(id_to_token_[i], static_cast<int32_t>(i));
    if (!fresh) fail_invalid("duplicate vocabulary token '", id_to_token_[i], "'");
  }
}

int32_t Vocabulary::id_of(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(int32_t id) const {
  if (id < 0 || id >= size()) fail_invalid("token id ", id, " out of range [0, ", size(), ")");
  return id_to_token_[static_cast<size_t>(id)];
}

int64_t FeatureTable::row_of(const std::string& image_id) const {
  const auto it = index.find(image_id);
  return it == index.end() ? -1 : it->second;
}

FeatureTable make_feature_table(std::vector<std::string> ids, Tensor matrix) {
  if (matrix.rank() != 2) fail_invalid("feature matrix must be rank 2");
  if (static_cast<int64_t>(ids.size()) != matrix.rows())
    fail_invalid("feature table has ", ids.size(), " ids but ", matrix.rows(), " rows");
  if (!matrix.all_finite()) fail_invalid("feature table contains a non-finite value");
  FeatureTable table{std::move(ids), std::move(matrix), {}};
  for (size_t j = 0; j < table.ids.size(); ++j) {
    if (table.ids[j].empty()) fail_invalid("empty image id at feature row ", j);
    const auto [it, fresh] = table.index.emplace(table.ids[j], static_cast<int64_t>(j));
    if (!fresh) fail_invalid("duplicate image id '", table.ids[j], "' in feature table");
  }
  return table;
}

const char* epoch_policy_name(EpochPolicy policy) {
  return policy == EpochPolicy::kPerImage ? "per_image" : "per_caption";
}

EpochPolicy parse_epoch_policy(const std::string& text) {
  if (text == "per_image") return EpochPolicy::kPerImage;
  if (text == "per_caption") return EpochPolicy::kPerCaption;
  fail_invalid("unknown epoch policy '", text, "' (expected per_image or per_caption)");
}

namespace {

// Strips one trailing carriage return so CRLF files load like LF files.
std::string chomp(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    const size_t at = line.find(sep, start);
    if (at == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, at - start));
    start = at + 1;
  }
}

std::vector<std::string> split_tokens(const std::string& text, const std::string& path,
                                      size_t line_no) {
  std::vector<std::string> tokens = split_fields(text, ' ');
  for (const std::string& t : tokens)
    if (t.empty())
      fail_invalid(path, ":", line_no, ": empty token");
  return tokens;
}

std::ifstream open_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_invalid("cannot open ", path);
  return in;
}

}  // namespace

std::vector<CaptionRecord> load_captions(const std::string& path,
                                         const std::vector<std::string>& languages) {
  std::ifstream in = open_text(path);
  std::vector<CaptionRecord> records;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = chomp(std::move(line));
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line, '\t');
    if (fields.size() != 3)
      fail_invalid(path, ":", line_no, ": expected 3 tab-separated fields, got ", fields.size());
    if (fields[0].empty()) fail_invalid(path, ":", line_no, ": empty image id");
    const auto lang = std::find(languages.begin(), languages.end(), fields[1]);
    if (lang == languages.end())
      fail_invalid(path, ":", line_no, ": unknown language '", fields[1], "'");
    records.push_back({fields[0], static_cast<int>(lang - languages.begin()),
                       split_tokens(fields[2], path, line_no)});
  }
  return records;
}

Vocabulary build_vocabulary(const std::vector<CaptionRecord>& records, int language,
                            int64_t min_count) {
  if (min_count < 1) fail_invalid("min_count must be >= 1, got ", min_count);
  std::map<std::string, int64_t> counts;
  for (const CaptionRecord& r : records)
    if (r.language == language)
      for (const std::string& t : r.tokens) ++counts[t];
  if (counts.empty()) fail_invalid("empty corpus for language ", language);

  std::vector<std::pair<std::string, int64_t>> kept;
  for (const auto& [token, count] : counts)
    if (count >= min_count) kept.emplace_back(token, count);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  std::vector<std::string> id_to_token{kPadToken, kUnkToken};
  id_to_token.reserve(kept.size() + 2);
  for (auto& [token, count] : kept) id_to_token.push_back(std::move(token));
  return Vocabulary(language, std::move(id_to_token));
}

std::vector<int32_t> encode_tokens(const Vocabulary& vocab,
                                   const std::vector<std::string>& tokens) {
  if (tokens.empty()) fail_invalid("cannot encode an empty token sequence");
  std::vector<int32_t> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(vocab.id_of(t));
  return ids;
}

namespace {

constexpr char kFeatureMagic[4] = {'M', 'M', 'F', 'E'};
constexpr uint32_t kFeatureVersion = 1;

}  // namespace

FeatureTable load_feature_table(const std::string& ids_path, const std::string& bin_path) {
  std::ifstream ids_in = open_text(ids_path);
  std::vector<std::string> ids;
  std::string line;
  size_t line_no = 0;
  while (std::getline(ids_in, line)) {
    ++line_no;
    line = chomp(std::move(line));
    if (line.empty()) fail_invalid(ids_path, ":", line_no, ": empty image id");
    ids.push_back(std::move(line));
  }

  const std::vector<unsigned char> bytes = read_all_bytes(bin_path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0)
    fail_invalid(bin_path, ": not a feature file (bad magic)");
  const uint32_t version = load_u32le(bytes.data() + 4);
  if (version != kFeatureVersion)
    fail_invalid(bin_path, ": unsupported feature file version ", version);
  const uint32_t n_rows = load_u32le(bytes.data() + 8);
  const uint32_t dim = load_u32le(bytes.data() + 12);
  if (n_rows == 0 || dim == 0)
    fail_invalid(bin_path, ": feature table must be non-empty (", n_rows, " x ", dim, ")");
  if (ids.size() != n_rows)
    fail_invalid(bin_path, ": header says ", n_rows, " rows but ", ids_path, " has ", ids.size(),
                 " ids");
  const size_t payload = size_t(n_rows) * dim * 4;
  if (bytes.size() != 16 + payload)
    fail_invalid(bin_path, ": expected ", 16 + payload, " bytes, got ", bytes.size());

  Tensor matrix(Shape{int64_t(n_rows), int64_t(dim)});
  for (int64_t i = 0; i < matrix.size(); ++i)
    matrix[i] = load_f32le(bytes.data() + 16 + size_t(i) * 4);
  if (!matrix.all_finite()) fail_invalid(bin_path, ": feature table contains a non-finite value");
  return make_feature_table(std::move(ids), std::move(matrix));
}

void write_feature_table(const FeatureTable& table, const std::string& ids_path,
                         const std::string& bin_path) {
  if (table.rows() == 0) fail_invalid("refusing to write an empty feature table");
  std::ofstream ids_out(ids_path);
  if (!ids_out) fail_invalid("cannot write ", ids_path);
  for (const std::string& id : table.ids) ids_out << id << '\n';
  if (!ids_out.flush()) fail_runtime("write failed for ", ids_path);

  std::vector<unsigned char> bytes(16 + size_t(table.matrix.size()) * 4);
  std::memcpy(bytes.data(), kFeatureMagic, 4);
  store_u32le(kFeatureVersion, bytes.data() + 4);
  store_u32le(static_cast<uint32_t>(table.rows()), bytes.data() + 8);
  store_u32le(static_cast<uint32_t>(table.dim()), bytes.data() + 12);
  for (int64_t i = 0; i < table.matrix.size(); ++i)
    store_f32le(table.matrix[i], bytes.data() + 16 + size_t(i) * 4);
  write_all_bytes(bin_path, bytes);
}

std::vector<StsPair> load_sts_pairs(const std::string& path) {
  std::ifstream in = open_text(path);
  std::vector<StsPair> pairs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = chomp(std::move(line));
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line, '\t');
    if (fields.size() != 3)
      fail_invalid(path, ":", line_no, ": expected 3 tab-separated fields, got ", fields.size());
    StsPair pair;
    pair.tokens1 = split_tokens(fields[0], path, line_no);
    pair.tokens2 = split_tokens(fields[1], path, line_no);
    size_t used = 0;
    try {
      pair.gold = std::stod(fields[2], &used);
    } catch (const std::exception&) {
      fail_invalid(path, ":", line_no, ": bad gold score '", fields[2], "'");
    }
    if (used != fields[2].size() || !std::isfinite(pair.gold))
      fail_invalid(path, ":", line_no, ": bad gold score '", fields[2], "'");
    if (pair.gold < 0.0 || pair.gold > 5.0)
      fail_invalid(path, ":", line_no, ": gold score ", fields[2], " outside [0, 5]");
    pairs.push_back(std::move(pair));
  }
  if (pairs.empty()) fail_invalid(path, ": no sentence pairs");
  return pairs;
}

Dataset bind_dataset(std::vector<CaptionRecord> records, FeatureTable features,
                     int n_languages) {
  if (n_languages < 1) fail_invalid("need at least one language, got ", n_languages);
  Dataset ds;
  ds.n_languages = n_languages;

  // per feature row, per language: record indices
  std::vector<std::vector<std::vector<int64_t>>> by_row(
      static_cast<size_t>(features.rows()),
      std::vector<std::vector<int64_t>>(static_cast<size_t>(n_languages)));
  for (size_t r = 0; r < records.size(); ++r) {
    const CaptionRecord& rec = records[r];
    if (rec.language < 0 || rec.language >= n_languages)
      fail_invalid("caption for '", rec.image_id, "' has language index ", rec.language,
                   ", expected [0, ", n_languages, ")");
    if (rec.tokens.empty()) fail_invalid("caption for '", rec.image_id, "' has no tokens");
    const int64_t row = features.row_of(rec.image_id);
    if (row < 0)
      fail_invalid("caption references image '", rec.image_id, "' absent from the feature table");
    by_row[static_cast<size_t>(row)][static_cast<size_t>(rec.language)].push_back(
        static_cast<int64_t>(r));
  }

  for (int64_t row = 0; row < features.rows(); ++row) {
    const auto& langs = by_row[static_cast<size_t>(row)];
    const bool eligible = std::all_of(langs.begin(), langs.end(),
                                      [](const auto& v) { return !v.empty(); });
    if (!eligible) continue;
    ds.eligible_rows.push_back(row);
    ds.captions_of.push_back(langs);
  }

  ds.records = std::move(records);
  ds.features = std::move(features);
  return ds;
}

namespace {

void check_vocabs(const Dataset& dataset, const std::vector<Vocabulary>& vocabs) {
  if (static_cast<int>(vocabs.size()) != dataset.n_languages)
    fail_invalid("need ", dataset.n_languages, " vocabularies, got ", vocabs.size());
}

// Appends one aligned row per entry of `picks`; picks[j] = (eligible index,
// record index per language).
Batch assemble_batch(const Dataset& dataset, const std::vector<Vocabulary>& vocabs,
                     const std::vector<std::pair<int64_t, std::vector<int64_t>>>& picks) {
  const int64_t b = static_cast<int64_t>(picks.size());
  Batch batch;
  batch.image_rows = Tensor(Shape{b, dataset.features.dim()});
  batch.caption_ids.resize(static_cast<size_t>(dataset.n_languages));
  for (auto& per_lang : batch.caption_ids) per_lang.reserve(static_cast<size_t>(b));
  for (int64_t j = 0; j < b; ++j) {
    const auto& [e, rec_ids] = picks[static_cast<size_t>(j)];
    const int64_t row = dataset.eligible_rows[static_cast<size_t>(e)];
    const auto src = dataset.features.matrix.row_span(row);
    std::copy(src.begin(), src.end(), batch.image_rows.row_span(j).begin());
    batch.image_ids.push_back(dataset.features.ids[static_cast<size_t>(row)]);
    for (int k = 0; k < dataset.n_languages; ++k) {
      const CaptionRecord& rec = dataset.records[static_cast<size_t>(rec_ids[static_cast<size_t>(k)])];
      batch.caption_ids[static_cast<size_t>(k)].push_back(
          encode_tokens(vocabs[static_cast<size_t>(k)], rec.tokens));
    }
  }
  return batch;
}

// One uniformly chosen caption per language; language 0 may be pinned by the
// per-caption epoch policy.
std::vector<int64_t> pick_captions(const Dataset& dataset, int64_t e, int64_t pinned_lang0,
                                   Rng& rng) {
  std::vector<int64_t> rec_ids(static_cast<size_t>(dataset.n_languages));
  const auto& langs = dataset.captions_of[static_cast<size_t>(e)];
  for (int k = 0; k < dataset.n_languages; ++k) {
    if (k == 0 && pinned_lang0 >= 0) {
      rec_ids[0] = pinned_lang0;
      continue;
    }
    const auto& options = langs[static_cast<size_t>(k)];
    rec_ids[static_cast<size_t>(k)] =
        options[rng.below(options.size())];
  }
  return rec_ids;
}

}  // namespace

Batch sample_minibatch(const Dataset& dataset, const std::vector<Vocabulary>& vocabs,
                       int64_t batch_size, Rng& rng) {
  check_vocabs(dataset, vocabs);
  if (batch_size < 2) fail_invalid("batch size must be >= 2, got ", batch_size);
  if (dataset.n_eligible() < batch_size)
    fail_invalid("only ", dataset.n_eligible(), " images have captions in every language, need ",
                 batch_size);

  std::vector<int64_t> order(static_cast<size_t>(dataset.n_eligible()));
  std::iota(order.begin(), order.end(), int64_t(0));
  for (int64_t j = 0; j < batch_size; ++j)
    std::swap(order[static_cast<size_t>(j)],
              order[static_cast<size_t>(j + int64_t(rng.below(uint64_t(dataset.n_eligible() - j))))]);

  std::vector<std::pair<int64_t, std::vector<int64_t>>> picks;
  picks.reserve(static_cast<size_t>(batch_size));
  for (int64_t j = 0; j < batch_size; ++j) {
    const int64_t e = order[static_cast<size_t>(j)];
    picks.emplace_back(e, pick_captions(dataset, e, -1, rng));
  }
  return assemble_batch(dataset, vocabs, picks);
}

std::vector<Batch> epoch_batches(const Dataset& dataset, const std::vector<Vocabulary>& vocabs,
                                 int64_t batch_size, EpochPolicy policy, Rng& rng) {
  check_vocabs(dataset, vocabs);
  if (batch_size < 2) fail_invalid("batch size must be >= 2, got ", batch_size);
  if (dataset.n_eligible() < batch_size)
    fail_invalid("only ", dataset.n_eligible(), " images have captions in every language, need ",
                 batch_size);

  std::vector<Batch> batches;
  const auto shuffle = [&rng](std::vector<int64_t>& v) {
    for (size_t j = 0; j + 1 < v.size(); ++j)
      std::swap(v[j], v[j + rng.below(v.size() - j)]);
  };

  if (policy == EpochPolicy::kPerImage) {
    std::vector<int64_t> order(static_cast<size_t>(dataset.n_eligible()));
    std::iota(order.begin(), order.end(), int64_t(0));
    shuffle(order);
    for (int64_t at = 0; at + batch_size <= dataset.n_eligible(); at += batch_size) {
      std::vector<std::pair<int64_t, std::vector<int64_t>>> picks;
      picks.reserve(static_cast<size_t>(batch_size));
      for (int64_t j = 0; j < batch_size; ++j) {
        const int64_t e = order[static_cast<size_t>(at + j)];
        picks.emplace_back(e, pick_captions(dataset, e, -1, rng));
      }
      batches.push_back(assemble_batch(dataset, vocabs, picks));
    }
    return batches;
  }

  // Per-caption: keep drawing rounds until too few images still have an
  // unvisited first-language caption to fill a batch.
  std::vector<std::vector<int64_t>> remaining(static_cast<size_t>(dataset.n_eligible()));
  for (int64_t e = 0; e < dataset.n_eligible(); ++e)
    remaining[static_cast<size_t>(e)] = dataset.captions_of[static_cast<size_t>(e)][0];
  while (true) {
    std::vector<int64_t> active;
    for (int64_t e = 0; e < dataset.n_eligible(); ++e)
      if (!remaining[static_cast<size_t>(e)].empty()) active.push_back(e);
    if (static_cast<int64_t>(active.size()) < batch_size) break;
    shuffle(active);
    for (int64_t at = 0; at + batch_size <= static_cast<int64_t>(active.size());
         at += batch_size) {
      std::vector<std::pair<int64_t, std::vector<int64_t>>> picks;
      picks.reserve(static_cast<size_t>(batch_size));
      for (int64_t j = 0; j < batch_size; ++j) {
        const int64_t e = active[static_cast<size_t>(at + j)];
        auto& pool = remaining[static_cast<size_t>(e)];
        const size_t slot = static_cast<size_t>(rng.below(pool.size()));
        const int64_t rec = pool[slot];
        pool[slot] = pool.back();
        pool.pop_back();
        picks.emplace_back(e, pick_captions(dataset, e, rec, rng));
      }
      batches.push_back(assemble_batch(dataset, vocabs, picks));
    }
  }
  return batches;
}

}  // namespace mmpivot
