#pragma once

// Text ingestion: tokenizer, vocabulary, CSV corpora, pretrained embedding
// files, fixed-length batching and the synthetic toy tasks.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "textnas/error.hpp"
#include "textnas/rng.hpp"

namespace textnas {

/// Lowercases ASCII letters, splits on whitespace and emits every ASCII
/// punctuation character as its own token. Other bytes pass through.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  Vocabulary() : tokens_{"<pad>", "<unk>"}, freq_{0, 0} {}

  /// Every token with frequency >= min_freq, ordered by descending frequency
  /// then lexicographically, after the two reserved ids.
  static Vocabulary build(const std::vector<std::vector<std::string>>& docs, std::size_t min_freq = 1) {
    std::map<std::string, std::size_t> counts;
    for (const auto& d : docs)
      for (const auto& t : d) ++counts[t];
    std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (auto& [tok, n] : items) {
      if (n < min_freq) continue;
      v.index_.emplace(tok, static_cast<std::int32_t>(v.tokens_.size()));
      v.tokens_.push_back(tok);
      v.freq_.push_back(n);
    }
    return v;
  }

  /// Rebuilds from an id-ordered token list (checkpoint metadata).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
      throw FormatError("vocabulary must start with <pad> and <unk>");
    }
    Vocabulary v;
    for (std::size_t i = 2; i < tokens.size(); ++i) {
      v.index_.emplace(tokens[i], static_cast<std::int32_t>(v.tokens_.size()));
      v.tokens_.push_back(tokens[i]);
      v.freq_.push_back(0);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  std::int32_t id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& tok) const { return index_.count(tok) > 0; }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t frequency(std::int32_t id) const { return freq_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::int32_t> encode(const std::vector<std::string>& toks) const {
    std::vector<std::int32_t> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(id(t));
    return ids;
  }

  std::vector<std::string> decode(const std::vector<std::int32_t>& ids) const {
    std::vector<std::string> out;
    for (auto i : ids) out.push_back(token(i));
    return out;
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> freq_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// ---------------------------------------------------------------------------
// CSV corpora

struct Sample {
  int label = 0;
  std::string text;
  std::string text_b;  // hypothesis for sentence pairs
};

struct Corpus {
  std::vector<Sample> samples;
  bool paired = false;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  int max_label() const {
    int m = -1;
    for (const auto& s : samples) m = std::max(m, s.label);
    return m;
  }

  std::vector<std::size_t> class_counts(std::size_t num_classes) const {
    std::vector<std::size_t> c(num_classes, 0);
    for (const auto& s : samples)
      if (s.label >= 0 && static_cast<std::size_t>(s.label) < num_classes) ++c[s.label];
    return c;
  }

  std::vector<std::vector<std::string>> token_docs() const {
    std::vector<std::vector<std::string>> docs;
    for (const auto& s : samples) {
      docs.push_back(tokenize(s.text));
      if (paired) docs.push_back(tokenize(s.text_b));
    }
    return docs;
  }
};

namespace detail {

/// RFC-4180 style records: quoted fields may contain separators, doubled
/// quotes and newlines. Returns records with their starting line number.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(std::istream& in) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t line = 1, i = 0;
  const std::size_t n = content.size();
  while (i < n) {
    const std::size_t start_line = line;
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false, was_quoted = false;
    bool end_of_record = false;
    while (i < n && !end_of_record) {
      const char c = content[i];
      if (quoted) {
        if (c == '"') {
          if (i + 1 < n && content[i + 1] == '"') {
            field.push_back('"');
            i += 2;
            continue;
          }
          quoted = false;
          ++i;
          if (i < n && content[i] != ',' && content[i] != '\n' && content[i] != '\r') {
            throw DataError("line " + std::to_string(line) + ": text after closing quote");
          }
          continue;
        }
        if (c == '\n') ++line;
        field.push_back(c);
        ++i;
        continue;
      }
      if (c == '"') {
        if (!field.empty()) throw DataError("line " + std::to_string(line) + ": stray quote in field");
        quoted = was_quoted = true;
        ++i;
      } else if (c == ',') {
        fields.push_back(std::move(field));
        field.clear();
        was_quoted = false;
        ++i;
      } else if (c == '\r' || c == '\n') {
        if (c == '\r' && i + 1 < n && content[i + 1] == '\n') ++i;
        ++i;
        ++line;
        end_of_record = true;
      } else {
        field.push_back(c);
        ++i;
      }
    }
    if (quoted) throw DataError("line " + std::to_string(start_line) + ": unterminated quoted field");
    fields.push_back(std::move(field));
    (void)was_quoted;
    const bool blank = fields.size() == 1 && fields[0].empty();
    if (!blank) rows.emplace_back(start_line, std::move(fields));
  }
  return rows;
}

}  // namespace detail

struct DatasetOptions {
  bool paired = false;
  std::optional<std::size_t> num_classes;  // labels checked against it when set
};

/// Reads `label,text` rows (or `label,text_a,text_b`). A first row whose
/// label column reads `label` is treated as a header.
inline Corpus load_dataset(const std::string& path, const DatasetOptions& opt = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path);
  Corpus corpus;
  corpus.paired = opt.paired;
  const std::size_t want = opt.paired ? 3 : 2;
  auto rows = detail::parse_csv(in);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& [line, f] = rows[r];
    if (r == 0 && !f.empty() && f[0] == "label") continue;
    if (f.size() != want) {
      throw DataError(path + ": line " + std::to_string(line) + ": expected " + std::to_string(want) +
                      " fields, found " + std::to_string(f.size()));
    }
    Sample s;
    std::size_t used = 0;
    long label = -1;
    try {
      label = std::stol(f[0], &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used == 0 || used != f[0].size() || label < 0) {
      throw DataError(path + ": line " + std::to_string(line) + ": bad label '" + f[0] + "'");
    }
    if (opt.num_classes && static_cast<std::size_t>(label) >= *opt.num_classes) {
      throw DataError(path + ": line " + std::to_string(line) + ": label " + std::to_string(label) +
                      " outside [0," + std::to_string(*opt.num_classes) + ")");
    }
    s.label = static_cast<int>(label);
    s.text = f[1];
    if (opt.paired) s.text_b = f[2];
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline void write_dataset(const std::string& path, const Corpus& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& s : c.samples) {
    out << s.label << ',' << csv_quote(s.text);
    if (c.paired) out << ',' << csv_quote(s.text_b);
    out << '\n';
  }
}

/// Deterministic held-out split: round(fraction * n) rows chosen by a seeded
/// shuffle move to the second corpus; both keep original row order.
inline std::pair<Corpus, Corpus> split_validation(const Corpus& c, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ParameterError("split fraction must be in (0,1)");
  std::vector<std::size_t> idx(c.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng(seed).substream("split");
  rng.shuffle(idx.begin(), idx.end());
  const auto n_valid = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(c.size())));
  std::vector<bool> held(c.size(), false);
  for (std::size_t i = 0; i < n_valid; ++i) held[idx[i]] = true;
  Corpus train, valid;
  train.paired = valid.paired = c.paired;
  for (std::size_t i = 0; i < c.size(); ++i) (held[i] ? valid : train).samples.push_back(c.samples[i]);
  return {train, valid};
}

// ---------------------------------------------------------------------------
// Embeddings

enum class RowSource { kPretrained, kRandomInit };

struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<double> values;  // rows x width
  std::vector<RowSource> source;

  std::size_t pretrained() const {
    return static_cast<std::size_t>(std::count(source.begin(), source.end(), RowSource::kPretrained));
  }
  std::size_t random_init() const { return rows - pretrained(); }

  /// key=value coverage lines. The pad row counts as random-init (it is zero).
  std::string report() const {
    std::ostringstream os;
    os << "vocab_size=" << rows << "\nemb_dim=" << width << "\npretrained=" << pretrained()
       << "\nrandom_init=" << random_init() << '\n';
    return os.str();
  }
};

/// Random U(-bound, bound) rows with a zero pad row.
inline EmbeddingMatrix random_embeddings(std::size_t rows, std::size_t width, Rng& rng, double bound = 0.05) {
  EmbeddingMatrix m;
  m.rows = rows;
  m.width = width;
  m.values.assign(rows * width, 0.0);
  m.source.assign(rows, RowSource::kRandomInit);
  for (std::size_t r = 1; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) m.values[r * width + c] = rng.uniform(-bound, bound);
  return m;
}

/// Whitespace-separated `token v1 ... vd` files, concatenated along the width
/// in path order. Tokens missing from a file get random values for that
/// file's segment; a row is tagged pretrained when any file covers it.
inline EmbeddingMatrix load_embeddings(const std::vector<std::string>& paths, const Vocabulary& vocab,
                                       Rng& rng, double bound = 0.05) {
  if (paths.empty()) throw ParameterError("load_embeddings needs at least one file");
  std::vector<std::unordered_map<std::int32_t, std::vector<double>>> found(paths.size());
  std::vector<std::size_t> widths(paths.size(), 0);
  for (std::size_t p = 0; p < paths.size(); ++p) {
    std::ifstream in(paths[p]);
    if (!in) throw DataError("cannot open embeddings " + paths[p]);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::istringstream ls(line);
      std::string tok;
      if (!(ls >> tok)) continue;
      std::vector<double> vec;
      std::string num;
      while (ls >> num) {
        try {
          std::size_t used = 0;
          vec.push_back(std::stod(num, &used));
          if (used != num.size()) throw std::invalid_argument(num);
        } catch (const std::logic_error&) {
          throw FormatError(paths[p] + ": line " + std::to_string(line_no) + ": bad number '" + num + "'");
        }
      }
      if (vec.empty()) throw FormatError(paths[p] + ": line " + std::to_string(line_no) + ": no values");
      if (widths[p] == 0) widths[p] = vec.size();
      if (vec.size() != widths[p]) {
        throw FormatError(paths[p] + ": line " + std::to_string(line_no) + ": width " +
                          std::to_string(vec.size()) + " differs from " + std::to_string(widths[p]));
      }
      if (vocab.contains(tok)) found[p].emplace(vocab.id(tok), std::move(vec));
    }
    if (widths[p] == 0) throw FormatError(paths[p] + ": empty embedding file");
  }
  EmbeddingMatrix m;
  m.rows = vocab.size();
  m.width = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  m.values.assign(m.rows * m.width, 0.0);
  m.source.assign(m.rows, RowSource::kRandomInit);
  for (std::size_t r = 1; r < m.rows; ++r) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < paths.size(); ++p) {
      auto it = found[p].find(static_cast<std::int32_t>(r));
      for (std::size_t c = 0; c < widths[p]; ++c) {
        m.values[r * m.width + off + c] = it != found[p].end() ? it->second[c] : rng.uniform(-bound, bound);
      }
      if (it != found[p].end()) m.source[r] = RowSource::kPretrained;
      off += widths[p];
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Batching

struct EncodedCorpus {
  std::vector<std::vector<std::int32_t>> ids;
  std::vector<std::vector<std::int32_t>> ids_b;
  std::vector<int> labels;
  bool paired = false;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  static EncodedCorpus from(const Corpus& c, const Vocabulary& v) {
    EncodedCorpus e;
    e.paired = c.paired;
    for (const auto& s : c.samples) {
      e.ids.push_back(v.encode(tokenize(s.text)));
      if (c.paired) e.ids_b.push_back(v.encode(tokenize(s.text_b)));
      e.labels.push_back(s.label);
    }
    return e;
  }

  EncodedCorpus concat(const EncodedCorpus& other) const {
    EncodedCorpus e = *this;
    e.ids.insert(e.ids.end(), other.ids.begin(), other.ids.end());
    e.ids_b.insert(e.ids_b.end(), other.ids_b.begin(), other.ids_b.end());
    e.labels.insert(e.labels.end(), other.labels.begin(), other.labels.end());
    return e;
  }
};

/// Fixed-length id matrix; rows are padded with id 0 at the tail and
/// truncated to max_len.
struct TextBatch {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::vector<std::int32_t> ids;  // batch x max_len
  std::vector<std::size_t> lengths;
  std::vector<int> labels;
  std::vector<std::int32_t> ids_b;  // second sentence when paired
  std::vector<std::size_t> lengths_b;

  bool paired() const { return !ids_b.empty(); }
};

namespace detail {

inline void pack_row(const std::vector<std::int32_t>& src, std::size_t max_len, std::vector<std::int32_t>& ids,
                     std::vector<std::size_t>& lengths) {
  const std::size_t n = std::min(src.size(), max_len);
  ids.insert(ids.end(), src.begin(), src.begin() + static_cast<std::ptrdiff_t>(n));
  ids.insert(ids.end(), max_len - n, Vocabulary::kPad);
  lengths.push_back(n);
}

}  // namespace detail

inline TextBatch make_batch(const EncodedCorpus& c, const std::vector<std::size_t>& rows, std::size_t max_len) {
  if (max_len == 0) throw ParameterError("max_len must be >= 1");
  TextBatch b;
  b.batch = rows.size();
  b.max_len = max_len;
  for (auto r : rows) {
    detail::pack_row(c.ids.at(r), max_len, b.ids, b.lengths);
    if (c.paired) detail::pack_row(c.ids_b.at(r), max_len, b.ids_b, b.lengths_b);
    b.labels.push_back(c.labels.at(r));
  }
  return b;
}

/// Consecutive batches over the corpus (optionally in a seeded shuffled
/// order); the last partial batch is kept.
inline std::vector<TextBatch> make_batches(const EncodedCorpus& c, std::size_t batch_size, std::size_t max_len,
                                           Rng* shuffle = nullptr) {
  if (batch_size == 0) throw ParameterError("batch_size must be >= 1");
  std::vector<std::size_t> order(c.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) shuffle->shuffle(order.begin(), order.end());
  std::vector<TextBatch> out;
  for (std::size_t s = 0; s < order.size(); s += batch_size) {
    std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(s),
                                  order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + batch_size)));
    out.push_back(make_batch(c, rows, max_len));
  }
  return out;
}

/// batch_size rows drawn uniformly without replacement (all rows when the
/// corpus is smaller).
inline TextBatch random_batch(const EncodedCorpus& c, std::size_t batch_size, std::size_t max_len, Rng& rng) {
  if (c.empty()) throw DataError("cannot draw a batch from an empty split");
  std::vector<std::size_t> order(c.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t n = std::min(batch_size, c.size());
  for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.below(c.size() - i)]);
  order.resize(n);
  return make_batch(c, order, max_len);
}

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class ToyKind { kClassification, kNli };

struct ToySpec {
  ToyKind kind = ToyKind::kClassification;
  std::size_t size = 2000;
  std::size_t vocab_size = 200;
  std::uint64_t seed = 1;
  std::size_t num_classes = 4;
  std::size_t family_size = 5;
  std::size_t min_len = 8;
  std::size_t max_len = 24;
};

inline std::string toy_token(std::size_t i) { return "w" + std::to_string(i); }

/// Classification: class c owns keyword tokens w[c*F, (c+1)*F); every text
/// carries 1-3 keywords of its class and distractors from the remaining
/// tokens, so the label is a function of the text.
/// NLI: tokens are grouped into families of F; a premise draws from one
/// family, and the hypothesis shares all (0), half (1) or none (2) of its
/// tokens' family with the premise.
inline Corpus make_toy(const ToySpec& spec) {
  if (spec.size < 100) throw ParameterError("toy corpus size must be >= 100");
  const std::size_t F = spec.family_size;
  Rng rng = Rng(spec.seed).substream("toy");
  Corpus c;
  auto draw_len = [&] { return spec.min_len + rng.below(spec.max_len - spec.min_len + 1); };
  if (spec.kind == ToyKind::kClassification) {
    const std::size_t keywords = spec.num_classes * F;
    if (spec.vocab_size <= keywords + 1) throw ParameterError("toy vocab too small for keyword families");
    for (std::size_t s = 0; s < spec.size; ++s) {
      const std::size_t label = rng.below(spec.num_classes);
      const std::size_t len = draw_len();
      std::vector<std::string> toks(len);
      for (auto& t : toks) t = toy_token(keywords + rng.below(spec.vocab_size - keywords));
      const std::size_t k = 1 + rng.below(3);
      for (std::size_t j = 0; j < k; ++j) toks[rng.below(len)] = toy_token(label * F + rng.below(F));
      std::string text;
      for (std::size_t j = 0; j < len; ++j) text += (j ? " " : "") + toks[j];
      c.samples.push_back({static_cast<int>(label), text, ""});
    }
  } else {
    c.paired = true;
    const std::size_t families = spec.vocab_size / F;
    if (families < 2) throw ParameterError("toy vocab too small for NLI families");
    auto sentence_from = [&](const std::vector<std::size_t>& fams, std::size_t len) {
      std::string s;
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t f = fams[j % fams.size()];
        s += (j ? " " : "") + toy_token(f * F + rng.below(F));
      }
      return s;
    };
    for (std::size_t s = 0; s < spec.size; ++s) {
      const std::size_t label = rng.below(3);
      const std::size_t fp = rng.below(families);
      std::size_t fo = rng.below(families - 1);
      if (fo >= fp) ++fo;
      const std::size_t lp = draw_len(), lh = draw_len();
      std::string premise = sentence_from({fp}, lp);
      std::string hyp;
      if (label == 0) hyp = sentence_from({fp}, lh);
      else if (label == 1) hyp = sentence_from({fp, fo}, lh);
      else hyp = sentence_from({fo}, lh);
      c.samples.push_back({static_cast<int>(label), premise, hyp});
    }
  }
  return c;
}

/// Re-derives a toy label from the text by the planting rule (-1 when the
/// text does not follow it).
inline int toy_label(const ToySpec& spec, const Sample& s) {
  const std::size_t F = spec.family_size;
  auto ids = [](const std::string& text) {
    std::vector<std::size_t> out;
    std::istringstream is(text);
    std::string t;
    while (is >> t) out.push_back(std::stoul(t.substr(1)));
    return out;
  };
  if (spec.kind == ToyKind::kClassification) {
    int label = -1;
    for (auto id : ids(s.text)) {
      if (id >= spec.num_classes * F) continue;
      const int c = static_cast<int>(id / F);
      if (label >= 0 && label != c) return -1;
      label = c;
    }
    return label;
  }
  std::vector<bool> premise_fam(spec.vocab_size / F + 1, false);
  for (auto id : ids(s.text)) premise_fam[id / F] = true;
  std::size_t shared = 0, total = 0;
  for (auto id : ids(s.text_b)) {
    ++total;
    shared += premise_fam[id / F] ? 1 : 0;
  }
  if (shared == total) return 0;
  if (shared == 0) return 2;
  return 1;
}

}  // namespace textnas
