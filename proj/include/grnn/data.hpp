// Corpus ingestion and the deterministic synthetic corpus generator.
//
// On-disk formats:
//   corpus      JSON Lines, one {"id", "text", "labels"} record per document
//   vocabulary  token TAB count, one per line, frequency-descending
//   parent map  child TAB parent, one per line

#ifndef GRNN_DATA_HPP_
#define GRNN_DATA_HPP_

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grnn/linalg.hpp"

namespace grnn {

// ---------------------------------------------------------------------------
// Tokenization: lowercase, split on maximal runs of non-alphanumeric
// characters, and collapse every maximal digit run to the placeholder '0'.
// Output tokens therefore contain only [a-z0] and the tokenizer is total.
// ---------------------------------------------------------------------------

inline constexpr char kDigitPlaceholder = '0';

inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  bool last_was_digit = false;
  auto flush = [&]() {
    if (!current.empty()) {
      out.push_back(current);
      current.clear();
    }
    last_was_digit = false;
  };
  for (unsigned char ch : text) {
    if (std::isalpha(ch)) {
      current.push_back(static_cast<char>(std::tolower(ch)));
      last_was_digit = false;
    } else if (std::isdigit(ch)) {
      if (!last_was_digit) current.push_back(kDigitPlaceholder);
      last_was_digit = true;
    } else {
      flush();
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Raw and encoded corpora.
// ---------------------------------------------------------------------------

struct RawDocument {
  std::string id;
  std::string text;
  std::vector<std::string> labels;

  bool operator==(const RawDocument&) const = default;
};

struct Corpus {
  std::vector<RawDocument> docs;

  bool operator==(const Corpus&) const = default;
};

struct Document {
  std::string id;
  std::vector<int> tokens;  // vocabulary ids
  std::vector<int> labels;  // label-space ids, sorted ascending, unique
};

struct EncodedCorpus {
  std::vector<Document> docs;
  std::size_t num_labels = 0;
};

inline Corpus load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("corpus not found: " + path);
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(str_cat(path, ": malformed JSON at line ",
                                       line_no, ": ", e.what()));
    }
    RawDocument doc;
    for (const char* field : {"id", "text", "labels"}) {
      if (!rec.contains(field)) {
        throw std::runtime_error(str_cat(path, ": line ", line_no,
                                         " missing field \"", field, "\""));
      }
    }
    try {
      doc.id = rec.at("id").get<std::string>();
      doc.text = rec.at("text").get<std::string>();
      doc.labels = rec.at("labels").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(
          str_cat(path, ": line ", line_no, ": bad field type: ", e.what()));
    }
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

inline void save_jsonl(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write corpus: " + path);
  for (const RawDocument& doc : corpus.docs) {
    nlohmann::ordered_json rec;
    rec["id"] = doc.id;
    rec["text"] = doc.text;
    rec["labels"] = doc.labels;
    out << rec.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Vocabulary. Id 0 is always the out-of-vocabulary token; real tokens get
// ids 1.. in order of descending training frequency (ties lexicographic).
// ---------------------------------------------------------------------------

inline constexpr const char* kUnknownToken = "<unk>";

struct Vocabulary {
  std::vector<std::string> tokens;      // id -> token, tokens[0] == <unk>
  std::vector<std::size_t> counts;      // aligned with tokens
  std::unordered_map<std::string, int> index;

  std::size_t size() const { return tokens.size(); }

  int id_of(const std::string& token) const {
    const auto it = index.find(token);
    return it == index.end() ? 0 : it->second;
  }

  /// Content hash over tokens and counts; stored in checkpoints to detect
  /// evaluating with the wrong vocabulary.
  std::uint64_t hash() const {
    std::uint64_t h = 14695981039346656037ULL;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      h = fnv1a64(tokens[i], h);
      h = fnv1a64(str_cat("#", counts[i], "\n"), h);
    }
    return h;
  }
};

inline Vocabulary build_vocabulary(const Corpus& train) {
  std::map<std::string, std::size_t> counts;
  for (const RawDocument& doc : train.docs) {
    for (const std::string& tok : tokenize(doc.text)) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(),
                                                           counts.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  Vocabulary vocab;
  vocab.tokens.push_back(kUnknownToken);
  vocab.counts.push_back(0);
  for (auto& [tok, count] : entries) {
    vocab.index[tok] = static_cast<int>(vocab.tokens.size());
    vocab.tokens.push_back(tok);
    vocab.counts.push_back(count);
  }
  return vocab;
}

inline void save_vocabulary(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  for (std::size_t i = 1; i < vocab.tokens.size(); ++i) {
    out << vocab.tokens[i] << '\t' << vocab.counts[i] << '\n';
  }
}

inline Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocabulary not found: " + path);
  Vocabulary vocab;
  vocab.tokens.push_back(kUnknownToken);
  vocab.counts.push_back(0);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(
          str_cat(path, ": line ", line_no, ": expected token TAB count"));
    }
    const std::string tok = line.substr(0, tab);
    vocab.index[tok] = static_cast<int>(vocab.tokens.size());
    vocab.tokens.push_back(tok);
    vocab.counts.push_back(std::stoull(line.substr(tab + 1)));
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// Label hierarchy (child -> parent) and label space.
// ---------------------------------------------------------------------------

using ParentMap = std::unordered_map<std::string, std::string>;

inline ParentMap load_parent_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parent map not found: " + path);
  ParentMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(
          str_cat(path, ": line ", line_no, ": expected child TAB parent"));
    }
    map[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return map;
}

inline void save_parent_map(const std::string& path, const ParentMap& map) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write parent map: " + path);
  std::vector<std::pair<std::string, std::string>> entries(map.begin(),
                                                           map.end());
  std::sort(entries.begin(), entries.end());
  for (const auto& [child, parent] : entries) {
    out << child << '\t' << parent << '\n';
  }
}

/// Closes a label set under ancestors. max_depth bounds how many levels are
/// added above each input label (0 = none); revisits are skipped so malformed
/// cyclic maps terminate.
inline std::set<std::string> extend_with_ancestors(
    const std::set<std::string>& labels, const ParentMap& parents,
    std::size_t max_depth = SIZE_MAX) {
  std::set<std::string> out = labels;
  for (const std::string& label : labels) {
    std::string current = label;
    for (std::size_t depth = 0; depth < max_depth; ++depth) {
      const auto it = parents.find(current);
      if (it == parents.end()) break;
      current = it->second;
      if (!out.insert(current).second) break;
    }
  }
  return out;
}

struct LabelSpace {
  std::vector<std::string> names;        // frequency-descending, ties lex
  std::vector<std::size_t> frequencies;  // training counts after closure
  std::unordered_map<std::string, int> index;

  std::size_t size() const { return names.size(); }

  int id_of(const std::string& name) const {
    const auto it = index.find(name);
    return it == index.end() ? -1 : it->second;
  }

  std::uint64_t hash() const {
    std::uint64_t h = 14695981039346656037ULL;
    for (const std::string& name : names) {
      h = fnv1a64(name, h);
      h = fnv1a64("\n", h);
    }
    return h;
  }
};

/// Picks the top_k most frequent labels in the training corpus, counting each
/// document's label set after ancestor closure when a parent map is given.
/// top_k beyond the number of distinct labels selects all of them.
inline LabelSpace build_label_space(const Corpus& train, std::size_t top_k,
                                    const ParentMap* parents = nullptr) {
  std::map<std::string, std::size_t> counts;
  for (const RawDocument& doc : train.docs) {
    std::set<std::string> labels(doc.labels.begin(), doc.labels.end());
    if (parents != nullptr) labels = extend_with_ancestors(labels, *parents);
    for (const std::string& label : labels) ++counts[label];
  }
  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(),
                                                           counts.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  if (top_k < entries.size()) entries.resize(top_k);
  LabelSpace space;
  for (auto& [name, count] : entries) {
    space.index[name] = static_cast<int>(space.names.size());
    space.names.push_back(name);
    space.frequencies.push_back(count);
  }
  return space;
}

inline void save_label_space(const std::string& path, const LabelSpace& space) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write label space: " + path);
  for (std::size_t i = 0; i < space.names.size(); ++i) {
    out << space.names[i] << '\t' << space.frequencies[i] << '\n';
  }
}

inline LabelSpace load_label_space(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("label space not found: " + path);
  LabelSpace space;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(
          str_cat(path, ": line ", line_no, ": expected label TAB count"));
    }
    const std::string name = line.substr(0, tab);
    space.index[name] = static_cast<int>(space.names.size());
    space.names.push_back(name);
    space.frequencies.push_back(std::stoull(line.substr(tab + 1)));
  }
  return space;
}

/// Tokenizes and indexes a raw corpus. Documents that tokenize to nothing are
/// dropped; labels outside the label space are dropped; label sets are closed
/// under ancestors first when a parent map is given.
inline EncodedCorpus encode_corpus(const Corpus& corpus,
                                   const Vocabulary& vocab,
                                   const LabelSpace& space,
                                   const ParentMap* parents = nullptr) {
  EncodedCorpus out;
  out.num_labels = space.size();
  for (const RawDocument& raw : corpus.docs) {
    Document doc;
    doc.id = raw.id;
    for (const std::string& tok : tokenize(raw.text)) {
      doc.tokens.push_back(vocab.id_of(tok));
    }
    if (doc.tokens.empty()) continue;
    std::set<std::string> labels(raw.labels.begin(), raw.labels.end());
    if (parents != nullptr) labels = extend_with_ancestors(labels, *parents);
    for (const std::string& label : labels) {
      const int id = space.id_of(label);
      if (id >= 0) doc.labels.push_back(id);
    }
    std::sort(doc.labels.begin(), doc.labels.end());
    out.docs.push_back(std::move(doc));
  }
  return out;
}

/// Keeps the first max_len tokens; labels unchanged. Idempotent.
inline Document truncate(const Document& doc, std::size_t max_len) {
  check_arg(max_len >= 1, "truncate: max_len must be at least 1");
  Document out = doc;
  if (out.tokens.size() > max_len) out.tokens.resize(max_len);
  return out;
}

/// Dense {0,1} gold vector for one document.
inline std::vector<std::uint8_t> gold_vector(const Document& doc,
                                             std::size_t num_labels) {
  std::vector<std::uint8_t> y(num_labels, 0);
  for (int l : doc.labels) y[static_cast<std::size_t>(l)] = 1;
  return y;
}

// ---------------------------------------------------------------------------
// Synthetic planted-keyword corpus.
//
// Each label owns a disjoint set of trigger tokens; a document's text
// interleaves triggers of its positive labels with background tokens that by
// construction never collide with any trigger, so a perfect classifier exists.
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::size_t num_labels = 50;
  std::size_t vocab_size = 2000;
  std::size_t num_docs = 5000;
  std::size_t doc_len_min = 30;
  std::size_t doc_len_max = 120;
  std::size_t triggers_per_label = 2;
  double label_rate = 0.06;
  double noise_rate = 0.5;
  std::size_t hierarchy_depth = 0;
  std::uint64_t seed = 1;
};

struct SynthCorpus {
  Corpus train, valid, test;
  std::vector<std::string> label_names;
  std::vector<std::vector<std::string>> triggers;  // per label
  ParentMap parents;                               // empty unless depth > 0
};

namespace detail {

/// Lowercase-letter word of fixed width; digit-free so tokenization is the
/// identity on generated text.
inline std::string synth_word(char prefix, std::size_t index) {
  std::string s(5, 'a');
  s[0] = prefix;
  for (std::size_t pos = 4; pos >= 1; --pos) {
    s[pos] = static_cast<char>('a' + index % 26);
    index /= 26;
  }
  return s;
}

}  // namespace detail

inline SynthCorpus synth_generate(const SynthConfig& cfg) {
  check_arg(cfg.triggers_per_label * cfg.num_labels <= cfg.vocab_size,
            "synth_generate: triggers_per_label * num_labels exceeds vocab");
  check_arg(cfg.label_rate >= 0.0 && cfg.label_rate <= 1.0 &&
                cfg.noise_rate >= 0.0 && cfg.noise_rate <= 1.0,
            "synth_generate: rates must lie in [0, 1]");
  check_arg(cfg.doc_len_min >= 1 && cfg.doc_len_min <= cfg.doc_len_max,
            "synth_generate: bad document length range");
  check_arg(cfg.num_labels >= 1, "synth_generate: need at least one label");

  SynthCorpus out;
  Rng rng(cfg.seed);

  for (std::size_t l = 0; l < cfg.num_labels; ++l) {
    out.label_names.push_back(detail::synth_word('c', l));
    std::vector<std::string> triggers;
    for (std::size_t t = 0; t < cfg.triggers_per_label; ++t) {
      triggers.push_back(
          detail::synth_word('w', l * cfg.triggers_per_label + t));
    }
    out.triggers.push_back(std::move(triggers));
  }
  const std::size_t first_background =
      cfg.num_labels * cfg.triggers_per_label;
  const std::size_t background_count = cfg.vocab_size - first_background;
  check_arg(background_count > 0 || cfg.noise_rate == 0.0,
            "synth_generate: no background tokens available for noise");

  // Binary-heap hierarchy over label indices (parent of i is (i-1)/2).
  if (cfg.hierarchy_depth > 0) {
    for (std::size_t l = 1; l < cfg.num_labels; ++l) {
      out.parents[out.label_names[l]] = out.label_names[(l - 1) / 2];
    }
  }

  for (std::size_t d = 0; d < cfg.num_docs; ++d) {
    RawDocument doc;
    doc.id = str_cat("d", detail::synth_word('x', d).substr(1));

    std::set<std::string> labels;
    std::vector<std::size_t> positive;
    for (std::size_t l = 0; l < cfg.num_labels; ++l) {
      if (rng.uniform() < cfg.label_rate) {
        positive.push_back(l);
        labels.insert(out.label_names[l]);
      }
    }
    if (cfg.hierarchy_depth > 0) {
      labels = extend_with_ancestors(labels, out.parents, cfg.hierarchy_depth);
    }

    const std::size_t len = static_cast<std::size_t>(rng.uniform_int(
        static_cast<long>(cfg.doc_len_min), static_cast<long>(cfg.doc_len_max)));
    std::vector<std::string> words;
    words.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
      const bool noise = positive.empty() || rng.uniform() < cfg.noise_rate;
      if (noise) {
        const std::size_t w = first_background + static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<long>(background_count) - 1));
        words.push_back(detail::synth_word('w', w));
      } else {
        const std::size_t l = positive[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<long>(positive.size()) - 1))];
        const std::size_t t = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<long>(cfg.triggers_per_label) - 1));
        words.push_back(out.triggers[l][t]);
      }
    }
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i > 0) doc.text.push_back(' ');
      doc.text += words[i];
    }
    doc.labels.assign(labels.begin(), labels.end());

    // Stable 80/10/10 split by id hash.
    const std::uint64_t bucket = fnv1a64(doc.id) % 10;
    if (bucket < 8) {
      out.train.docs.push_back(std::move(doc));
    } else if (bucket == 8) {
      out.valid.docs.push_back(std::move(doc));
    } else {
      out.test.docs.push_back(std::move(doc));
    }
  }
  return out;
}

}  // namespace grnn

#endif  // GRNN_DATA_HPP_
