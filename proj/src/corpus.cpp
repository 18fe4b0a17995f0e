#include "textdecon/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "textdecon/rng.hpp"

namespace textdecon::corpus {

namespace {

const char* kReserved[] = {kPadToken, kUnkToken, kNameToken, kDateToken, kUniqToken};

std::string fmt_line(const std::string& origin, std::size_t line_no, const std::string& what) {
  std::ostringstream os;
  os << origin << ":" << line_no << ": " << what;
  return os.str();
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

bool has_whitespace(const std::string& s) {
  return s.find_first_of(" \t\n\r") != std::string::npos;
}

}  // namespace

Vocabulary::Vocabulary(Kind kind) : kind_(kind) {
  for (const char* tok : kReserved) add(tok);
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int idx = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, idx);
  return idx;
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.count(token) != 0;
}

int Vocabulary::index_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkIndex : it->second;
}

const std::string& Vocabulary::token_at(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= tokens_.size()) {
    throw std::out_of_range("vocabulary index " + std::to_string(index) +
                            " out of range (size " + std::to_string(tokens_.size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(index)];
}

std::vector<Document> parse_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open corpus file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus_text(buf.str(), path);
}

std::vector<Document> parse_corpus_text(const std::string& text, const std::string& origin) {
  std::vector<Document> docs;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (start > text.size() && line.empty()) break;  // no trailing phantom line
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("#doc", 0) == 0 && (line.size() == 4 || line[4] == ' ')) {
        Document doc;
        std::istringstream hs(line.substr(4));
        std::string part;
        while (hs >> part) {
          if (part.rfind("id=", 0) == 0) {
            doc.id = part.substr(3);
          } else if (part.rfind("class=", 0) == 0) {
            doc.class_label = part.substr(6);
          } else {
            throw ParseError(fmt_line(origin, line_no, "unrecognized #doc attribute '" + part + "'"));
          }
        }
        if (doc.id.empty() || doc.class_label.empty()) {
          throw ParseError(fmt_line(origin, line_no, "#doc header needs id= and class="));
        }
        docs.push_back(std::move(doc));
      }
      continue;  // any other '#' line is a comment
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw ParseError(fmt_line(origin, line_no,
                                "expected 3 tab-separated fields, got " +
                                    std::to_string(fields.size())));
    }
    for (const auto& f : fields) {
      if (f.empty()) throw ParseError(fmt_line(origin, line_no, "empty token field"));
    }
    if (docs.empty()) {
      throw ParseError(fmt_line(origin, line_no, "token line before any #doc header"));
    }
    docs.back().tokens.push_back({fields[0], fields[1], fields[2]});
  }
  return docs;
}

std::string serialize_corpus_text(const std::vector<Document>& docs) {
  std::ostringstream os;
  for (const auto& doc : docs) {
    if (doc.id.empty() || doc.class_label.empty() || has_whitespace(doc.id) ||
        has_whitespace(doc.class_label)) {
      throw ParseError("document id/class must be nonempty and whitespace-free: id='" +
                       doc.id + "' class='" + doc.class_label + "'");
    }
    os << "#doc id=" << doc.id << " class=" << doc.class_label << "\n";
    for (const auto& tok : doc.tokens) {
      os << tok.surface << '\t' << tok.pos << '\t' << tok.lemma << "\n";
    }
  }
  return os.str();
}

void serialize_corpus(const std::vector<Document>& docs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << serialize_corpus_text(docs);
}

void apply_filters(std::vector<Document>& docs, const FilterRules& rules) {
  std::unordered_set<std::string> unique_surfaces;
  if (rules.replace_class_unique) {
    // Surfaces whose every occurrence lies in a single class, counted on the
    // corpus as passed in (before any replacement).
    std::unordered_map<std::string, std::string> first_class;
    std::unordered_set<std::string> multi_class;
    for (const auto& doc : docs) {
      for (const auto& tok : doc.tokens) {
        auto [it, inserted] = first_class.emplace(tok.surface, doc.class_label);
        if (!inserted && it->second != doc.class_label) multi_class.insert(tok.surface);
      }
    }
    for (const auto& [surface, cls] : first_class) {
      if (!multi_class.count(surface)) unique_surfaces.insert(surface);
    }
  }
  for (auto& doc : docs) {
    for (auto& tok : doc.tokens) {
      if (rules.name_tags.count(tok.pos)) {
        tok.surface = kNameToken;
        tok.lemma = kNameToken;
      } else if (rules.date_tags.count(tok.pos)) {
        tok.surface = kDateToken;
        tok.lemma = kDateToken;
      } else if (rules.replace_class_unique && unique_surfaces.count(tok.surface)) {
        tok.surface = kUniqToken;
        tok.lemma = kUniqToken;
      }
    }
  }
}

std::vector<std::string> collect_class_labels(const std::vector<Document>& docs) {
  std::set<std::string> labels;
  for (const auto& doc : docs) labels.insert(doc.class_label);
  return {labels.begin(), labels.end()};
}

std::vector<Segment> segment_corpus(const std::vector<Document>& docs,
                                    const std::vector<std::string>& class_labels,
                                    std::size_t segment_len, std::size_t stride) {
  if (segment_len < 1) throw std::invalid_argument("segment_len must be >= 1");
  if (stride < 1 || stride > segment_len) {
    throw std::invalid_argument("stride must be in [1, segment_len]");
  }
  std::unordered_map<std::string, int> label_index;
  for (std::size_t i = 0; i < class_labels.size(); ++i) {
    label_index.emplace(class_labels[i], static_cast<int>(i));
  }
  std::vector<Segment> segments;
  for (const auto& doc : docs) {
    auto it = label_index.find(doc.class_label);
    if (it == label_index.end()) {
      throw std::invalid_argument("unknown class label '" + doc.class_label +
                                  "' in document " + doc.id);
    }
    const int cls = it->second;
    for (std::size_t begin = 0; begin + segment_len <= doc.tokens.size(); begin += stride) {
      Segment seg;
      seg.id = static_cast<int>(segments.size());
      seg.doc_id = doc.id;
      seg.class_index = cls;
      seg.one_hot.assign(class_labels.size(), 0);
      seg.one_hot[static_cast<std::size_t>(cls)] = 1;
      seg.tokens.assign(doc.tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                        doc.tokens.begin() + static_cast<std::ptrdiff_t>(begin + segment_len));
      segments.push_back(std::move(seg));
    }
  }
  return segments;
}

namespace {

struct TokenCount {
  std::size_t freq = 0;
  std::size_t first_seen = 0;
};

void fill_vocab(Vocabulary& vocab, const std::vector<Segment>& segments,
                const std::string TaggedToken::*field, std::size_t min_count) {
  std::unordered_map<std::string, TokenCount> counts;
  std::size_t serial = 0;
  for (const auto& seg : segments) {
    for (const auto& tok : seg.tokens) {
      auto [it, inserted] = counts.try_emplace(tok.*field);
      if (inserted) it->second.first_seen = serial;
      ++it->second.freq;
      ++serial;
    }
  }
  std::vector<std::pair<std::string, TokenCount>> kept;
  kept.reserve(counts.size());
  for (auto& [token, tc] : counts) {
    if (tc.freq >= min_count && !vocab.contains(token)) kept.emplace_back(token, tc);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second.freq != b.second.freq) return a.second.freq > b.second.freq;
    return a.second.first_seen < b.second.first_seen;
  });
  for (const auto& [token, tc] : kept) vocab.add(token);
}

}  // namespace

VocabularySet build_vocabularies(const std::vector<Segment>& segments, std::size_t min_count) {
  if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
  VocabularySet vocabs;
  fill_vocab(vocabs.word, segments, &TaggedToken::surface, min_count);
  fill_vocab(vocabs.pos, segments, &TaggedToken::pos, min_count);
  fill_vocab(vocabs.lemma, segments, &TaggedToken::lemma, min_count);
  return vocabs;
}

void encode(Segment& segment, const VocabularySet& vocabs) {
  segment.encoded.resize(segment.tokens.size());
  for (std::size_t m = 0; m < segment.tokens.size(); ++m) {
    const auto& tok = segment.tokens[m];
    segment.encoded[m] = {vocabs.word.index_of(tok.surface), vocabs.pos.index_of(tok.pos),
                          vocabs.lemma.index_of(tok.lemma)};
  }
}

void encode_all(std::vector<Segment>& segments, const VocabularySet& vocabs) {
  for (auto& seg : segments) encode(seg, vocabs);
}

CorpusSplit split(std::vector<Segment> segments, std::uint64_t seed) {
  const std::size_t n = segments.size();
  if (n < 5) throw std::invalid_argument("split needs at least 5 segments");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto val_count = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(0.2 * static_cast<double>(n))));
  CorpusSplit out;
  out.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = (i < n - val_count) ? out.train : out.validation;
    dst.push_back(std::move(segments[order[i]]));
  }
  return out;
}

CorpusSplit split_by_document(std::vector<Segment> segments, std::uint64_t seed) {
  const std::size_t n = segments.size();
  if (n < 5) throw std::invalid_argument("split needs at least 5 segments");
  std::vector<std::string> doc_order;
  std::unordered_map<std::string, std::vector<std::size_t>> by_doc;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = by_doc.try_emplace(segments[i].doc_id);
    if (inserted) doc_order.push_back(segments[i].doc_id);
    it->second.push_back(i);
  }
  if (doc_order.size() < 2) {
    throw std::invalid_argument("document-level split needs at least 2 documents");
  }
  Rng rng(seed);
  rng.shuffle(doc_order);
  const auto target = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(0.2 * static_cast<double>(n))));
  CorpusSplit out;
  out.seed = seed;
  std::unordered_set<std::string> val_docs;
  std::size_t val_count = 0;
  for (const auto& doc : doc_order) {
    if (val_count >= target || val_docs.size() + 1 == doc_order.size()) break;
    val_docs.insert(doc);
    val_count += by_doc[doc].size();
  }
  for (auto& seg : segments) {
    auto& dst = val_docs.count(seg.doc_id) ? out.validation : out.train;
    dst.push_back(std::move(seg));
  }
  return out;
}

CorpusStats corpus_stats(const std::vector<Document>& docs, const std::string& sentence_pos_tag) {
  CorpusStats stats;
  std::unordered_set<std::string> surfaces;
  std::map<std::string, std::size_t> sentence_tokens;
  for (const auto& doc : docs) {
    std::size_t run = 0;
    for (const auto& tok : doc.tokens) {
      surfaces.insert(tok.surface);
      ++stats.class_word_counts[doc.class_label];
      ++stats.total_words;
      ++run;
      if (tok.pos == sentence_pos_tag) {
        ++stats.class_sentence_counts[doc.class_label];
        sentence_tokens[doc.class_label] += run;
        run = 0;
      }
    }
    if (run > 0) {  // trailing unterminated run counts as a sentence
      ++stats.class_sentence_counts[doc.class_label];
      sentence_tokens[doc.class_label] += run;
    }
  }
  stats.vocabulary_size = surfaces.size();
  for (const auto& [cls, sentences] : stats.class_sentence_counts) {
    stats.class_avg_sentence_len[cls] =
        sentences == 0 ? 0.0
                       : static_cast<double>(sentence_tokens[cls]) / static_cast<double>(sentences);
  }
  return stats;
}

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (spec.injection_rate <= 0.0 || spec.injection_rate > 1.0) {
    throw std::invalid_argument("injection_rate must be in (0,1]");
  }
  if (spec.segment_len < 1 || spec.segments_per_class < 1) {
    throw std::invalid_argument("segment_len and segments_per_class must be >= 1");
  }
  if (spec.marker_words_per_class * spec.classes > spec.background_vocab) {
    throw std::invalid_argument("marker_words_per_class * classes exceeds background_vocab");
  }
  static const char* kBgTags[] = {"NN", "VB", "JJ", "RB", "PR"};
  Rng rng(spec.seed);
  SyntheticCorpus out;
  char buf[64];
  int seg_id = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const double dot_rate = c == 0 ? 2.0 * spec.terminator_rate : spec.terminator_rate;
    for (std::size_t s = 0; s < spec.segments_per_class; ++s, ++seg_id) {
      Document doc;
      doc.id = "s" + std::to_string(seg_id);
      doc.class_label = "c" + std::to_string(c);
      doc.tokens.reserve(spec.segment_len);
      for (std::size_t m = 0; m < spec.segment_len; ++m) {
        if (rng.coin(dot_rate)) {
          doc.tokens.push_back({".", "SENT", "."});
        } else {
          const auto w = rng.below(spec.background_vocab);
          std::snprintf(buf, sizeof buf, "w%03zu", static_cast<std::size_t>(w));
          std::string surface = buf;
          std::snprintf(buf, sizeof buf, "l%03zu", static_cast<std::size_t>(w / 2));
          doc.tokens.push_back({surface, kBgTags[w % 5], buf});
        }
      }
      // One independent injection chance per marker word of this class, each
      // landing on a fresh position.
      std::vector<bool> taken(spec.segment_len, false);
      for (std::size_t j = 0; j < spec.marker_words_per_class; ++j) {
        if (!rng.coin(spec.injection_rate)) continue;
        std::size_t pos = rng.below(spec.segment_len);
        while (taken[pos]) pos = rng.below(spec.segment_len);
        taken[pos] = true;
        std::snprintf(buf, sizeof buf, "mk%zu_%zu", c, j);
        doc.tokens[pos] = {buf, spec.marker_pos, buf};
        out.truth.push_back({seg_id, static_cast<int>(pos), static_cast<int>(c)});
      }
      out.documents.push_back(std::move(doc));
    }
  }
  std::sort(out.truth.begin(), out.truth.end(), [](const MarkerTruth& a, const MarkerTruth& b) {
    return a.segment_id != b.segment_id ? a.segment_id < b.segment_id : a.position < b.position;
  });
  return out;
}

void write_synthetic(const SyntheticCorpus& corpus, const std::string& corpus_path,
                     const std::string& truth_path) {
  serialize_corpus(corpus.documents, corpus_path);
  std::ofstream out(truth_path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + truth_path);
  for (const auto& t : corpus.truth) {
    out << t.segment_id << '\t' << t.position << '\t' << t.class_index << "\n";
  }
}

std::vector<MarkerTruth> read_truth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open ground-truth file: " + path);
  std::vector<MarkerTruth> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    MarkerTruth t;
    std::istringstream is(line);
    if (!(is >> t.segment_id >> t.position >> t.class_index)) {
      throw ParseError(fmt_line(path, line_no, "malformed ground-truth line"));
    }
    out.push_back(t);
  }
  return out;
}

}  // namespace textdecon::corpus
