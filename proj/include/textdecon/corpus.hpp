#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace textdecon::corpus {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One pre-tagged token: full surface form, part-of-speech tag, lemma.
// Fields are never empty and never contain tabs or newlines.
struct TaggedToken {
  std::string surface;
  std::string pos;
  std::string lemma;
  bool operator==(const TaggedToken&) const = default;
};

struct Document {
  std::string id;
  std::string class_label;
  std::vector<TaggedToken> tokens;
  bool operator==(const Document&) const = default;
};

// Reserved vocabulary entries. PAD doubles as the "token removed" input used
// by the perturbation explainer; NAMETOK/DATETOK/UNIQTOK are the literal
// replacement strings written into documents by apply_filters.
inline constexpr int kPadIndex = 0;
inline constexpr int kUnkIndex = 1;
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kNameToken = "NAMETOK";
inline constexpr const char* kDateToken = "DATETOK";
inline constexpr const char* kUniqToken = "UNIQTOK";

// token <-> dense index bijection with the five reserved entries above at
// indices 0..4. Unknown tokens map to kUnkIndex on lookup.
class Vocabulary {
 public:
  enum class Kind { word, pos, lemma };

  explicit Vocabulary(Kind kind);

  Kind kind() const { return kind_; }
  std::size_t size() const { return tokens_.size(); }

  // Appends the token if absent; returns its index either way.
  int add(const std::string& token);
  bool contains(const std::string& token) const;
  int index_of(const std::string& token) const;  // kUnkIndex if absent
  const std::string& token_at(int index) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  Kind kind_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct VocabularySet {
  Vocabulary word{Vocabulary::Kind::word};
  Vocabulary pos{Vocabulary::Kind::pos};
  Vocabulary lemma{Vocabulary::Kind::lemma};
};

// A fixed-length window of segment_len consecutive tokens carrying its
// document's class. encoded[m] = (word, pos, lemma) vocabulary indices.
struct Segment {
  int id = 0;
  std::string doc_id;
  int class_index = 0;
  std::vector<int> one_hot;
  std::vector<TaggedToken> tokens;
  std::vector<std::array<int, 3>> encoded;
};

struct CorpusSplit {
  std::vector<Segment> train;
  std::vector<Segment> validation;
  std::uint64_t seed = 0;
};

struct CorpusStats {
  std::map<std::string, std::size_t> class_word_counts;
  std::map<std::string, std::size_t> class_sentence_counts;
  std::map<std::string, double> class_avg_sentence_len;
  std::size_t vocabulary_size = 0;  // distinct surface forms
  std::size_t total_words = 0;
};

// Replacement rules applied before vocabulary construction. An empty tag set
// disables the corresponding rule.
struct FilterRules {
  std::set<std::string> name_tags = {"NAM", "NP", "NPP"};
  std::set<std::string> date_tags = {"NUM", "DATE"};
  bool replace_class_unique = true;
};

std::vector<Document> parse_corpus(const std::string& path);
std::vector<Document> parse_corpus_text(const std::string& text,
                                        const std::string& origin = "<string>");
std::string serialize_corpus_text(const std::vector<Document>& docs);
void serialize_corpus(const std::vector<Document>& docs, const std::string& path);

// Rewrites surface+lemma of name-tagged tokens to NAMETOK, of date-tagged
// tokens to DATETOK, and of surfaces occurring in exactly one class to
// UNIQTOK. Rule precedence is name > date > class-unique; the class-unique
// surface set is computed on the documents as passed in. POS fields and
// token counts are never changed.
void apply_filters(std::vector<Document>& docs, const FilterRules& rules = {});

// Sorted unique class labels.
std::vector<std::string> collect_class_labels(const std::vector<Document>& docs);

// Cuts windows of exactly segment_len tokens at the given stride per
// document, dropping trailing incomplete windows. Segment ids enumerate the
// result in document order. encoded stays empty until encode_all.
std::vector<Segment> segment_corpus(const std::vector<Document>& docs,
                                    const std::vector<std::string>& class_labels,
                                    std::size_t segment_len, std::size_t stride);

// Index assignment: reserved entries first, then tokens with corpus
// frequency >= min_count by descending frequency, ties broken by first
// appearance in the segment stream.
VocabularySet build_vocabularies(const std::vector<Segment>& segments,
                                 std::size_t min_count);

void encode(Segment& segment, const VocabularySet& vocabs);
void encode_all(std::vector<Segment>& segments, const VocabularySet& vocabs);

// Deterministic shuffle under seed, then an 80/20 partition by segment.
CorpusSplit split(std::vector<Segment> segments, std::uint64_t seed);

// Same contract but whole documents go to one side; proportions are
// best-effort since documents are indivisible.
CorpusSplit split_by_document(std::vector<Segment> segments, std::uint64_t seed);

// Sentence boundary = token whose POS equals sentence_pos_tag. A sentence's
// length counts every token up to and including the boundary; a trailing
// unterminated run still counts as one sentence.
CorpusStats corpus_stats(const std::vector<Document>& docs,
                         const std::string& sentence_pos_tag = "SENT");

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t segments_per_class = 500;
  std::size_t segment_len = 50;
  std::size_t marker_words_per_class = 20;
  std::size_t background_vocab = 300;
  double injection_rate = 0.15;
  std::uint64_t seed = 0;
  std::string marker_pos = "NN";   // set to a name tag to make markers filterable
  double terminator_rate = 0.08;   // class 0 gets twice this density
};

struct MarkerTruth {
  int segment_id = 0;
  int position = 0;
  int class_index = 0;
  bool operator==(const MarkerTruth&) const = default;
};

struct SyntheticCorpus {
  std::vector<Document> documents;  // one document per future segment
  std::vector<MarkerTruth> truth;
};

// Planted-marker test corpus. Each class owns marker_words_per_class
// disjoint marker surfaces; every (segment, marker word) pair is injected
// independently with probability injection_rate at a fresh random position.
// Class 0 doubles its sentence-terminator density. Deterministic under seed.
SyntheticCorpus gen_synthetic(const SyntheticSpec& spec);

void write_synthetic(const SyntheticCorpus& corpus, const std::string& corpus_path,
                     const std::string& truth_path);
std::vector<MarkerTruth> read_truth(const std::string& path);

}  // namespace textdecon::corpus
