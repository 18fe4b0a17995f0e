#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "textdecon/model.hpp"

namespace textdecon::baselines {

// Lexical specificity z-score under the hypergeometric null: drawing the
// subcorpus (n of T tokens) without replacement, a word with K_w corpus
// occurrences has E = n K_w / T and
// Var = n (K_w/T)(1 - K_w/T)(T-n)/(T-1); z = (k - E)/sqrt(Var).
// Degenerate cases (Var = 0) return 0; exact proportional spread returns 0
// exactly via integer comparison of k T and n K_w.
double hypergeometric_z(std::uint64_t k, std::uint64_t n, std::uint64_t corpus_count,
                        std::uint64_t corpus_total);

struct ZScoreEntry {
  std::uint64_t count_in_class = 0;  // k
  std::uint64_t class_total = 0;     // n
  std::uint64_t corpus_count = 0;    // K_w
  std::uint64_t corpus_total = 0;    // T
  double z = 0.0;
};

// Surface-form frequency table over a document set.
class ZScoreTable {
 public:
  static ZScoreTable build(const std::vector<corpus::Document>& docs);

  // Throws std::invalid_argument if the word never occurs in the corpus or
  // the class is unknown; a zero count in the class is a legitimate query.
  double z(const std::string& surface, const std::string& class_label) const;
  ZScoreEntry entry(const std::string& surface, const std::string& class_label) const;

  const std::vector<std::string>& classes() const { return classes_; }
  std::vector<std::string> words() const;  // sorted
  std::uint64_t corpus_total() const { return total_; }

 private:
  std::vector<std::string> classes_;
  std::unordered_map<std::string, std::uint64_t> class_totals_;
  std::unordered_map<std::string, std::uint64_t> word_totals_;
  std::unordered_map<std::string, std::unordered_map<std::string, std::uint64_t>> counts_;
  std::uint64_t total_ = 0;
};

struct LocalExplanation {
  int segment_id = -1;
  int target_class = -1;
  std::vector<double> weights;  // one per token position
  double intercept = 0.0;
  double weighted_r2 = 0.0;
  std::size_t model_evaluations = 0;
};

struct LimeOptions {
  std::size_t samples = 1000;   // N
  double kernel_width = 0.75;
  double ridge_lambda = 1.0;
  std::uint64_t seed = 0;
};

// Local linear surrogate over a binary token-presence mask: samples masks
// with independent 0.5 dropout, weights them by
// exp(-(1 - cos(mask, ones))^2 / kernel_width^2) and fits a weighted ridge
// regression (intercept unpenalized) of the predicted probability on the
// mask. predict_masked is called once per sample.
LocalExplanation lime_fit(const std::function<double(const std::vector<std::uint8_t>&)>& predict_masked,
                          std::size_t num_tokens, const LimeOptions& options);

// Model-backed variant: masked tokens become PAD on all channels.
LocalExplanation lime_explain(model::Model& model, const corpus::Segment& segment,
                              std::size_t target_class, const LimeOptions& options);

struct AgreementReport {
  double sign_agreement = 0.0;  // over tokens above both methods' median magnitude
  double kendall_tau = 0.0;     // tau-b on the union of both methods' top_k tokens
  std::size_t compared_tokens = 0;
};

AgreementReport agreement(const std::vector<double>& a, const std::vector<double>& b,
                          std::size_t top_k);

}  // namespace textdecon::baselines
