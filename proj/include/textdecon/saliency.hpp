#pragma once

#include <array>
#include <string>
#include <vector>

#include "textdecon/model.hpp"

namespace textdecon::saliency {

// Per-token importance signals. tds is the plain entry sum of the token's
// deconvolved features; wtds pushes those features through the dense head
// via the token's column block of A and yields one score per class, which
// may be negative.
struct TokenSaliency {
  std::size_t position = 0;
  std::array<double, 3> tds{};                   // per channel
  std::array<std::vector<double>, 3> wtds{};     // per channel, length K
};

struct SegmentExplanation {
  int segment_id = 0;
  int predicted_class = 0;
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<double> baseline;  // d + C relu(b), the x=0 wTDS
  bool centered = false;
  std::vector<TokenSaliency> tokens;
  std::array<std::vector<std::size_t>, 3> highlights;  // positions per channel
};

struct RankedSegment {
  int segment_id = 0;
  int class_index = 0;
  double activation = 0.0;   // pre-softmax y_k, the sort key
  double probability = 0.0;  // softmax(y)_k, reported only
};

// Highlight rules over the per-segment wtds[predicted class] values:
//   meanstd     value > mean + 1 stddev (per channel, per segment)
//   abs:X       value > X
//   quantile:Q  value > the Q nearest-rank quantile of the segment
struct ThresholdRule {
  enum class Kind { mean_std, absolute, quantile };
  Kind kind = Kind::mean_std;
  double value = 0.0;

  static ThresholdRule parse(const std::string& text);
  std::string to_string() const;
  std::vector<std::size_t> select(const std::vector<double>& values) const;
};

double tds(const model::ForwardTrace& trace, const model::ModelConfig& config, std::size_t m,
           model::Channel channel);

std::vector<double> wtds(const model::ForwardTrace& trace, const model::ModelConfig& config,
                         const model::DenseHead& head, std::size_t m, model::Channel channel);

// d + C relu(b), shared by every token; the --centered report mode subtracts it.
std::vector<double> wtds_baseline(const model::DenseHead& head);

SegmentExplanation explain_segment(model::Model& model, const corpus::Segment& segment,
                                   const ThresholdRule& rule = {}, bool centered = false);

// All segments scored by pre-softmax activation for the class and sorted
// descending (ties by segment id). correct_only keeps segments the model
// classifies correctly.
std::vector<RankedSegment> rank_segments(model::Model& model,
                                         const std::vector<corpus::Segment>& segments,
                                         std::size_t class_index, bool correct_only = false);

}  // namespace textdecon::saliency
