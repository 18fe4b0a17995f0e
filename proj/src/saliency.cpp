#include "textdecon/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace textdecon::saliency {

namespace {

int argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

void check_token_index(const model::ModelConfig& config, std::size_t m, model::Channel channel) {
  if (m >= config.segment_len) {
    throw std::out_of_range("token position " + std::to_string(m) + " out of range [0," +
                            std::to_string(config.segment_len) + ")");
  }
  if (!config.enabled(channel)) {
    throw std::invalid_argument(std::string("channel ") + model::channel_name(channel) +
                                " is disabled");
  }
}

// relu(b + A_m x_m) for one token's column block, then d + C(...).
std::vector<double> head_map(const model::DenseHead& head, const double* x, std::size_t d_len,
                             std::size_t col_offset) {
  const std::size_t e_len = head.b.numel();
  const std::size_t k_len = head.d.numel();
  const std::size_t a_cols = head.A.shape[1];
  std::vector<double> hidden(e_len);
  for (std::size_t e = 0; e < e_len; ++e) {
    const double* row = &head.A.value[e * a_cols + col_offset];
    double acc = head.b.value[e];
    for (std::size_t d = 0; d < d_len; ++d) acc += row[d] * x[d];
    hidden[e] = acc > 0.0 ? acc : 0.0;
  }
  std::vector<double> out(k_len);
  for (std::size_t k = 0; k < k_len; ++k) {
    const double* row = &head.C.value[k * e_len];
    double acc = head.d.value[k];
    for (std::size_t e = 0; e < e_len; ++e) acc += row[e] * hidden[e];
    out[k] = acc;
  }
  return out;
}

}  // namespace

ThresholdRule ThresholdRule::parse(const std::string& text) {
  ThresholdRule rule;
  if (text == "meanstd") {
    rule.kind = Kind::mean_std;
    return rule;
  }
  if (text.rfind("abs:", 0) == 0) {
    rule.kind = Kind::absolute;
    rule.value = std::stod(text.substr(4));
    return rule;
  }
  if (text.rfind("quantile:", 0) == 0) {
    rule.kind = Kind::quantile;
    rule.value = std::stod(text.substr(9));
    if (rule.value < 0.0 || rule.value > 1.0) {
      throw std::invalid_argument("quantile level must be in [0,1]");
    }
    return rule;
  }
  throw std::invalid_argument("unknown threshold rule '" + text +
                              "' (expected meanstd, abs:X or quantile:Q)");
}

std::string ThresholdRule::to_string() const {
  switch (kind) {
    case Kind::mean_std: return "meanstd";
    case Kind::absolute: return "abs:" + std::to_string(value);
    case Kind::quantile: return "quantile:" + std::to_string(value);
  }
  return "?";
}

std::vector<std::size_t> ThresholdRule::select(const std::vector<double>& values) const {
  double threshold = 0.0;
  switch (kind) {
    case Kind::mean_std: {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      var /= static_cast<double>(values.size());
      threshold = mean + std::sqrt(var);
      break;
    }
    case Kind::absolute:
      threshold = value;
      break;
    case Kind::quantile: {
      std::vector<double> sorted = values;
      std::sort(sorted.begin(), sorted.end());
      const auto n = static_cast<double>(sorted.size());
      auto rank = static_cast<std::ptrdiff_t>(std::ceil(value * n)) - 1;
      rank = std::clamp<std::ptrdiff_t>(rank, 0, static_cast<std::ptrdiff_t>(sorted.size()) - 1);
      threshold = sorted[static_cast<std::size_t>(rank)];
      break;
    }
  }
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > threshold) picked.push_back(i);
  }
  return picked;
}

double tds(const model::ForwardTrace& trace, const model::ModelConfig& config, std::size_t m,
           model::Channel channel) {
  check_token_index(config, m, channel);
  const auto ci = static_cast<std::size_t>(channel);
  const std::size_t d_len = config.embed(channel);
  const double* x = &trace.deconv[ci][m * d_len];
  double sum = 0.0;
  for (std::size_t d = 0; d < d_len; ++d) sum += x[d];
  return sum;
}

std::vector<double> wtds(const model::ForwardTrace& trace, const model::ModelConfig& config,
                         const model::DenseHead& head, std::size_t m, model::Channel channel) {
  check_token_index(config, m, channel);
  const auto ci = static_cast<std::size_t>(channel);
  const std::size_t d_len = config.embed(channel);
  const double* x = &trace.deconv[ci][m * d_len];
  return head_map(head, x, d_len, config.channel_offset(channel) + m * d_len);
}

std::vector<double> wtds_baseline(const model::DenseHead& head) {
  return head_map(head, nullptr, 0, 0);
}

SegmentExplanation explain_segment(model::Model& model, const corpus::Segment& segment,
                                   const ThresholdRule& rule, bool centered) {
  const auto& config = model.config;
  const model::ForwardTrace trace = model::forward(config, model.params, segment);
  SegmentExplanation out;
  out.segment_id = segment.id;
  out.predicted_class = argmax_lowest(trace.probs);
  out.logits = trace.logits;
  out.probs = trace.probs;
  out.baseline = wtds_baseline(model.params.head);
  out.centered = centered;
  out.tokens.resize(config.segment_len);
  for (std::size_t m = 0; m < config.segment_len; ++m) {
    TokenSaliency& tok = out.tokens[m];
    tok.position = m;
    for (model::Channel c : model::kChannels) {
      if (!config.enabled(c)) continue;
      const auto ci = static_cast<std::size_t>(c);
      tok.tds[ci] = tds(trace, config, m, c);
      tok.wtds[ci] = wtds(trace, config, model.params.head, m, c);
      if (centered) {
        for (std::size_t k = 0; k < tok.wtds[ci].size(); ++k) {
          tok.wtds[ci][k] -= out.baseline[k];
        }
      }
    }
  }
  const auto pred = static_cast<std::size_t>(out.predicted_class);
  for (model::Channel c : model::kChannels) {
    if (!config.enabled(c)) continue;
    const auto ci = static_cast<std::size_t>(c);
    std::vector<double> values(config.segment_len);
    for (std::size_t m = 0; m < config.segment_len; ++m) values[m] = out.tokens[m].wtds[ci][pred];
    out.highlights[ci] = rule.select(values);
  }
  return out;
}

std::vector<RankedSegment> rank_segments(model::Model& model,
                                         const std::vector<corpus::Segment>& segments,
                                         std::size_t class_index, bool correct_only) {
  if (class_index >= model.config.classes) {
    throw std::invalid_argument("class index " + std::to_string(class_index) +
                                " out of range [0," + std::to_string(model.config.classes) + ")");
  }
  std::vector<RankedSegment> out;
  out.reserve(segments.size());
  for (const auto& seg : segments) {
    const auto trace = model::forward(model.config, model.params, seg);
    if (correct_only && argmax_lowest(trace.probs) != seg.class_index) continue;
    out.push_back({seg.id, static_cast<int>(class_index), trace.logits[class_index],
                   trace.probs[class_index]});
  }
  std::sort(out.begin(), out.end(), [](const RankedSegment& a, const RankedSegment& b) {
    if (a.activation != b.activation) return a.activation > b.activation;
    return a.segment_id < b.segment_id;
  });
  return out;
}

}  // namespace textdecon::saliency
