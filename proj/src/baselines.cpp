#include "textdecon/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "textdecon/rng.hpp"

namespace textdecon::baselines {

double hypergeometric_z(std::uint64_t k, std::uint64_t n, std::uint64_t corpus_count,
                        std::uint64_t corpus_total) {
  if (corpus_total == 0) throw std::invalid_argument("hypergeometric_z: empty corpus");
  if (n > corpus_total || corpus_count > corpus_total || k > n || k > corpus_count) {
    throw std::invalid_argument("hypergeometric_z: inconsistent counts");
  }
  if (k * corpus_total == n * corpus_count) return 0.0;  // exact proportional spread
  if (corpus_total == 1) return 0.0;
  const auto t = static_cast<double>(corpus_total);
  const double p = static_cast<double>(corpus_count) / t;
  const double expectation = static_cast<double>(n) * p;
  const double variance =
      static_cast<double>(n) * p * (1.0 - p) * (t - static_cast<double>(n)) / (t - 1.0);
  if (variance <= 0.0) return 0.0;
  return (static_cast<double>(k) - expectation) / std::sqrt(variance);
}

ZScoreTable ZScoreTable::build(const std::vector<corpus::Document>& docs) {
  ZScoreTable table;
  std::set<std::string> class_set;
  for (const auto& doc : docs) {
    class_set.insert(doc.class_label);
    for (const auto& tok : doc.tokens) {
      ++table.class_totals_[doc.class_label];
      ++table.word_totals_[tok.surface];
      ++table.counts_[tok.surface][doc.class_label];
      ++table.total_;
    }
  }
  table.classes_.assign(class_set.begin(), class_set.end());
  return table;
}

ZScoreEntry ZScoreTable::entry(const std::string& surface, const std::string& class_label) const {
  const auto word_it = word_totals_.find(surface);
  if (word_it == word_totals_.end()) {
    throw std::invalid_argument("word '" + surface + "' does not occur in the corpus");
  }
  const auto class_it = class_totals_.find(class_label);
  if (class_it == class_totals_.end()) {
    throw std::invalid_argument("unknown class '" + class_label + "'");
  }
  ZScoreEntry e;
  e.corpus_count = word_it->second;
  e.class_total = class_it->second;
  e.corpus_total = total_;
  const auto& per_class = counts_.at(surface);
  const auto k_it = per_class.find(class_label);
  e.count_in_class = k_it == per_class.end() ? 0 : k_it->second;
  e.z = hypergeometric_z(e.count_in_class, e.class_total, e.corpus_count, e.corpus_total);
  return e;
}

double ZScoreTable::z(const std::string& surface, const std::string& class_label) const {
  return entry(surface, class_label).z;
}

std::vector<std::string> ZScoreTable::words() const {
  std::vector<std::string> out;
  out.reserve(word_totals_.size());
  for (const auto& [word, count] : word_totals_) out.push_back(word);
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

// Cholesky solve of the SPD normal-equation system; lambda > 0 on every
// diagonal entry except the intercept keeps it positive definite.
std::vector<double> solve_spd(std::vector<double> a, std::vector<double> rhs, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
      if (i == j) {
        if (sum <= 0.0) throw std::runtime_error("ridge system not positive definite");
        a[i * n + i] = std::sqrt(sum);
      } else {
        a[i * n + j] = sum / a[j * n + j];
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {  // L y = rhs
    double sum = rhs[i];
    for (std::size_t k = 0; k < i; ++k) sum -= a[i * n + k] * rhs[k];
    rhs[i] = sum / a[i * n + i];
  }
  for (std::size_t ii = n; ii-- > 0;) {  // L^T x = y
    double sum = rhs[ii];
    for (std::size_t k = ii + 1; k < n; ++k) sum -= a[k * n + ii] * rhs[k];
    rhs[ii] = sum / a[ii * n + ii];
  }
  return rhs;
}

}  // namespace

LocalExplanation lime_fit(
    const std::function<double(const std::vector<std::uint8_t>&)>& predict_masked,
    std::size_t num_tokens, const LimeOptions& options) {
  if (options.samples < num_tokens + 1) {
    throw std::invalid_argument("LIME fit is underdetermined: need at least " +
                                std::to_string(num_tokens + 1) + " samples for " +
                                std::to_string(num_tokens) + " tokens");
  }
  if (options.ridge_lambda <= 0.0) throw std::invalid_argument("ridge lambda must be positive");
  if (options.kernel_width <= 0.0) throw std::invalid_argument("kernel width must be positive");

  const std::size_t p = num_tokens + 1;  // intercept + one coefficient per token
  Rng rng(options.seed);
  std::vector<double> gram(p * p, 0.0);  // Z^T W Z
  std::vector<double> rhs(p, 0.0);       // Z^T W y
  std::vector<double> row(p, 0.0);
  std::vector<std::uint8_t> mask(num_tokens);
  double weight_sum = 0.0, wy_sum = 0.0, wyy_sum = 0.0;

  for (std::size_t s = 0; s < options.samples; ++s) {
    std::size_t present = 0;
    for (std::size_t m = 0; m < num_tokens; ++m) {
      mask[m] = rng.coin(0.5) ? 1 : 0;
      present += mask[m];
    }
    const double y = predict_masked(mask);
    const double cosine =
        present == 0 ? 0.0
                     : std::sqrt(static_cast<double>(present) / static_cast<double>(num_tokens));
    const double dist = 1.0 - cosine;
    const double w = std::exp(-(dist * dist) / (options.kernel_width * options.kernel_width));
    row[0] = 1.0;
    for (std::size_t m = 0; m < num_tokens; ++m) row[m + 1] = mask[m];
    for (std::size_t i = 0; i < p; ++i) {
      if (row[i] == 0.0) continue;
      const double wi = w * row[i];
      rhs[i] += wi * y;
      for (std::size_t j = 0; j <= i; ++j) gram[i * p + j] += wi * row[j];
    }
    weight_sum += w;
    wy_sum += w * y;
    wyy_sum += w * y * y;
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i + 1; j < p; ++j) gram[i * p + j] = gram[j * p + i];
  }
  std::vector<double> ridged = gram;
  for (std::size_t i = 1; i < p; ++i) ridged[i * p + i] += options.ridge_lambda;
  const std::vector<double> beta = solve_spd(std::move(ridged), rhs, p);

  // Weighted R^2 from the accumulated moments: SSE = y'Wy - 2 b'r + b'G b.
  double quad = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    double gi = 0.0;
    for (std::size_t j = 0; j < p; ++j) gi += gram[i * p + j] * beta[j];
    quad += beta[i] * (gi - 2.0 * rhs[i]);
  }
  const double sse = std::max(0.0, wyy_sum + quad);
  const double sst = std::max(0.0, wyy_sum - wy_sum * wy_sum / weight_sum);
  LocalExplanation out;
  out.intercept = beta[0];
  out.weights.assign(beta.begin() + 1, beta.end());
  out.weighted_r2 = sst > 0.0 ? 1.0 - sse / sst : 1.0;
  out.model_evaluations = options.samples;
  return out;
}

LocalExplanation lime_explain(model::Model& model, const corpus::Segment& segment,
                              std::size_t target_class, const LimeOptions& options) {
  if (target_class >= model.config.classes) {
    throw std::invalid_argument("target class out of range");
  }
  const std::size_t m_len = model.config.segment_len;
  if (segment.encoded.size() != m_len) {
    throw std::invalid_argument("segment is not encoded to the model's segment length");
  }
  corpus::Segment masked = segment;
  auto predict = [&](const std::vector<std::uint8_t>& mask) {
    for (std::size_t m = 0; m < m_len; ++m) {
      masked.encoded[m] = mask[m] ? segment.encoded[m]
                                  : std::array<int, 3>{corpus::kPadIndex, corpus::kPadIndex,
                                                       corpus::kPadIndex};
    }
    const auto trace = model::forward(model.config, model.params, masked);
    return trace.probs[target_class];
  };
  LocalExplanation out = lime_fit(predict, m_len, options);
  out.segment_id = segment.id;
  out.target_class = static_cast<int>(target_class);
  return out;
}

namespace {

double median_magnitude(const std::vector<double>& v) {
  std::vector<double> mag(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) mag[i] = std::fabs(v[i]);
  std::sort(mag.begin(), mag.end());
  const std::size_t n = mag.size();
  return n % 2 == 1 ? mag[n / 2] : 0.5 * (mag[n / 2 - 1] + mag[n / 2]);
}

int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

std::vector<std::size_t> top_indices(const std::vector<double>& v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (v[a] != v[b]) return v[a] > v[b];
    return a < b;
  });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

}  // namespace

AgreementReport agreement(const std::vector<double>& a, const std::vector<double>& b,
                          std::size_t top_k) {
  if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("agreement needs two equal-length nonempty score vectors");
  }
  AgreementReport out;
  const double med_a = median_magnitude(a);
  const double med_b = median_magnitude(b);
  std::size_t both = 0, agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::fabs(a[i]) > med_a && std::fabs(b[i]) > med_b) {
      ++both;
      if (sign_of(a[i]) == sign_of(b[i])) ++agree;
    }
  }
  out.compared_tokens = both;
  out.sign_agreement = both == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(both);

  std::set<std::size_t> union_set;
  for (std::size_t i : top_indices(a, top_k)) union_set.insert(i);
  for (std::size_t i : top_indices(b, top_k)) union_set.insert(i);
  const std::vector<std::size_t> u(union_set.begin(), union_set.end());
  long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  const std::size_t n = u.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[u[i]] - a[u[j]];
      const double db = b[u[i]] - b[u[j]];
      if (da == 0.0) ++ties_a;
      if (db == 0.0) ++ties_b;
      if (da * db > 0.0) ++concordant;
      if (da * db < 0.0) ++discordant;
    }
  }
  const auto pairs = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
  const double denom = std::sqrt(static_cast<double>(pairs - ties_a)) *
                       std::sqrt(static_cast<double>(pairs - ties_b));
  out.kendall_tau = denom > 0.0 ? static_cast<double>(concordant - discordant) / denom : 0.0;
  return out;
}

}  // namespace textdecon::baselines
