#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textdecon/baselines.hpp"
#include "textdecon/corpus.hpp"
#include "textdecon/model.hpp"
#include "textdecon/saliency.hpp"

namespace textdecon::report {

inline constexpr int kSchemaVersion = 1;

std::uint64_t fnv1a64(std::string_view data);
std::string file_fingerprint(const std::string& path);  // 16 hex digits

struct RankingContext {
  std::size_t rank = 0;  // 1-based position among the scored segments
  std::size_t of = 0;
  double activation = 0.0;
};

struct CompareBlock {
  baselines::LocalExplanation lime;
  baselines::AgreementReport agreement;
  std::vector<double> wtds_scores;  // the wTDS side of the comparison
  std::size_t wtds_model_evaluations = 1;
};

nlohmann::json explain_report(const std::string& model_fingerprint, const model::Model& model,
                              const corpus::Segment& segment,
                              const saliency::SegmentExplanation& explanation,
                              const saliency::ThresholdRule& rule,
                              const std::optional<RankingContext>& ranking = std::nullopt,
                              const std::optional<CompareBlock>& compare = std::nullopt);

// Self-contained static page: token stream with per-channel highlight colors
// (blue = word, orange = pos, green = lemma), a per-channel top-token table
// and the full report embedded as JSON.
std::string explain_html(const nlohmann::json& report);

nlohmann::json rank_report(const std::string& model_fingerprint,
                           const std::vector<saliency::RankedSegment>& ranked,
                           const std::vector<std::string>& class_labels);
std::string rank_tsv(const nlohmann::json& report);
std::string rank_html(const nlohmann::json& report);

nlohmann::json stats_report(const corpus::CorpusStats& stats, const baselines::ZScoreTable& zscores,
                            std::size_t top_per_class);
std::string stats_tsv(const nlohmann::json& report);
std::string stats_html(const nlohmann::json& report);

nlohmann::json compare_report(const std::string& model_fingerprint, const corpus::Segment& segment,
                              const std::string& class_label, const CompareBlock& block);
std::string compare_tsv(const nlohmann::json& report);

// Validates a document against the subset of JSON Schema used by
// docs/explain_report.schema.json: type, required, properties, items, enum.
bool validate_schema(const nlohmann::json& doc, const nlohmann::json& schema, std::string* error);

}  // namespace textdecon::report
