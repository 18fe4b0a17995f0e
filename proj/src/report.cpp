#include "textdecon/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace textdecon::report {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file for fingerprinting: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  char out[17];
  std::snprintf(out, sizeof out, "%016llx",
                static_cast<unsigned long long>(fnv1a64(buf.str())));
  return out;
}

namespace {

const char* kChannelKeys[3] = {"word", "pos", "lemma"};

json saliency_json(const model::ModelConfig& config, const saliency::TokenSaliency& tok) {
  json s = json::object();
  for (model::Channel c : model::kChannels) {
    if (!config.enabled(c)) continue;
    const auto ci = static_cast<std::size_t>(c);
    s[kChannelKeys[ci]] = {{"tds", tok.tds[ci]}, {"wtds", tok.wtds[ci]}};
  }
  return s;
}

std::string html_escape(const std::string& in) {
  std::string out;
  out.reserve(in.size());
  for (char c : in) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

json explain_report(const std::string& model_fingerprint, const model::Model& model,
                    const corpus::Segment& segment,
                    const saliency::SegmentExplanation& explanation,
                    const saliency::ThresholdRule& rule,
                    const std::optional<RankingContext>& ranking,
                    const std::optional<CompareBlock>& compare) {
  const auto& config = model.config;
  json tokens = json::array();
  for (std::size_t m = 0; m < explanation.tokens.size(); ++m) {
    const auto& tt = segment.tokens.at(m);
    tokens.push_back({{"position", m},
                      {"surface", tt.surface},
                      {"pos", tt.pos},
                      {"lemma", tt.lemma},
                      {"saliency", saliency_json(config, explanation.tokens[m])}});
  }
  json highlights = json::object();
  json channels = json::array();
  for (model::Channel c : model::kChannels) {
    if (!config.enabled(c)) continue;
    const auto ci = static_cast<std::size_t>(c);
    channels.push_back(kChannelKeys[ci]);
    highlights[kChannelKeys[ci]] = explanation.highlights[ci];
  }
  json j{{"schema_version", kSchemaVersion},
         {"model_fingerprint", model_fingerprint},
         {"segment",
          {{"id", segment.id},
           {"doc_id", segment.doc_id},
           {"class_index", segment.class_index},
           {"class_label", model.class_labels.at(static_cast<std::size_t>(segment.class_index))}}},
         {"predicted_class", explanation.predicted_class},
         {"predicted_label",
          model.class_labels.at(static_cast<std::size_t>(explanation.predicted_class))},
         {"class_labels", model.class_labels},
         {"logits", explanation.logits},
         {"probabilities", explanation.probs},
         {"baseline", explanation.baseline},
         {"centered", explanation.centered},
         {"threshold", {{"rule", rule.to_string()}}},
         {"channels", channels},
         {"tokens", tokens},
         {"highlights", highlights}};
  if (ranking) {
    j["ranking"] = {{"rank", ranking->rank}, {"of", ranking->of},
                    {"activation", ranking->activation}};
  } else {
    j["ranking"] = nullptr;
  }
  if (compare) {
    j["baselines"] = {{"lime",
                       {{"weights", compare->lime.weights},
                        {"intercept", compare->lime.intercept},
                        {"weighted_r2", compare->lime.weighted_r2},
                        {"model_evaluations", compare->lime.model_evaluations}}},
                      {"wtds_scores", compare->wtds_scores},
                      {"wtds_model_evaluations", compare->wtds_model_evaluations},
                      {"sign_agreement", compare->agreement.sign_agreement},
                      {"kendall_tau", compare->agreement.kendall_tau}};
  } else {
    j["baselines"] = nullptr;
  }
  return j;
}

std::string explain_html(const json& report) {
  const auto channels = report.at("channels").get<std::vector<std::string>>();
  const auto pred = report.at("predicted_class").get<int>();
  std::ostringstream os;
  os << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
     << "<title>segment " << report.at("segment").at("id") << " — "
     << html_escape(report.at("predicted_label").get<std::string>()) << "</title>\n"
     << "<style>\n"
        "body{font-family:Georgia,serif;max-width:72em;margin:2em auto;line-height:1.9}\n"
        ".tok{padding:0 .08em;border-radius:2px}\n"
        ".hl-word{background:#bcd6ff}\n"
        ".hl-pos{border-bottom:3px solid #ff9d2e}\n"
        ".hl-lemma{box-shadow:inset 0 -0.45em #9fdf9f}\n"
        "table{border-collapse:collapse;font-family:monospace;font-size:.9em}\n"
        "td,th{border:1px solid #ccc;padding:.2em .6em;text-align:right}\n"
        "td:first-child,th:first-child{text-align:left}\n"
        ".legend span{margin-right:1.4em}\n"
        "</style>\n</head>\n<body>\n";
  os << "<h1>segment " << report.at("segment").at("id") << "</h1>\n";
  os << "<p>document <b>" << html_escape(report.at("segment").at("doc_id").get<std::string>())
     << "</b>, true class <b>"
     << html_escape(report.at("segment").at("class_label").get<std::string>())
     << "</b>, predicted <b>" << html_escape(report.at("predicted_label").get<std::string>())
     << "</b> (p=" << report.at("probabilities").at(static_cast<std::size_t>(pred))
     << "), threshold " << html_escape(report.at("threshold").at("rule").get<std::string>())
     << (report.at("centered").get<bool>() ? ", centered" : "") << "</p>\n";
  os << "<p class=\"legend\"><span class=\"tok hl-word\">word</span>"
     << "<span class=\"tok hl-pos\">part-of-speech</span>"
     << "<span class=\"tok hl-lemma\">lemma</span></p>\n<p>\n";

  std::array<std::vector<bool>, 3> marked;
  const auto& tokens = report.at("tokens");
  for (std::size_t ci = 0; ci < 3; ++ci) {
    marked[ci].assign(tokens.size(), false);
    const char* key = kChannelKeys[ci];
    if (report.at("highlights").contains(key)) {
      for (const auto& pos : report.at("highlights").at(key)) {
        marked[ci][pos.get<std::size_t>()] = true;
      }
    }
  }
  for (std::size_t m = 0; m < tokens.size(); ++m) {
    const auto& tok = tokens.at(m);
    std::string cls = "tok";
    if (marked[0][m]) cls += " hl-word";
    if (marked[1][m]) cls += " hl-pos";
    if (marked[2][m]) cls += " hl-lemma";
    std::ostringstream title;
    title << "pos " << m << " [" << html_escape(tok.at("pos").get<std::string>()) << " / "
          << html_escape(tok.at("lemma").get<std::string>()) << "]";
    for (const auto& ch : channels) {
      title << " " << ch << " wtds=" << tok.at("saliency").at(ch).at("wtds").at(
          static_cast<std::size_t>(pred));
    }
    os << "<span class=\"" << cls << "\" title=\"" << title.str() << "\">"
       << html_escape(tok.at("surface").get<std::string>()) << "</span> ";
  }
  os << "\n</p>\n";

  // Per-channel table of the predicted-class wTDS, strongest tokens first.
  for (const auto& ch : channels) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t m = 0; m < tokens.size(); ++m) {
      scored.emplace_back(
          tokens.at(m).at("saliency").at(ch).at("wtds").at(static_cast<std::size_t>(pred))
              .get<double>(),
          m);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    os << "<h2>" << ch << " channel</h2>\n<table>\n<tr><th>token</th><th>position</th>"
       << "<th>tds</th><th>wtds[" << html_escape(report.at("predicted_label").get<std::string>())
       << "]</th></tr>\n";
    const std::size_t show = std::min<std::size_t>(10, scored.size());
    for (std::size_t r = 0; r < show; ++r) {
      const auto& tok = tokens.at(scored[r].second);
      os << "<tr><td>" << html_escape(tok.at("surface").get<std::string>()) << "</td><td>"
         << scored[r].second << "</td><td>" << tok.at("saliency").at(ch).at("tds") << "</td><td>"
         << scored[r].first << "</td></tr>\n";
    }
    os << "</table>\n";
  }
  os << "<script type=\"application/json\" id=\"report-data\">\n"
     << report.dump() << "\n</script>\n</body>\n</html>\n";
  return os.str();
}

json rank_report(const std::string& model_fingerprint,
                 const std::vector<saliency::RankedSegment>& ranked,
                 const std::vector<std::string>& class_labels) {
  json rows = json::array();
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    rows.push_back({{"rank", i + 1},
                    {"segment_id", r.segment_id},
                    {"class_index", r.class_index},
                    {"class_label", class_labels.at(static_cast<std::size_t>(r.class_index))},
                    {"activation", r.activation},
                    {"probability", r.probability}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"model_fingerprint", model_fingerprint},
              {"segments", rows}};
}

std::string rank_tsv(const json& report) {
  std::ostringstream os;
  os << "rank\tsegment_id\tclass_label\tactivation\tprobability\n";
  for (const auto& row : report.at("segments")) {
    os << row.at("rank") << '\t' << row.at("segment_id") << '\t'
       << row.at("class_label").get<std::string>() << '\t' << row.at("activation") << '\t'
       << row.at("probability") << "\n";
  }
  return os.str();
}

std::string rank_html(const json& report) {
  std::ostringstream os;
  os << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>key segments</title>"
     << "<style>table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:.2em .6em}"
     << "</style></head><body>\n<h1>key segments</h1>\n<table>\n"
     << "<tr><th>rank</th><th>segment</th><th>class</th><th>activation</th>"
     << "<th>probability</th></tr>\n";
  for (const auto& row : report.at("segments")) {
    os << "<tr><td>" << row.at("rank") << "</td><td>" << row.at("segment_id") << "</td><td>"
       << html_escape(row.at("class_label").get<std::string>()) << "</td><td>"
       << row.at("activation") << "</td><td>" << row.at("probability") << "</td></tr>\n";
  }
  os << "</table>\n</body></html>\n";
  return os.str();
}

json stats_report(const corpus::CorpusStats& stats, const baselines::ZScoreTable& zscores,
                  std::size_t top_per_class) {
  json classes = json::object();
  for (const auto& [cls, words] : stats.class_word_counts) {
    classes[cls] = {{"words", words},
                    {"sentences", stats.class_sentence_counts.at(cls)},
                    {"avg_sentence_len", stats.class_avg_sentence_len.at(cls)}};
  }
  json ztable = json::array();
  const auto words = zscores.words();
  for (const auto& cls : zscores.classes()) {
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& word : words) {
      const auto e = zscores.entry(word, cls);
      scored.emplace_back(e.z, word);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (std::fabs(a.first) != std::fabs(b.first)) return std::fabs(a.first) > std::fabs(b.first);
      return a.second < b.second;
    });
    const std::size_t show = std::min(top_per_class, scored.size());
    for (std::size_t i = 0; i < show; ++i) {
      const auto e = zscores.entry(scored[i].second, cls);
      ztable.push_back({{"word", scored[i].second},
                        {"class", cls},
                        {"count_in_class", e.count_in_class},
                        {"class_total", e.class_total},
                        {"corpus_count", e.corpus_count},
                        {"corpus_total", e.corpus_total},
                        {"z", e.z}});
    }
  }
  return json{{"schema_version", kSchemaVersion},
              {"classes", classes},
              {"vocabulary_size", stats.vocabulary_size},
              {"total_words", stats.total_words},
              {"zscores", ztable}};
}

std::string stats_tsv(const json& report) {
  std::ostringstream os;
  os << "class\twords\tsentences\tavg_sentence_len\n";
  for (const auto& [cls, row] : report.at("classes").items()) {
    os << cls << '\t' << row.at("words") << '\t' << row.at("sentences") << '\t'
       << row.at("avg_sentence_len") << "\n";
  }
  os << "\nword\tclass\tcount_in_class\tclass_total\tcorpus_count\tcorpus_total\tz\n";
  for (const auto& row : report.at("zscores")) {
    os << row.at("word").get<std::string>() << '\t' << row.at("class").get<std::string>() << '\t'
       << row.at("count_in_class") << '\t' << row.at("class_total") << '\t'
       << row.at("corpus_count") << '\t' << row.at("corpus_total") << '\t' << row.at("z") << "\n";
  }
  return os.str();
}

std::string stats_html(const json& report) {
  std::ostringstream os;
  os << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>corpus statistics</title>"
     << "<style>table{border-collapse:collapse;margin-bottom:2em}"
     << "td,th{border:1px solid #ccc;padding:.2em .6em}</style></head><body>\n"
     << "<h1>corpus statistics</h1>\n<p>total words: " << report.at("total_words")
     << ", distinct surface forms: " << report.at("vocabulary_size") << "</p>\n<table>\n"
     << "<tr><th>class</th><th>words</th><th>sentences</th><th>avg sentence length</th></tr>\n";
  for (const auto& [cls, row] : report.at("classes").items()) {
    os << "<tr><td>" << html_escape(cls) << "</td><td>" << row.at("words") << "</td><td>"
       << row.at("sentences") << "</td><td>" << row.at("avg_sentence_len") << "</td></tr>\n";
  }
  os << "</table>\n<table>\n<tr><th>word</th><th>class</th><th>k</th><th>n</th><th>K_w</th>"
     << "<th>T</th><th>z</th></tr>\n";
  for (const auto& row : report.at("zscores")) {
    os << "<tr><td>" << html_escape(row.at("word").get<std::string>()) << "</td><td>"
       << html_escape(row.at("class").get<std::string>()) << "</td><td>"
       << row.at("count_in_class") << "</td><td>" << row.at("class_total") << "</td><td>"
       << row.at("corpus_count") << "</td><td>" << row.at("corpus_total") << "</td><td>"
       << row.at("z") << "</td></tr>\n";
  }
  os << "</table>\n</body></html>\n";
  return os.str();
}

json compare_report(const std::string& model_fingerprint, const corpus::Segment& segment,
                    const std::string& class_label, const CompareBlock& block) {
  return json{{"schema_version", kSchemaVersion},
              {"model_fingerprint", model_fingerprint},
              {"segment_id", segment.id},
              {"class_label", class_label},
              {"wtds_scores", block.wtds_scores},
              {"lime_weights", block.lime.weights},
              {"lime_intercept", block.lime.intercept},
              {"lime_weighted_r2", block.lime.weighted_r2},
              {"lime_model_evaluations", block.lime.model_evaluations},
              {"wtds_model_evaluations", block.wtds_model_evaluations},
              {"sign_agreement", block.agreement.sign_agreement},
              {"kendall_tau", block.agreement.kendall_tau},
              {"compared_tokens", block.agreement.compared_tokens}};
}

std::string compare_tsv(const json& report) {
  std::ostringstream os;
  os << "segment_id\tclass\tsign_agreement\tkendall_tau\tlime_evaluations\twtds_evaluations\n";
  os << report.at("segment_id") << '\t' << report.at("class_label").get<std::string>() << '\t'
     << report.at("sign_agreement") << '\t' << report.at("kendall_tau") << '\t'
     << report.at("lime_model_evaluations") << '\t' << report.at("wtds_model_evaluations") << "\n";
  return os.str();
}

namespace {

bool type_matches(const json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "integer") return value.is_number_integer();
  if (type == "number") return value.is_number();
  if (type == "boolean") return value.is_boolean();
  if (type == "null") return value.is_null();
  return false;
}

const json* resolve_ref(const json& root, const std::string& ref) {
  if (ref.rfind("#/", 0) != 0) return nullptr;
  const json* node = &root;
  std::stringstream ss(ref.substr(2));
  std::string part;
  while (std::getline(ss, part, '/')) {
    if (!node->is_object() || !node->contains(part)) return nullptr;
    node = &node->at(part);
  }
  return node;
}

bool validate_node(const json& value, const json& schema_in, const json& root,
                   const std::string& path, std::string* error) {
  const json* schema_ptr = &schema_in;
  if (schema_in.contains("$ref")) {
    schema_ptr = resolve_ref(root, schema_in.at("$ref").get<std::string>());
    if (!schema_ptr) {
      if (error) *error = path + ": unresolvable $ref";
      return false;
    }
  }
  const json& schema = *schema_ptr;
  if (schema.contains("type")) {
    const auto& t = schema.at("type");
    bool ok = false;
    if (t.is_string()) {
      ok = type_matches(value, t.get<std::string>());
    } else {
      for (const auto& alt : t) ok = ok || type_matches(value, alt.get<std::string>());
    }
    if (!ok) {
      if (error) *error = path + ": type mismatch";
      return false;
    }
  }
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& alt : schema.at("enum")) ok = ok || alt == value;
    if (!ok) {
      if (error) *error = path + ": value not in enum";
      return false;
    }
  }
  if (value.is_object()) {
    if (schema.contains("required")) {
      for (const auto& key : schema.at("required")) {
        if (!value.contains(key.get<std::string>())) {
          if (error) *error = path + ": missing required key '" + key.get<std::string>() + "'";
          return false;
        }
      }
    }
    if (schema.contains("properties")) {
      for (const auto& [key, sub] : schema.at("properties").items()) {
        if (value.contains(key) &&
            !validate_node(value.at(key), sub, root, path + "/" + key, error)) {
          return false;
        }
      }
    }
  }
  if (value.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (!validate_node(value.at(i), schema.at("items"), root, path + "/" + std::to_string(i),
                         error)) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

bool validate_schema(const json& doc, const json& schema, std::string* error) {
  return validate_node(doc, schema, schema, "", error);
}

}  // namespace textdecon::report
