#include "textdecon/cli.hpp"

#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "textdecon/baselines.hpp"
#include "textdecon/corpus.hpp"
#include "textdecon/model.hpp"
#include "textdecon/report.hpp"
#include "textdecon/saliency.hpp"

namespace textdecon::cli {

using nlohmann::json;

namespace {

std::array<bool, 3> parse_channels(const std::string& spec) {
  std::array<bool, 3> enabled = {false, false, false};
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part == "w" || part == "word") {
      enabled[0] = true;
    } else if (part == "pos") {
      enabled[1] = true;
    } else if (part == "l" || part == "lemma") {
      enabled[2] = true;
    } else {
      throw CLI::ValidationError("--channels", "unknown channel '" + part + "'");
    }
  }
  if (!enabled[0] && !enabled[1] && !enabled[2]) {
    throw CLI::ValidationError("--channels", "at least one channel required");
  }
  return enabled;
}

void write_output(const std::string& path, const std::string& content, std::ostream& out) {
  if (path.empty()) {
    out << content;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open output file: " + path);
  f << content;
}

struct LoadedCorpus {
  std::vector<corpus::Document> docs;
  std::vector<corpus::Segment> segments;
};

// Shared explain/rank/compare path: the checkpoint's vocabularies and
// segment length drive segmentation and encoding.
LoadedCorpus load_for_model(const model::Model& model, const std::string& corpus_path,
                            bool filter, std::size_t stride) {
  LoadedCorpus lc;
  lc.docs = corpus::parse_corpus(corpus_path);
  if (filter) corpus::apply_filters(lc.docs);
  const std::size_t m = model.config.segment_len;
  lc.segments = corpus::segment_corpus(lc.docs, model.class_labels, m, stride ? stride : m);
  corpus::encode_all(lc.segments, model.vocabs);
  return lc;
}

std::size_t class_index_of(const model::Model& model, const std::string& label) {
  for (std::size_t i = 0; i < model.class_labels.size(); ++i) {
    if (model.class_labels[i] == label) return i;
  }
  throw std::runtime_error("class '" + label + "' not in model (classes: " +
                           [&] {
                             std::string s;
                             for (const auto& l : model.class_labels) s += l + " ";
                             return s;
                           }());
}

// wTDS side of a baseline comparison: centered scores for the target class
// on the word channel (or the first enabled channel).
std::vector<double> wtds_compare_scores(const model::Model& m,
                                        const saliency::SegmentExplanation& explanation,
                                        std::size_t target) {
  std::size_t ci = 0;
  for (model::Channel c : model::kChannels) {
    if (m.config.enabled(c)) {
      ci = static_cast<std::size_t>(c);
      break;
    }
  }
  std::vector<double> scores(m.config.segment_len);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = explanation.tokens[i].wtds[ci][target] -
                (explanation.centered ? 0.0 : explanation.baseline[target]);
  }
  return scores;
}

json history_json(const model::TrainHistory& history) {
  return json{{"train_loss", history.train_loss},
              {"train_accuracy", history.train_accuracy},
              {"val_loss", history.val_loss},
              {"val_accuracy", history.val_accuracy},
              {"stopped_epoch", history.stopped_epoch},
              {"best_epoch", history.best_epoch},
              {"final_val_accuracy",
               history.val_accuracy.empty() ? 0.0 : history.val_accuracy.back()}};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"multi-channel convolution/deconvolution text classifier with "
               "deconvolution-saliency explanations",
               "textdecon"};
  app.require_subcommand(1);

  // ---- gen ----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "generate a planted-marker synthetic corpus");
  std::string gen_out, gen_truth, gen_marker_pos = "NN";
  corpus::SyntheticSpec spec;
  gen->add_option("--out", gen_out, "corpus file to write")->required();
  gen->add_option("--truth", gen_truth, "ground-truth sidecar (default <out>.truth.tsv)");
  gen->add_option("--classes", spec.classes, "number of classes");
  gen->add_option("--segs-per-class", spec.segments_per_class, "segments per class");
  gen->add_option("--segment-len", spec.segment_len, "tokens per segment");
  gen->add_option("--markers-per-class", spec.marker_words_per_class, "marker words per class");
  gen->add_option("--background-vocab", spec.background_vocab, "background vocabulary size");
  gen->add_option("--rate", spec.injection_rate, "per-marker injection probability");
  gen->add_option("--seed", spec.seed, "random seed");
  gen->add_option("--marker-pos", gen_marker_pos, "POS tag assigned to marker tokens");

  // ---- train --------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a classifier on a tagged corpus");
  std::string tr_corpus, tr_out, tr_history, tr_channels = "w,pos,lemma";
  std::uint64_t tr_seed = 0;
  std::size_t tr_m = 50, tr_stride = 0, tr_min_count = 2;
  model::TrainOptions tr_opt;
  bool tr_filter = false, tr_split_by_doc = false;
  train_cmd->add_option("--corpus", tr_corpus, "tagged corpus file")->required();
  train_cmd->add_option("--out", tr_out, "checkpoint file to write")->required();
  train_cmd->add_option("--history", tr_history, "history file (default <out>.history.json)");
  train_cmd->add_option("--seed", tr_seed, "random seed");
  train_cmd->add_option("--segment-len", tr_m, "tokens per segment");
  train_cmd->add_option("--stride", tr_stride, "segmentation stride (default segment-len)");
  train_cmd->add_option("--epochs", tr_opt.epochs, "maximum training epochs");
  train_cmd->add_option("--batch", tr_opt.batch_size, "mini-batch size");
  train_cmd->add_option("--patience", tr_opt.patience, "early-stopping patience");
  train_cmd->add_option("--min-count", tr_min_count, "vocabulary frequency cutoff");
  train_cmd->add_option("--channels", tr_channels, "enabled channels, e.g. w,pos,lemma");
  train_cmd->add_flag("--filter", tr_filter, "apply name/date/class-unique replacement rules");
  train_cmd->add_flag("--split-by-doc", tr_split_by_doc, "hold out whole documents");

  // ---- explain ------------------------------------------------------------
  auto* explain_cmd = app.add_subcommand("explain", "explain one segment's classification");
  std::string ex_model, ex_corpus, ex_out, ex_format = "json", ex_threshold = "meanstd";
  std::string ex_class;
  long long ex_segment_id = -1;
  std::size_t ex_stride = 0, ex_lime_samples = 1000, ex_top = 5;
  std::uint64_t ex_seed = 0;
  bool ex_centered = false, ex_filter = false, ex_with_rank = false, ex_compare = false;
  explain_cmd->add_option("--model", ex_model, "checkpoint file")->required();
  explain_cmd->add_option("--corpus", ex_corpus, "tagged corpus file")->required();
  explain_cmd->add_option("--segment-id", ex_segment_id, "segment to explain")->required();
  explain_cmd->add_option("--threshold", ex_threshold, "meanstd | abs:X | quantile:Q");
  explain_cmd->add_flag("--centered", ex_centered, "report wTDS minus the x=0 baseline");
  explain_cmd->add_option("--format", ex_format, "json | html")
      ->check(CLI::IsMember({"json", "html"}));
  explain_cmd->add_option("--out", ex_out, "output file (default stdout)");
  explain_cmd->add_option("--stride", ex_stride, "segmentation stride");
  explain_cmd->add_flag("--filter", ex_filter, "apply replacement rules before segmentation");
  explain_cmd->add_flag("--with-rank", ex_with_rank, "rank the segment within the corpus");
  explain_cmd->add_flag("--compare-lime", ex_compare, "attach a local-linear baseline comparison");
  explain_cmd->add_option("--lime-samples", ex_lime_samples, "perturbation sample count");
  explain_cmd->add_option("--class", ex_class, "comparison target class (default predicted)");
  explain_cmd->add_option("--top", ex_top, "top_k for the agreement metrics");
  explain_cmd->add_option("--seed", ex_seed, "sampler seed");

  // ---- rank ---------------------------------------------------------------
  auto* rank_cmd = app.add_subcommand("rank", "rank segments by pre-softmax activation");
  std::string rk_model, rk_corpus, rk_class, rk_out, rk_format = "json";
  std::size_t rk_top = 10, rk_stride = 0;
  bool rk_correct_only = false, rk_filter = false;
  rank_cmd->add_option("--model", rk_model, "checkpoint file")->required();
  rank_cmd->add_option("--corpus", rk_corpus, "tagged corpus file")->required();
  rank_cmd->add_option("--class", rk_class, "class label to rank for")->required();
  rank_cmd->add_option("--top", rk_top, "number of key segments to keep");
  rank_cmd->add_flag("--correct-only", rk_correct_only, "keep correctly classified segments only");
  rank_cmd->add_option("--format", rk_format, "json | tsv | html")
      ->check(CLI::IsMember({"json", "tsv", "html"}));
  rank_cmd->add_option("--out", rk_out, "output file (default stdout)");
  rank_cmd->add_option("--stride", rk_stride, "segmentation stride");
  rank_cmd->add_flag("--filter", rk_filter, "apply replacement rules before segmentation");

  // ---- stats --------------------------------------------------------------
  auto* stats_cmd = app.add_subcommand("stats", "corpus statistics and lexical z-scores");
  std::string st_corpus, st_out, st_format = "json", st_sentence_tag = "SENT";
  std::size_t st_top = 25;
  bool st_filter = false;
  stats_cmd->add_option("--corpus", st_corpus, "tagged corpus file")->required();
  stats_cmd->add_option("--format", st_format, "json | tsv | html")
      ->check(CLI::IsMember({"json", "tsv", "html"}));
  stats_cmd->add_option("--out", st_out, "output file (default stdout)");
  stats_cmd->add_option("--top", st_top, "z-score rows per class");
  stats_cmd->add_option("--sentence-tag", st_sentence_tag, "sentence-terminator POS tag");
  stats_cmd->add_flag("--filter", st_filter, "apply replacement rules first");

  // ---- compare ------------------------------------------------------------
  auto* compare_cmd =
      app.add_subcommand("compare", "agreement between wTDS and the local-linear baseline");
  std::string cp_model, cp_corpus, cp_class, cp_out, cp_format = "json";
  long long cp_segment_id = -1;
  std::size_t cp_samples = 1000, cp_top = 5, cp_stride = 0;
  double cp_kernel = 0.75, cp_lambda = 1.0;
  std::uint64_t cp_seed = 0;
  bool cp_filter = false;
  compare_cmd->add_option("--model", cp_model, "checkpoint file")->required();
  compare_cmd->add_option("--corpus", cp_corpus, "tagged corpus file")->required();
  compare_cmd->add_option("--segment-id", cp_segment_id, "segment to compare on")->required();
  compare_cmd->add_option("--class", cp_class, "target class (default predicted)");
  compare_cmd->add_option("--lime-samples", cp_samples, "perturbation sample count");
  compare_cmd->add_option("--top", cp_top, "top_k for the agreement metrics");
  compare_cmd->add_option("--kernel-width", cp_kernel, "proximity kernel width");
  compare_cmd->add_option("--ridge", cp_lambda, "ridge regularization strength");
  compare_cmd->add_option("--seed", cp_seed, "sampler seed");
  compare_cmd->add_option("--format", cp_format, "json | tsv")
      ->check(CLI::IsMember({"json", "tsv"}));
  compare_cmd->add_option("--out", cp_out, "output file (default stdout)");
  compare_cmd->add_option("--stride", cp_stride, "segmentation stride");
  compare_cmd->add_flag("--filter", cp_filter, "apply replacement rules before segmentation");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream buffer;
    const int code = app.exit(e, buffer, buffer);
    (code == 0 ? out : err) << buffer.str();
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      spec.marker_pos = gen_marker_pos;
      const auto corpus = corpus::gen_synthetic(spec);
      if (gen_truth.empty()) gen_truth = gen_out + ".truth.tsv";
      corpus::write_synthetic(corpus, gen_out, gen_truth);
      out << "wrote " << corpus.documents.size() << " segments ("
          << corpus.truth.size() << " injected markers) to " << gen_out << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      auto docs = corpus::parse_corpus(tr_corpus);
      if (tr_filter) corpus::apply_filters(docs);
      const auto labels = corpus::collect_class_labels(docs);
      auto segments =
          corpus::segment_corpus(docs, labels, tr_m, tr_stride ? tr_stride : tr_m);
      const auto vocabs = corpus::build_vocabularies(segments, tr_min_count);
      corpus::encode_all(segments, vocabs);
      const auto split = tr_split_by_doc ? corpus::split_by_document(std::move(segments), tr_seed)
                                         : corpus::split(std::move(segments), tr_seed);
      model::Model m;
      m.config.segment_len = tr_m;
      m.config.classes = labels.size();
      m.config.channel_enabled = parse_channels(tr_channels);
      m.config.vocab_size = {vocabs.word.size(), vocabs.pos.size(), vocabs.lemma.size()};
      m.config.seed = tr_seed;
      m.vocabs = vocabs;
      m.class_labels = labels;
      m.params = model::init(m.config);
      const auto history = model::train(m.config, m.params, split, tr_opt);
      model::save(m, tr_out);
      if (tr_history.empty()) tr_history = tr_out + ".history.json";
      write_output(tr_history, history_json(history).dump(2) + "\n", out);
      out << "trained " << labels.size() << " classes, " << split.train.size() << "/"
          << split.validation.size() << " train/validation segments\n"
          << "stopped at epoch " << history.stopped_epoch << " (best " << history.best_epoch
          << "), validation accuracy " << history.val_accuracy[history.best_epoch - 1] << "\n";
      return 0;
    }

    if (explain_cmd->parsed()) {
      auto m = model::load(ex_model);
      const auto fingerprint = report::file_fingerprint(ex_model);
      const auto lc = load_for_model(m, ex_corpus, ex_filter, ex_stride);
      if (ex_segment_id < 0 || static_cast<std::size_t>(ex_segment_id) >= lc.segments.size()) {
        throw std::runtime_error("segment id " + std::to_string(ex_segment_id) +
                                 " out of range [0," + std::to_string(lc.segments.size()) + ")");
      }
      const auto& segment = lc.segments[static_cast<std::size_t>(ex_segment_id)];
      const auto rule = saliency::ThresholdRule::parse(ex_threshold);
      auto explanation = saliency::explain_segment(m, segment, rule, ex_centered);

      std::optional<report::RankingContext> ranking;
      if (ex_with_rank) {
        const auto ranked = saliency::rank_segments(
            m, lc.segments, static_cast<std::size_t>(explanation.predicted_class));
        for (std::size_t i = 0; i < ranked.size(); ++i) {
          if (ranked[i].segment_id == segment.id) {
            ranking = report::RankingContext{i + 1, ranked.size(), ranked[i].activation};
            break;
          }
        }
      }
      std::optional<report::CompareBlock> compare;
      if (ex_compare) {
        const std::size_t target = ex_class.empty()
                                       ? static_cast<std::size_t>(explanation.predicted_class)
                                       : class_index_of(m, ex_class);
        baselines::LimeOptions lo;
        lo.samples = ex_lime_samples;
        lo.seed = ex_seed;
        report::CompareBlock block;
        block.lime = baselines::lime_explain(m, segment, target, lo);
        block.wtds_scores = wtds_compare_scores(m, explanation, target);
        block.agreement = baselines::agreement(block.wtds_scores, block.lime.weights, ex_top);
        compare = std::move(block);
      }
      const auto j =
          report::explain_report(fingerprint, m, segment, explanation, rule, ranking, compare);
      write_output(ex_out, ex_format == "html" ? report::explain_html(j) : j.dump(2) + "\n", out);
      return 0;
    }

    if (rank_cmd->parsed()) {
      auto m = model::load(rk_model);
      const auto fingerprint = report::file_fingerprint(rk_model);
      const auto lc = load_for_model(m, rk_corpus, rk_filter, rk_stride);
      auto ranked =
          saliency::rank_segments(m, lc.segments, class_index_of(m, rk_class), rk_correct_only);
      if (ranked.size() > rk_top) ranked.resize(rk_top);
      const auto j = report::rank_report(fingerprint, ranked, m.class_labels);
      std::string text = rk_format == "tsv"    ? report::rank_tsv(j)
                         : rk_format == "html" ? report::rank_html(j)
                                               : j.dump(2) + "\n";
      write_output(rk_out, text, out);
      return 0;
    }

    if (stats_cmd->parsed()) {
      auto docs = corpus::parse_corpus(st_corpus);
      if (st_filter) corpus::apply_filters(docs);
      const auto stats = corpus::corpus_stats(docs, st_sentence_tag);
      const auto zscores = baselines::ZScoreTable::build(docs);
      const auto j = report::stats_report(stats, zscores, st_top);
      std::string text = st_format == "tsv"    ? report::stats_tsv(j)
                         : st_format == "html" ? report::stats_html(j)
                                               : j.dump(2) + "\n";
      write_output(st_out, text, out);
      return 0;
    }

    if (compare_cmd->parsed()) {
      auto m = model::load(cp_model);
      const auto fingerprint = report::file_fingerprint(cp_model);
      const auto lc = load_for_model(m, cp_corpus, cp_filter, cp_stride);
      if (cp_segment_id < 0 || static_cast<std::size_t>(cp_segment_id) >= lc.segments.size()) {
        throw std::runtime_error("segment id " + std::to_string(cp_segment_id) +
                                 " out of range [0," + std::to_string(lc.segments.size()) + ")");
      }
      const auto& segment = lc.segments[static_cast<std::size_t>(cp_segment_id)];
      auto explanation = saliency::explain_segment(m, segment);
      const std::size_t target = cp_class.empty()
                                     ? static_cast<std::size_t>(explanation.predicted_class)
                                     : class_index_of(m, cp_class);
      baselines::LimeOptions lo;
      lo.samples = cp_samples;
      lo.kernel_width = cp_kernel;
      lo.ridge_lambda = cp_lambda;
      lo.seed = cp_seed;
      report::CompareBlock block;
      block.lime = baselines::lime_explain(m, segment, target, lo);
      block.wtds_scores = wtds_compare_scores(m, explanation, target);
      block.agreement = baselines::agreement(block.wtds_scores, block.lime.weights, cp_top);
      const auto j = report::compare_report(fingerprint, segment,
                                            m.class_labels.at(target), block);
      write_output(cp_out, cp_format == "tsv" ? report::compare_tsv(j) : j.dump(2) + "\n", out);
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << "error: no command\n";
  return 2;
}

}  // namespace textdecon::cli
