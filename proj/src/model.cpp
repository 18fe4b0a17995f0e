#include "textdecon/model.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "textdecon/rng.hpp"

namespace textdecon::model {

using nlohmann::json;

namespace {

std::atomic<std::uint64_t> g_forward_evals{0};

// Distinct stream from parameter init so adding epochs never perturbs init.
constexpr std::uint64_t kTrainSeedSalt = 0x9e3779b97f4a7c15ULL;

void glorot_fill(grad::Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.value) v = rng.uniform(-bound, bound);
}

std::vector<double> one_hot_of(const corpus::Segment& seg, std::size_t k) {
  std::vector<double> z(k, 0.0);
  z.at(static_cast<std::size_t>(seg.class_index)) = 1.0;
  return z;
}

int argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

struct TapeTrace {
  std::array<grad::Tensor*, 3> deconv{};
  grad::Tensor* concat = nullptr;
  grad::Tensor* hidden = nullptr;
  grad::Tensor* logits = nullptr;
  grad::Tensor* probs = nullptr;
  grad::Tensor* loss = nullptr;
};

TapeTrace run_forward(grad::Tape& tape, const ModelConfig& cfg, ModelParams& params,
                      const corpus::Segment& seg, const std::vector<double>* one_hot) {
  if (seg.encoded.size() != cfg.segment_len) {
    throw std::invalid_argument("segment " + std::to_string(seg.id) + " has " +
                                std::to_string(seg.encoded.size()) + " encoded tokens, expected " +
                                std::to_string(cfg.segment_len));
  }
  g_forward_evals.fetch_add(1, std::memory_order_relaxed);
  TapeTrace tt;
  std::vector<grad::Tensor*> parts;
  for (Channel c : kChannels) {
    if (!cfg.enabled(c)) continue;
    const auto ci = static_cast<std::size_t>(c);
    auto& ch = params.channels[ci];
    std::vector<int> indices(cfg.segment_len);
    for (std::size_t m = 0; m < cfg.segment_len; ++m) indices[m] = seg.encoded[m][ci];
    grad::Tensor* embedded = tape.embedding_lookup(&ch.embedding, indices);
    grad::Tensor* conv = tape.conv1d_same(embedded, &ch.conv_w, &ch.conv_b);
    grad::Tensor* act = tape.relu(conv);
    grad::Tensor* pooled = tape.maxpool1d(act, cfg.pool);
    grad::Tensor* up = tape.upsample(pooled, cfg.pool);
    grad::Tensor* decon = tape.conv1d_transpose_same(up, &ch.deconv_w, &ch.deconv_b);
    tt.deconv[ci] = decon;
    parts.push_back(decon);
  }
  tt.concat = tape.concat_flat(parts);
  grad::Tensor* pre = tape.dense(tt.concat, &params.head.A, &params.head.b);
  tt.hidden = tape.relu(pre);
  tt.logits = tape.dense(tt.hidden, &params.head.C, &params.head.d);
  if (one_hot) {
    auto [probs, loss] = tape.softmax_cross_entropy(tt.logits, *one_hot);
    tt.probs = probs;
    tt.loss = loss;
  } else {
    tt.probs = tape.softmax(tt.logits);
  }
  return tt;
}

ModelParams clone_values(const ModelParams& params) { return params; }

}  // namespace

const char* channel_name(Channel c) {
  switch (c) {
    case Channel::word: return "word";
    case Channel::pos: return "pos";
    case Channel::lemma: return "lemma";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (kernel % 2 == 0) throw grad::ConfigError("kernel width h must be odd");
  if (pool == 0 || segment_len % pool != 0) {
    throw grad::ConfigError("pool size p must divide segment_len");
  }
  if (segment_len < 1 || classes < 1 || hidden < 1) {
    throw grad::ConfigError("segment_len, classes and hidden size must be >= 1");
  }
  bool any = false;
  for (Channel c : kChannels) {
    if (!enabled(c)) continue;
    any = true;
    if (embed(c) < 1 || filter_count(c) < 1) {
      throw grad::ConfigError(std::string("channel ") + channel_name(c) +
                              ": embedding size and filter count must be >= 1");
    }
    if (vocab(c) < 2) {
      throw grad::ConfigError(std::string("channel ") + channel_name(c) +
                              ": vocabulary size must cover PAD and UNK");
    }
  }
  if (!any) throw grad::ConfigError("at least one channel must be enabled");
}

std::size_t ModelConfig::concat_dim() const {
  std::size_t sum = 0;
  for (Channel c : kChannels) {
    if (enabled(c)) sum += embed(c);
  }
  return segment_len * sum;
}

std::size_t ModelConfig::channel_offset(Channel c) const {
  if (!enabled(c)) throw std::invalid_argument(std::string("channel ") + channel_name(c) + " is disabled");
  std::size_t off = 0;
  for (Channel prev : kChannels) {
    if (prev == c) break;
    if (enabled(prev)) off += segment_len * embed(prev);
  }
  return off;
}

std::vector<std::pair<std::string, grad::Tensor*>> ModelParams::named_tensors(
    const ModelConfig& cfg) {
  std::vector<std::pair<std::string, grad::Tensor*>> out;
  for (Channel c : kChannels) {
    if (!cfg.enabled(c)) continue;
    auto& ch = channels[static_cast<std::size_t>(c)];
    const std::string prefix = std::string("channel.") + channel_name(c) + ".";
    out.emplace_back(prefix + "embedding", &ch.embedding);
    out.emplace_back(prefix + "conv_w", &ch.conv_w);
    out.emplace_back(prefix + "conv_b", &ch.conv_b);
    out.emplace_back(prefix + "deconv_w", &ch.deconv_w);
    out.emplace_back(prefix + "deconv_b", &ch.deconv_b);
  }
  out.emplace_back("head.A", &head.A);
  out.emplace_back("head.b", &head.b);
  out.emplace_back("head.C", &head.C);
  out.emplace_back("head.d", &head.d);
  return out;
}

std::vector<grad::Tensor*> ModelParams::tensors(const ModelConfig& cfg) {
  std::vector<grad::Tensor*> out;
  for (auto& [name, t] : named_tensors(cfg)) out.push_back(t);
  return out;
}

void ModelParams::zero_grad(const ModelConfig& cfg) {
  for (grad::Tensor* t : tensors(cfg)) t->zero_grad();
}

ModelParams init(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  ModelParams params;
  for (Channel c : kChannels) {
    if (!config.enabled(c)) continue;
    auto& ch = params.channels[static_cast<std::size_t>(c)];
    const std::size_t v = config.vocab(c), d = config.embed(c);
    const std::size_t f = config.filter_count(c), h = config.kernel;
    ch.embedding = grad::Tensor({v, d});
    glorot_fill(ch.embedding, v, d, rng);
    for (std::size_t j = 0; j < d; ++j) ch.embedding.value[j] = 0.0;  // PAD row
    ch.conv_w = grad::Tensor({f, h, d});
    glorot_fill(ch.conv_w, h * d, h * f, rng);
    ch.conv_b = grad::Tensor({f});
    ch.deconv_w = grad::Tensor({f, h, d});
    glorot_fill(ch.deconv_w, h * f, h * d, rng);
    ch.deconv_b = grad::Tensor({d});
  }
  const std::size_t p = config.concat_dim(), e = config.hidden, k = config.classes;
  params.head.A = grad::Tensor({e, p});
  glorot_fill(params.head.A, p, e, rng);
  params.head.b = grad::Tensor({e});
  params.head.C = grad::Tensor({k, e});
  glorot_fill(params.head.C, e, k, rng);
  params.head.d = grad::Tensor({k});
  return params;
}

ForwardTrace forward(const ModelConfig& config, ModelParams& params,
                     const corpus::Segment& segment) {
  grad::Tape tape(/*recording=*/false);
  TapeTrace tt = run_forward(tape, config, params, segment, nullptr);
  ForwardTrace trace;
  for (Channel c : kChannels) {
    const auto ci = static_cast<std::size_t>(c);
    if (tt.deconv[ci]) trace.deconv[ci] = tt.deconv[ci]->value;
  }
  trace.concat = tt.concat->value;
  trace.hidden = tt.hidden->value;
  trace.logits = tt.logits->value;
  trace.probs = tt.probs->value;
  return trace;
}

std::pair<double, double> evaluate_loss(const ModelConfig& config, ModelParams& params,
                                        const std::vector<corpus::Segment>& segments) {
  if (segments.empty()) throw std::invalid_argument("evaluate_loss on empty segment list");
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& seg : segments) {
    grad::Tape tape(/*recording=*/false);
    const auto one_hot = one_hot_of(seg, config.classes);
    TapeTrace tt = run_forward(tape, config, params, seg, &one_hot);
    loss_sum += tt.loss->value[0];
    if (argmax_lowest(tt.probs->value) == seg.class_index) ++correct;
  }
  const auto n = static_cast<double>(segments.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

double accumulate_gradients(const ModelConfig& config, ModelParams& params,
                            const corpus::Segment& segment, double grad_scale) {
  grad::Tape tape(/*recording=*/true);
  const auto one_hot = one_hot_of(segment, config.classes);
  TapeTrace tt = run_forward(tape, config, params, segment, &one_hot);
  tape.backward(tt.loss, grad_scale);
  return tt.loss->value[0];
}

EarlyStopper::EarlyStopper(std::size_t patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
}

bool EarlyStopper::observe(double val_loss) {
  ++seen_;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = seen_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

TrainHistory train(const ModelConfig& config, ModelParams& params,
                   const corpus::CorpusSplit& split, const TrainOptions& options) {
  config.validate();
  if (split.train.empty() || split.validation.empty()) {
    throw std::invalid_argument("train needs nonempty train and validation sets");
  }
  if (options.batch_size < 1 || options.epochs < 1) {
    throw std::invalid_argument("epochs and batch_size must be >= 1");
  }
  grad::AdamState opt(params.tensors(config), options.adam);
  Rng shuffle_rng(config.seed ^ kTrainSeedSalt);
  EarlyStopper stopper(options.patience);
  TrainHistory history;
  ModelParams best = clone_values(params);

  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::size_t end = std::min(begin + options.batch_size, order.size());
      const double inv_batch = 1.0 / static_cast<double>(end - begin);
      params.zero_grad(config);
      for (std::size_t i = begin; i < end; ++i) {
        const auto& seg = split.train[order[i]];
        grad::Tape tape(/*recording=*/true);
        const auto one_hot = one_hot_of(seg, config.classes);
        TapeTrace tt = run_forward(tape, config, params, seg, &one_hot);
        loss_sum += tt.loss->value[0];
        if (argmax_lowest(tt.probs->value) == seg.class_index) ++correct;
        tape.backward(tt.loss, inv_batch);
      }
      // PAD embedding rows stay pinned at zero: with a zero gradient the Adam
      // moments stay zero and the update is exactly zero.
      for (Channel c : kChannels) {
        if (!config.enabled(c)) continue;
        auto& emb = params.channels[static_cast<std::size_t>(c)].embedding;
        std::fill(emb.grad.begin(), emb.grad.begin() + static_cast<std::ptrdiff_t>(config.embed(c)),
                  0.0);
      }
      opt.step();
    }
    const auto n_train = static_cast<double>(split.train.size());
    history.train_loss.push_back(loss_sum / n_train);
    history.train_accuracy.push_back(static_cast<double>(correct) / n_train);
    auto [val_loss, val_acc] = evaluate_loss(config, params, split.validation);
    history.val_loss.push_back(val_loss);
    history.val_accuracy.push_back(val_acc);
    history.stopped_epoch = epoch;
    if (stopper.observe(val_loss)) best = clone_values(params);
    if (stopper.should_stop()) break;
  }
  history.best_epoch = stopper.best_epoch();
  params = std::move(best);
  return history;
}

int predict(const ModelConfig& config, ModelParams& params, const corpus::Segment& segment) {
  return argmax_lowest(forward(config, params, segment).probs);
}

double evaluate(const ModelConfig& config, ModelParams& params,
                const std::vector<corpus::Segment>& segments) {
  if (segments.empty()) throw std::invalid_argument("evaluate on empty segment list");
  std::size_t correct = 0;
  for (const auto& seg : segments) {
    if (predict(config, params, seg) == seg.class_index) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(segments.size());
}

namespace {

json config_to_json(const ModelConfig& c) {
  return json{{"segment_len", c.segment_len},
              {"classes", c.classes},
              {"channel_enabled", c.channel_enabled},
              {"embed_dim", c.embed_dim},
              {"filters", c.filters},
              {"vocab_size", c.vocab_size},
              {"kernel", c.kernel},
              {"pool", c.pool},
              {"hidden", c.hidden},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.segment_len = j.at("segment_len").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.channel_enabled = j.at("channel_enabled").get<std::array<bool, 3>>();
  c.embed_dim = j.at("embed_dim").get<std::array<std::size_t, 3>>();
  c.filters = j.at("filters").get<std::array<std::size_t, 3>>();
  c.vocab_size = j.at("vocab_size").get<std::array<std::size_t, 3>>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.pool = j.at("pool").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

corpus::Vocabulary vocab_from_json(corpus::Vocabulary::Kind kind, const json& arr,
                                   const char* which) {
  corpus::Vocabulary v(kind);
  const auto tokens = arr.get<std::vector<std::string>>();
  if (tokens.size() < v.size()) {
    throw CheckpointError(std::string("checkpoint vocabulary '") + which + "' too small");
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (tokens[i] != v.tokens()[i]) {
      throw CheckpointError(std::string("checkpoint vocabulary '") + which +
                            "' reserved entries corrupted");
    }
  }
  for (std::size_t i = v.size(); i < tokens.size(); ++i) v.add(tokens[i]);
  return v;
}

}  // namespace

void save(const Model& model, const std::string& path) {
  json j;
  j["format_version"] = 1;
  j["class_labels"] = model.class_labels;
  j["config"] = config_to_json(model.config);
  j["vocabularies"] = {{"word", model.vocabs.word.tokens()},
                       {"pos", model.vocabs.pos.tokens()},
                       {"lemma", model.vocabs.lemma.tokens()}};
  json tensors = json::object();
  auto& params = const_cast<ModelParams&>(model.params);
  for (auto& [name, t] : params.named_tensors(model.config)) {
    tensors[name] = {{"shape", t->shape}, {"values", t->value}};
  }
  j["tensors"] = std::move(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
  out << j.dump() << "\n";
  if (!out) throw CheckpointError("failed writing checkpoint: " + path);
}

Model load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupted checkpoint " + path + ": " + e.what());
  }
  Model model;
  try {
    const auto version = j.at("format_version").get<int>();
    if (version != 1) {
      throw CheckpointError("unsupported checkpoint format_version " + std::to_string(version));
    }
    model.config = config_from_json(j.at("config"));
    model.config.validate();
    model.class_labels = j.at("class_labels").get<std::vector<std::string>>();
    if (model.class_labels.size() != model.config.classes) {
      throw CheckpointError("class_labels count does not match config.classes");
    }
    const auto& vocabs = j.at("vocabularies");
    model.vocabs.word = vocab_from_json(corpus::Vocabulary::Kind::word, vocabs.at("word"), "word");
    model.vocabs.pos = vocab_from_json(corpus::Vocabulary::Kind::pos, vocabs.at("pos"), "pos");
    model.vocabs.lemma =
        vocab_from_json(corpus::Vocabulary::Kind::lemma, vocabs.at("lemma"), "lemma");
    const std::array<const corpus::Vocabulary*, 3> vs = {&model.vocabs.word, &model.vocabs.pos,
                                                         &model.vocabs.lemma};
    for (Channel c : kChannels) {
      if (!model.config.enabled(c)) continue;
      if (vs[static_cast<std::size_t>(c)]->size() != model.config.vocab(c)) {
        throw CheckpointError(std::string("vocabulary '") + channel_name(c) +
                              "' size does not match config");
      }
    }
    // Allocate expected shapes from config, then require the file to agree.
    model.params = init(model.config);
    const auto& tensors = j.at("tensors");
    for (auto& [name, t] : model.params.named_tensors(model.config)) {
      if (!tensors.contains(name)) {
        throw CheckpointError("checkpoint missing tensor '" + name + "'");
      }
      const auto& entry = tensors.at(name);
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (shape != t->shape) {
        std::ostringstream os;
        os << "tensor '" << name << "' shape mismatch: checkpoint has [";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << "], config expects [";
        for (std::size_t i = 0; i < t->shape.size(); ++i) os << (i ? "," : "") << t->shape[i];
        os << "]";
        throw CheckpointError(os.str());
      }
      const auto values = entry.at("values").get<std::vector<double>>();
      if (values.size() != t->numel()) {
        throw CheckpointError("tensor '" + name + "' value count mismatch");
      }
      t->value = values;
      t->zero_grad();
    }
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint " + path + ": " + e.what());
  }
  return model;
}

std::uint64_t forward_evaluations() { return g_forward_evals.load(std::memory_order_relaxed); }

void reset_forward_evaluations() { g_forward_evals.store(0, std::memory_order_relaxed); }

}  // namespace textdecon::model
