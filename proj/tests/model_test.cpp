#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "textdecon/model.hpp"
#include "textdecon/rng.hpp"

using namespace textdecon;
using model::Channel;
using model::ModelConfig;

namespace {

// Tiny three-channel configuration used throughout: M=6, D=(4,2,3), F=3,
// h=3, p=2, E=5, K=2.
ModelConfig tiny_config(std::uint64_t seed = 0) {
  ModelConfig cfg;
  cfg.segment_len = 6;
  cfg.classes = 2;
  cfg.embed_dim = {4, 2, 3};
  cfg.filters = {3, 3, 3};
  cfg.vocab_size = {9, 7, 8};
  cfg.kernel = 3;
  cfg.pool = 2;
  cfg.hidden = 5;
  cfg.seed = seed;
  return cfg;
}

corpus::Segment make_segment(const ModelConfig& cfg, Rng& rng, int class_index) {
  corpus::Segment seg;
  seg.id = static_cast<int>(rng.below(1000));
  seg.doc_id = "d";
  seg.class_index = class_index;
  seg.one_hot.assign(cfg.classes, 0);
  seg.one_hot[static_cast<std::size_t>(class_index)] = 1;
  for (std::size_t m = 0; m < cfg.segment_len; ++m) {
    // skip PAD so finite differences see every embedding row it perturbs
    seg.encoded.push_back({static_cast<int>(1 + rng.below(cfg.vocab_size[0] - 1)),
                           static_cast<int>(1 + rng.below(cfg.vocab_size[1] - 1)),
                           static_cast<int>(1 + rng.below(cfg.vocab_size[2] - 1))});
    seg.tokens.push_back({"s", "P", "l"});
  }
  return seg;
}

std::vector<corpus::Segment> make_segments(const ModelConfig& cfg, Rng& rng, std::size_t n) {
  std::vector<corpus::Segment> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(make_segment(cfg, rng, static_cast<int>(i % cfg.classes)));
    out.back().id = static_cast<int>(i);
  }
  return out;
}

}  // namespace

TEST_CASE("init: shapes, zero biases, PAD rows, determinism") {
  ModelConfig cfg = tiny_config(3);
  cfg.classes = 3;
  cfg.hidden = 5;
  auto params = model::init(cfg);
  CHECK(params.head.d.shape == std::vector<std::size_t>{3});
  CHECK(params.head.C.shape == std::vector<std::size_t>{3, 5});
  CHECK(params.head.A.shape == std::vector<std::size_t>{5, 6 * (4 + 2 + 3)});
  for (double v : params.head.b.value) CHECK(v == 0.0);
  for (double v : params.head.d.value) CHECK(v == 0.0);
  for (Channel c : model::kChannels) {
    const auto& ch = params.channels[static_cast<std::size_t>(c)];
    for (double v : ch.conv_b.value) CHECK(v == 0.0);
    for (double v : ch.deconv_b.value) CHECK(v == 0.0);
    for (std::size_t j = 0; j < cfg.embed(c); ++j) CHECK(ch.embedding.value[j] == 0.0);
    CHECK(ch.conv_w.shape == std::vector<std::size_t>{3, 3, cfg.embed(c)});
  }
  auto params2 = model::init(cfg);
  CHECK(params.head.A.value == params2.head.A.value);
  CHECK(params.channels[0].embedding.value == params2.channels[0].embedding.value);

  cfg.seed = 4;
  auto params3 = model::init(cfg);
  CHECK(params.head.A.value != params3.head.A.value);
}

TEST_CASE("init: invalid configurations are rejected") {
  ModelConfig cfg = tiny_config();
  cfg.kernel = 2;
  CHECK_THROWS_AS(model::init(cfg), grad::ConfigError);
  cfg = tiny_config();
  cfg.pool = 4;  // does not divide M=6
  CHECK_THROWS_AS(model::init(cfg), grad::ConfigError);
  cfg = tiny_config();
  cfg.channel_enabled = {false, false, false};
  CHECK_THROWS_AS(model::init(cfg), grad::ConfigError);
}

TEST_CASE("forward: shapes, probability simplex, argmax consistency") {
  const ModelConfig cfg = tiny_config(5);
  auto params = model::init(cfg);
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const auto seg = make_segment(cfg, rng, 0);
    const auto trace = model::forward(cfg, params, seg);
    for (Channel c : model::kChannels) {
      CHECK(trace.deconv[static_cast<std::size_t>(c)].size() == cfg.segment_len * cfg.embed(c));
    }
    CHECK(trace.concat.size() == cfg.concat_dim());
    CHECK(trace.hidden.size() == cfg.hidden);
    CHECK(trace.logits.size() == cfg.classes);
    double sum = 0.0;
    for (double p : trace.probs) sum += p;
    CHECK(std::fabs(sum - 1.0) < 1e-12);
    const auto arg = [](const std::vector<double>& v) {
      return std::distance(v.begin(), std::max_element(v.begin(), v.end()));
    };
    CHECK(arg(trace.probs) == arg(trace.logits));
  }
}

TEST_CASE("forward: hand-built identity channel reduces to an affine map of embeddings") {
  ModelConfig cfg;
  cfg.segment_len = 2;
  cfg.classes = 2;
  cfg.channel_enabled = {true, false, false};
  cfg.embed_dim = {2, 0, 0};
  cfg.filters = {2, 0, 0};
  cfg.vocab_size = {4, 0, 0};
  cfg.kernel = 1;
  cfg.pool = 1;
  cfg.hidden = 2;
  cfg.seed = 1;
  auto params = model::init(cfg);
  auto& ch = params.channels[0];
  // positive embeddings so the relu after conv is the identity
  ch.embedding.value = {0, 0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2};
  for (std::size_t f = 0; f < 2; ++f) {
    for (std::size_t d = 0; d < 2; ++d) {
      ch.conv_w.at(f, 0, d) = f == d ? 1.0 : 0.0;
      ch.deconv_w.at(f, 0, d) = f == d ? 1.0 : 0.0;
    }
  }
  params.head.A.value = {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8};
  params.head.b.value = {0.05, -0.1};
  params.head.C.value = {1.0, -1.0, 0.5, 2.0};
  params.head.d.value = {0.25, -0.25};

  corpus::Segment seg;
  seg.class_index = 0;
  seg.one_hot = {1, 0};
  seg.encoded = {{2, 0, 0}, {3, 0, 0}};
  seg.tokens = {{"a", "P", "a"}, {"b", "P", "b"}};
  const auto trace = model::forward(cfg, params, seg);

  // x should reproduce the embedding rows of tokens 2 and 3
  const std::vector<double> expect_x = {0.6, 0.8, 1.0, 1.2};
  REQUIRE(trace.deconv[0].size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(trace.deconv[0][i] == doctest::Approx(expect_x[i]).epsilon(1e-12));
  }
  // independent dense arithmetic for y = d + C relu(b + A x)
  std::vector<double> hidden(2);
  for (std::size_t e = 0; e < 2; ++e) {
    double acc = params.head.b.value[e];
    for (std::size_t p = 0; p < 4; ++p) acc += params.head.A.value[e * 4 + p] * expect_x[p];
    hidden[e] = std::max(0.0, acc);
  }
  for (std::size_t k = 0; k < 2; ++k) {
    double acc = params.head.d.value[k];
    for (std::size_t e = 0; e < 2; ++e) acc += params.head.C.value[k * 2 + e] * hidden[e];
    CHECK(trace.logits[k] == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("disabling channels removes exactly M*D_c columns from A") {
  ModelConfig all = tiny_config();
  ModelConfig no_pos = tiny_config();
  no_pos.channel_enabled = {true, false, true};
  CHECK(all.concat_dim() - no_pos.concat_dim() == all.segment_len * all.embed(Channel::pos));
  CHECK(no_pos.channel_offset(Channel::word) == 0);
  CHECK(no_pos.channel_offset(Channel::lemma) == no_pos.segment_len * no_pos.embed(Channel::word));
  CHECK_THROWS_AS(no_pos.channel_offset(Channel::pos), std::invalid_argument);

  auto params = model::init(no_pos);
  CHECK(params.head.A.shape[1] == no_pos.concat_dim());
  Rng rng(2);
  auto seg = make_segment(no_pos, rng, 1);
  const auto trace = model::forward(no_pos, params, seg);
  CHECK(trace.concat.size() == no_pos.concat_dim());
  CHECK(trace.deconv[1].empty());
}

TEST_CASE("full-model gradient check on the tiny config") {
  const ModelConfig cfg = tiny_config(21);
  auto params = model::init(cfg);
  Rng rng(22);
  const auto seg = make_segment(cfg, rng, 1);
  auto tensors = params.tensors(cfg);

  params.zero_grad(cfg);
  model::accumulate_gradients(cfg, params, seg);
  std::vector<std::vector<double>> analytic;
  for (auto* t : tensors) analytic.push_back(t->grad);

  const auto numeric = grad::finite_diff(
      [&] { return model::evaluate_loss(cfg, params, {seg}).first; }, tensors);

  double worst = 0.0;
  for (std::size_t p = 0; p < tensors.size(); ++p) {
    for (std::size_t i = 0; i < analytic[p].size(); ++i) {
      const double a = analytic[p][i], n = numeric[p][i];
      worst = std::max(worst, std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), 1e-4}));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("training decreases the loss on a single batch") {
  const ModelConfig cfg = tiny_config(31);
  auto params = model::init(cfg);
  Rng rng(32);
  corpus::CorpusSplit split;
  for (int i = 0; i < 8; ++i) split.train.push_back(make_segment(cfg, rng, i % 2));
  split.validation = {make_segment(cfg, rng, 0), make_segment(cfg, rng, 1)};

  const double before = model::evaluate_loss(cfg, params, split.train).first;
  model::TrainOptions opt;
  opt.epochs = 1;
  opt.batch_size = split.train.size();
  opt.patience = 5;
  opt.adam.lr = 1e-3;
  model::train(cfg, params, split, opt);
  const double after = model::evaluate_loss(cfg, params, split.train).first;
  CHECK(after < before);
}

TEST_CASE("EarlyStopper stops exactly at best epoch + patience") {
  // improves through epoch 3, then worsens monotonically
  model::EarlyStopper stopper(2);
  const double schedule[] = {1.0, 0.8, 0.6, 0.7, 0.9, 1.1};
  std::size_t stopped = 0;
  for (std::size_t e = 0; e < 6; ++e) {
    stopper.observe(schedule[e]);
    if (stopper.should_stop()) {
      stopped = e + 1;
      break;
    }
  }
  CHECK(stopper.best_epoch() == 3);
  CHECK(stopped == 5);  // 3 + patience
  CHECK(stopper.best_loss() == 0.6);

  SUBCASE("reset on improvement") {
    model::EarlyStopper s2(2);
    s2.observe(1.0);
    s2.observe(1.2);
    CHECK(!s2.should_stop());
    s2.observe(0.9);  // improvement resets the counter
    CHECK(!s2.should_stop());
    s2.observe(1.0);
    s2.observe(1.0);
    CHECK(s2.should_stop());
    CHECK(s2.best_epoch() == 3);
  }
  SUBCASE("patience must be positive") {
    CHECK_THROWS_AS(model::EarlyStopper(0), std::invalid_argument);
  }
}

TEST_CASE("train: determinism, early-stopping invariants, best weights returned") {
  const ModelConfig cfg = tiny_config(41);
  Rng rng(42);
  auto segments = make_segments(cfg, rng, 30);
  const auto split = corpus::split(segments, 7);

  model::TrainOptions opt;
  opt.epochs = 12;
  opt.batch_size = 8;
  opt.patience = 2;

  auto params1 = model::init(cfg);
  const auto hist1 = model::train(cfg, params1, split, opt);
  auto params2 = model::init(cfg);
  const auto hist2 = model::train(cfg, params2, split, opt);

  CHECK(hist1.train_loss == hist2.train_loss);
  CHECK(hist1.val_loss == hist2.val_loss);
  CHECK(hist1.stopped_epoch == hist2.stopped_epoch);
  CHECK(params1.head.A.value == params2.head.A.value);

  CHECK(hist1.best_epoch >= 1);
  CHECK(hist1.stopped_epoch - hist1.best_epoch <= opt.patience);
  CHECK(hist1.train_loss.size() == hist1.stopped_epoch);
  // best_epoch minimizes the recorded validation losses
  for (double v : hist1.val_loss) CHECK(hist1.val_loss[hist1.best_epoch - 1] <= v);
  // the returned parameters reproduce the best epoch's validation loss
  const double reloaded = model::evaluate_loss(cfg, params1, split.validation).first;
  CHECK(reloaded == doctest::Approx(hist1.val_loss[hist1.best_epoch - 1]).epsilon(1e-12));
}

TEST_CASE("predict and evaluate") {
  const ModelConfig cfg = tiny_config(51);
  auto params = model::init(cfg);
  Rng rng(52);
  auto segs = make_segments(cfg, rng, 6);
  for (const auto& s : segs) {
    const int p = model::predict(cfg, params, s);
    CHECK(p >= 0);
    CHECK(p < static_cast<int>(cfg.classes));
  }
  const double acc = model::evaluate(cfg, params, segs);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK_THROWS_AS(model::evaluate(cfg, params, {}), std::invalid_argument);

  SUBCASE("accuracy of a perfect fixture is 1.0") {
    auto labeled = segs;
    for (auto& s : labeled) s.class_index = model::predict(cfg, params, s);
    CHECK(model::evaluate(cfg, params, labeled) == 1.0);
  }
}

TEST_CASE("checkpoint: save/load reproduces the forward pass bit-identically") {
  const std::string path = "model_test_ckpt.json";
  model::Model m;
  m.config = tiny_config(61);
  m.params = model::init(m.config);
  m.class_labels = {"alpha", "beta"};
  // grow vocabularies to the configured sizes
  for (std::size_t i = m.vocabs.word.size(); i < m.config.vocab_size[0]; ++i) {
    m.vocabs.word.add("w" + std::to_string(i));
  }
  for (std::size_t i = m.vocabs.pos.size(); i < m.config.vocab_size[1]; ++i) {
    m.vocabs.pos.add("P" + std::to_string(i));
  }
  for (std::size_t i = m.vocabs.lemma.size(); i < m.config.vocab_size[2]; ++i) {
    m.vocabs.lemma.add("l" + std::to_string(i));
  }
  Rng rng(62);
  const auto seg = make_segment(m.config, rng, 0);
  const auto before = model::forward(m.config, m.params, seg);

  model::save(m, path);
  auto loaded = model::load(path);
  const auto after = model::forward(loaded.config, loaded.params, seg);
  CHECK(before.logits == after.logits);  // bit-identical round trip
  CHECK(before.probs == after.probs);
  CHECK(loaded.class_labels == m.class_labels);
  CHECK(loaded.vocabs.word.size() == m.vocabs.word.size());

  SUBCASE("truncated checkpoint is a corruption error") {
    std::ifstream in(path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary);
    out << content.substr(0, content.size() / 2);
    out.close();
    CHECK_THROWS_AS(model::load(path), model::CheckpointError);
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint: shape mismatch names the offending tensor") {
  const std::string path = "model_test_ckpt2.json";
  model::Model m;
  m.config = tiny_config(71);
  m.params = model::init(m.config);
  m.class_labels = {"a", "b"};
  for (std::size_t i = m.vocabs.word.size(); i < m.config.vocab_size[0]; ++i)
    m.vocabs.word.add("w" + std::to_string(i));
  for (std::size_t i = m.vocabs.pos.size(); i < m.config.vocab_size[1]; ++i)
    m.vocabs.pos.add("P" + std::to_string(i));
  for (std::size_t i = m.vocabs.lemma.size(); i < m.config.vocab_size[2]; ++i)
    m.vocabs.lemma.add("l" + std::to_string(i));
  model::save(m, path);

  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  in.close();

  SUBCASE("hidden size changed in config") {
    j["config"]["hidden"] = 9;  // stored head.A no longer matches
    std::ofstream out(path);
    out << j.dump();
    out.close();
    try {
      model::load(path);
      FAIL("expected CheckpointError");
    } catch (const model::CheckpointError& e) {
      CHECK(std::string(e.what()).find("head.") != std::string::npos);
    }
  }
  SUBCASE("unsupported version") {
    j["format_version"] = 2;
    std::ofstream out(path);
    out << j.dump();
    out.close();
    try {
      model::load(path);
      FAIL("expected CheckpointError");
    } catch (const model::CheckpointError& e) {
      CHECK(std::string(e.what()).find("format_version") != std::string::npos);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("forward evaluation counter counts forwards") {
  const ModelConfig cfg = tiny_config(81);
  auto params = model::init(cfg);
  Rng rng(82);
  const auto seg = make_segment(cfg, rng, 0);
  model::reset_forward_evaluations();
  model::forward(cfg, params, seg);
  model::forward(cfg, params, seg);
  CHECK(model::forward_evaluations() == 2);
}
