#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "textdecon/rng.hpp"
#include "textdecon/tensor.hpp"

using namespace textdecon;
using grad::Tape;
using grad::Tensor;

namespace {

void randomize(Tensor& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (double& v : t.value) v = rng.uniform(lo, hi);
}

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-4});
}

// Max relative error between tape gradients and central finite differences
// for a scalar-valued builder over the given parameters.
double gradcheck(const std::function<double()>& loss_fn, const std::vector<Tensor*>& params) {
  for (Tensor* p : params) p->zero_grad();
  loss_fn();
  std::vector<std::vector<double>> analytic;
  for (Tensor* p : params) analytic.push_back(p->grad);
  for (Tensor* p : params) p->zero_grad();
  const auto numeric = grad::finite_diff(loss_fn, params);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < analytic[p].size(); ++i) {
      worst = std::max(worst, rel_err(analytic[p][i], numeric[p][i]));
    }
  }
  return worst;
}

// Fixed mixing weights so a multi-output layer reduces to one scalar.
Tensor* weighted_sum(Tape& tape, Tensor* x) {
  Tensor* flat = tape.concat_flat({x});
  Tensor* w = tape.make({1, flat->numel()});
  for (std::size_t i = 0; i < flat->numel(); ++i) w->value[i] = 0.1 * double(i % 7) - 0.3;
  Tensor* b = tape.make({1});
  return tape.dense(flat, w, b);
}

}  // namespace

TEST_CASE("embedding_lookup gathers rows and accumulates shared-row gradients") {
  Tensor table({5, 3});
  Rng rng(1);
  randomize(table, rng);
  for (std::size_t j = 0; j < 3; ++j) table.value[2 * 3 + j] = 0.0;

  SUBCASE("zero row stays zero") {
    Tape tape;
    Tensor* out = tape.embedding_lookup(&table, {2});
    for (std::size_t j = 0; j < 3; ++j) CHECK(out->value[j] == 0.0);
  }
  SUBCASE("repeated index accumulates gradient twice") {
    Tape tape;
    table.zero_grad();
    Tensor* out = tape.embedding_lookup(&table, {2, 2});
    CHECK(out->cat(0, 1) == table.cat(2, 1));
    CHECK(out->cat(1, 1) == table.cat(2, 1));
    for (double& g : out->grad) g = 1.0;
    Tensor* scalar = tape.make({1});
    tape.backward(scalar);  // replays the recorded op with out->grad already set
    for (std::size_t j = 0; j < 3; ++j) CHECK(table.grad[2 * 3 + j] == doctest::Approx(2.0));
  }
  SUBCASE("matches a direct gather") {
    Tape tape;
    const std::vector<int> idx = {4, 0, 1};
    Tensor* out = tape.embedding_lookup(&table, idx);
    for (std::size_t m = 0; m < idx.size(); ++m) {
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(out->cat(m, j) == table.cat(static_cast<std::size_t>(idx[m]), j));
      }
    }
  }
  SUBCASE("out-of-range index") {
    Tape tape;
    CHECK_THROWS_AS(tape.embedding_lookup(&table, {5}), std::out_of_range);
  }
}

TEST_CASE("conv1d_same") {
  SUBCASE("h=1 all-ones filter computes row sums") {
    Tensor input({4, 3}), filters({1, 1, 3}), bias({1});
    Rng rng(2);
    randomize(input, rng);
    filters.fill(1.0);
    Tape tape;
    Tensor* out = tape.conv1d_same(&input, &filters, &bias);
    for (std::size_t m = 0; m < 4; ++m) {
      double sum = 0.0;
      for (std::size_t d = 0; d < 3; ++d) sum += input.cat(m, d);
      CHECK(out->cat(m, 0) == doctest::Approx(sum).epsilon(1e-12));
    }
  }
  SUBCASE("zero input yields the bias") {
    Tensor input({5, 2}), filters({3, 3, 2}), bias({3});
    bias.value = {0.3, -0.7, 1.1};
    Tape tape;
    Tensor* out = tape.conv1d_same(&input, &filters, &bias);
    for (std::size_t m = 0; m < 5; ++m) {
      for (std::size_t f = 0; f < 3; ++f) CHECK(out->cat(m, f) == bias.value[f]);
    }
  }
  SUBCASE("matches the triple-loop oracle") {
    Tensor input({6, 3}), filters({2, 3, 3}), bias({2});
    Rng rng(3);
    randomize(input, rng);
    randomize(filters, rng);
    randomize(bias, rng);
    Tape tape;
    Tensor* out = tape.conv1d_same(&input, &filters, &bias);
    for (std::size_t m = 0; m < 6; ++m) {
      for (std::size_t f = 0; f < 2; ++f) {
        double acc = bias.value[f];
        for (std::size_t j = 0; j < 3; ++j) {
          const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(m + j) - 1;
          if (row < 0 || row >= 6) continue;
          for (std::size_t d = 0; d < 3; ++d) {
            acc += filters.cat(f, j, d) * input.cat(static_cast<std::size_t>(row), d);
          }
        }
        CHECK(std::fabs(out->cat(m, f) - acc) < 1e-12);
      }
    }
  }
  SUBCASE("even kernel width is a configuration error") {
    Tensor input({4, 2}), filters({1, 2, 2}), bias({1});
    Tape tape;
    CHECK_THROWS_AS(tape.conv1d_same(&input, &filters, &bias), grad::ConfigError);
  }
}

TEST_CASE("conv1d_transpose_same") {
  SUBCASE("zero input yields the bias in every row") {
    Tensor input({4, 3}), filters({3, 3, 2}), bias({2});
    bias.value = {0.5, -0.25};
    Tape tape;
    Tensor* out = tape.conv1d_transpose_same(&input, &filters, &bias);
    for (std::size_t m = 0; m < 4; ++m) {
      CHECK(out->cat(m, 0) == 0.5);
      CHECK(out->cat(m, 1) == -0.25);
    }
  }
  SUBCASE("h=1 degenerates to an affine map") {
    Tensor input({4, 3}), filters({3, 1, 2}), bias({2});
    Rng rng(4);
    randomize(input, rng);
    randomize(filters, rng);
    randomize(bias, rng);
    Tape tape;
    Tensor* out = tape.conv1d_transpose_same(&input, &filters, &bias);
    for (std::size_t m = 0; m < 4; ++m) {
      for (std::size_t d = 0; d < 2; ++d) {
        double acc = bias.value[d];
        for (std::size_t f = 0; f < 3; ++f) acc += input.cat(m, f) * filters.cat(f, 0, d);
        CHECK(std::fabs(out->cat(m, d) - acc) < 1e-12);
      }
    }
  }
  SUBCASE("matches the triple-loop oracle") {
    Tensor input({6, 2}), filters({2, 3, 4}), bias({4});
    Rng rng(5);
    randomize(input, rng);
    randomize(filters, rng);
    randomize(bias, rng);
    Tape tape;
    Tensor* out = tape.conv1d_transpose_same(&input, &filters, &bias);
    for (std::size_t m = 0; m < 6; ++m) {
      for (std::size_t d = 0; d < 4; ++d) {
        double acc = bias.value[d];
        for (std::size_t j = 0; j < 3; ++j) {
          const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(m + j) - 1;
          if (row < 0 || row >= 6) continue;
          for (std::size_t f = 0; f < 2; ++f) {
            acc += filters.cat(f, j, d) * input.cat(static_cast<std::size_t>(row), f);
          }
        }
        CHECK(std::fabs(out->cat(m, d) - acc) < 1e-12);
      }
    }
  }
  SUBCASE("even kernel width is a configuration error") {
    Tensor input({4, 2}), filters({2, 2, 3}), bias({3});
    Tape tape;
    CHECK_THROWS_AS(tape.conv1d_transpose_same(&input, &filters, &bias), grad::ConfigError);
  }
}

TEST_CASE("relu, maxpool, upsample") {
  SUBCASE("maxpool picks window maxima") {
    Tensor x({4, 1});
    x.value = {1, 3, 2, 4};
    Tape tape;
    std::vector<std::size_t> argmax;
    Tensor* out = tape.maxpool1d(&x, 2, &argmax);
    REQUIRE(out->numel() == 2);
    CHECK(out->value[0] == 3);
    CHECK(out->value[1] == 4);
    CHECK(argmax[0] == 1);
    CHECK(argmax[1] == 3);
  }
  SUBCASE("ties go to the lowest index") {
    Tensor x({4, 1});
    x.value = {2, 2, 1, 1};
    Tape tape;
    std::vector<std::size_t> argmax;
    tape.maxpool1d(&x, 2, &argmax);
    CHECK(argmax[0] == 0);
    CHECK(argmax[1] == 2);
  }
  SUBCASE("upsample repeats rows") {
    Tensor x({2, 1});
    x.value = {3, 4};
    Tape tape;
    Tensor* out = tape.upsample(&x, 2);
    CHECK(out->value == std::vector<double>{3, 3, 4, 4});
  }
  SUBCASE("maxpool(relu(x)) equals relu(maxpool(x))") {
    Tensor x({8, 3});
    Rng rng(6);
    randomize(x, rng);
    Tape tape;
    Tensor* a = tape.maxpool1d(tape.relu(&x), 2);
    Tensor* b = tape.relu(tape.maxpool1d(&x, 2));
    for (std::size_t i = 0; i < a->numel(); ++i) CHECK(a->value[i] == b->value[i]);
  }
  SUBCASE("pool size must divide the token count") {
    Tensor x({5, 2});
    Tape tape;
    CHECK_THROWS_AS(tape.maxpool1d(&x, 2), grad::ConfigError);
  }
  SUBCASE("maxpool backward routes everything to the argmax") {
    Tensor x({6, 2});
    Rng rng(7);
    randomize(x, rng);
    Tape tape;
    std::vector<std::size_t> argmax;
    Tensor* pooled = tape.maxpool1d(&x, 3, &argmax);
    for (std::size_t i = 0; i < pooled->numel(); ++i) pooled->grad[i] = 1.0 + double(i);
    Tensor* scalar = tape.make({1});
    tape.backward(scalar);
    double routed = 0.0, incoming = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      routed += x.grad[i];
      if (x.grad[i] != 0.0) {
        CHECK(std::count(argmax.begin(), argmax.end(), i) == 1);
      }
    }
    for (std::size_t i = 0; i < pooled->numel(); ++i) incoming += pooled->grad[i];
    CHECK(routed == doctest::Approx(incoming));
  }
}

TEST_CASE("softmax and cross entropy") {
  SUBCASE("uniform logits give ln 2") {
    const auto p = grad::softmax({0.0, 0.0});
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(grad::cross_entropy(p, {1.0, 0.0}) == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("huge logit does not overflow") {
    const auto p = grad::softmax({1000.0, 0.0});
    CHECK(p[0] == doctest::Approx(1.0));
    CHECK(p[1] == doctest::Approx(0.0));
    CHECK(grad::cross_entropy(p, {1.0, 0.0}) == doctest::Approx(0.0));
    CHECK(std::isfinite(grad::cross_entropy(p, {0.0, 1.0})));  // clamped log
  }
  SUBCASE("random logits: sums to one, matches direct formula, shift invariant") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> y(4);
      for (double& v : y) v = rng.uniform(-3, 3);
      const auto p = grad::softmax(y);
      double sum = 0.0, direct_denom = 0.0;
      for (double v : y) direct_denom += std::exp(v);
      for (std::size_t k = 0; k < 4; ++k) {
        sum += p[k];
        CHECK(std::fabs(p[k] - std::exp(y[k]) / direct_denom) < 1e-12);
        CHECK(p[k] > 0.0);
        CHECK(p[k] < 1.0);
      }
      CHECK(std::fabs(sum - 1.0) < 1e-12);
      auto shifted = y;
      for (double& v : shifted) v += 17.5;
      const auto p2 = grad::softmax(shifted);
      for (std::size_t k = 0; k < 4; ++k) CHECK(std::fabs(p[k] - p2[k]) < 1e-12);

      std::vector<double> one_hot(4, 0.0);
      one_hot[rng.below(4)] = 1.0;
      CHECK(grad::cross_entropy(p, one_hot) >= 0.0);
    }
  }
  SUBCASE("zero loss iff the true class has probability one") {
    CHECK(grad::cross_entropy({1.0, 0.0}, {1.0, 0.0}) == 0.0);
    CHECK(grad::cross_entropy({0.999, 0.001}, {1.0, 0.0}) > 0.0);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("linear map has exact gradients") {
    Tensor x({3}), w({2, 3}), b({2});
    x.value = {0.5, -1.0, 2.0};
    Rng rng(9);
    randomize(w, rng);
    Tape tape;
    Tensor* y = tape.dense(&x, &w, &b);
    y->grad[0] = 1.0;  // d(y0)/d(w0p) = x_p exactly
    Tensor* scalar = tape.make({1});
    tape.backward(scalar);
    for (std::size_t p = 0; p < 3; ++p) {
      CHECK(w.grad[p] == x.value[p]);
      CHECK(w.grad[3 + p] == 0.0);
    }
    CHECK(b.grad[0] == 1.0);
  }
  SUBCASE("relu has zero gradient below zero") {
    Tensor x({1});
    x.value = {-1.0};
    Tape tape;
    Tensor* y = tape.relu(&x);
    y->grad[0] = 1.0;
    Tensor* scalar = tape.make({1});
    tape.backward(scalar);
    CHECK(x.grad[0] == 0.0);
  }
  SUBCASE("backward rejects non-scalar losses") {
    Tensor x({3});
    Tape tape;
    Tensor* y = tape.relu(&x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  }
}

TEST_CASE("finite_diff on an analytic function") {
  Tensor x({4});
  Rng rng(10);
  randomize(x, rng);
  const auto grads = grad::finite_diff(
      [&] {
        double s = 0.0;
        for (double v : x.value) s += v * v;
        return s;
      },
      {&x});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(grads[0][i] == doctest::Approx(2.0 * x.value[i]).epsilon(1e-8));
  }
}

TEST_CASE("per-layer gradient checks against finite differences") {
  Rng rng(11);

  SUBCASE("conv -> relu -> pool -> upsample -> transpose conv chain") {
    Tensor input({6, 3}), cw({2, 3, 3}), cb({2}), dw({2, 3, 4}), db({4});
    randomize(input, rng);
    randomize(cw, rng);
    randomize(cb, rng);
    randomize(dw, rng);
    randomize(db, rng);
    const std::vector<Tensor*> params = {&input, &cw, &cb, &dw, &db};
    auto loss_fn = [&] {
      Tape tape;
      Tensor* conv = tape.conv1d_same(&input, &cw, &cb);
      Tensor* act = tape.relu(conv);
      Tensor* pooled = tape.maxpool1d(act, 2);
      Tensor* up = tape.upsample(pooled, 2);
      Tensor* decon = tape.conv1d_transpose_same(up, &dw, &db);
      Tensor* loss = weighted_sum(tape, decon);
      tape.backward(loss);
      return loss->value[0];
    };
    CHECK(gradcheck(loss_fn, params) < 1e-4);
  }

  SUBCASE("embedding -> dense -> softmax+CE") {
    Tensor table({5, 3}), w({2, 6}), b({2});
    randomize(table, rng);
    randomize(w, rng);
    randomize(b, rng);
    const std::vector<int> idx = {1, 4};
    const std::vector<double> one_hot = {0.0, 1.0};
    const std::vector<Tensor*> params = {&table, &w, &b};
    auto loss_fn = [&] {
      Tape tape;
      Tensor* emb = tape.embedding_lookup(&table, idx);
      Tensor* flat = tape.concat_flat({emb});
      Tensor* logits = tape.dense(flat, &w, &b);
      auto [probs, loss] = tape.softmax_cross_entropy(logits, one_hot);
      (void)probs;
      tape.backward(loss);
      return loss->value[0];
    };
    CHECK(gradcheck(loss_fn, params) < 1e-4);
  }

  SUBCASE("standalone softmax op backward") {
    Tensor logits({4}), w({1, 4}), b({1});
    randomize(logits, rng);
    randomize(w, rng);
    auto loss_fn = [&] {
      Tape tape;
      Tensor* probs = tape.softmax(&logits);
      Tensor* loss = tape.dense(probs, &w, &b);
      tape.backward(loss);
      return loss->value[0];
    };
    CHECK(gradcheck(loss_fn, {&logits, &w}) < 1e-4);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves the parameter unchanged") {
    Tensor t({3});
    t.value = {1.0, -2.0, 0.5};
    grad::AdamState opt({&t});
    const auto before = t.value;
    opt.step();
    CHECK(t.value == before);
  }
  SUBCASE("first bias-corrected step moves by about -lr") {
    Tensor t({1});
    t.value = {0.0};
    t.grad = {1.0};
    grad::AdamState opt({&t});
    opt.step();
    // m_hat = 1, v_hat = 1 after correction, so the step is lr/(1+eps).
    CHECK(t.value[0] == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("step counter increments by one per step") {
    Tensor t({1});
    grad::AdamState opt({&t});
    CHECK(opt.steps() == 0);
    opt.step();
    CHECK(opt.steps() == 1);
    opt.step();
    CHECK(opt.steps() == 2);
  }
}

TEST_CASE("determinism: identical runs produce bit-identical values and gradients") {
  auto run = [] {
    Rng rng(123);
    Tensor input({6, 3}), cw({2, 3, 3}), cb({2});
    randomize(input, rng);
    randomize(cw, rng);
    randomize(cb, rng);
    Tape tape;
    Tensor* conv = tape.conv1d_same(&input, &cw, &cb);
    Tensor* act = tape.relu(conv);
    Tensor* loss = weighted_sum(tape, act);
    tape.backward(loss);
    auto out = cw.grad;
    out.push_back(loss->value[0]);
    return out;
  };
  CHECK(run() == run());
}
