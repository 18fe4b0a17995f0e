#include "textdecon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace textdecon::grad {

namespace {

constexpr double kLogFloor = -745.0;

void check_shape(const Tensor* t, std::size_t rank, const char* what) {
  if (t->shape.size() != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                ", got " + std::to_string(t->shape.size()));
  }
}

}  // namespace

std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> out(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - mx);
    sum += out[k];
  }
  for (double& v : out) v /= sum;
  return out;
}

double cross_entropy(const std::vector<double>& probs, const std::vector<double>& one_hot) {
  if (probs.size() != one_hot.size()) {
    throw std::invalid_argument("cross_entropy: size mismatch");
  }
  double loss = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (one_hot[k] != 0.0) loss -= one_hot[k] * std::max(std::log(probs[k]), kLogFloor);
  }
  return loss;
}

Tensor* Tape::make(std::vector<std::size_t> shape) {
  owned_.emplace_back(std::move(shape));
  return &owned_.back();
}

Tensor* Tape::embedding_lookup(Tensor* table, const std::vector<int>& indices) {
  check_shape(table, 2, "embedding_lookup table");
  const std::size_t rows = table->dim(0), d = table->dim(1);
  for (int idx : indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= rows) {
      throw std::out_of_range("embedding index " + std::to_string(idx) +
                              " out of range [0," + std::to_string(rows) + ")");
    }
  }
  Tensor* out = make({indices.size(), d});
  for (std::size_t m = 0; m < indices.size(); ++m) {
    const double* src = &table->value[static_cast<std::size_t>(indices[m]) * d];
    std::copy(src, src + d, &out->value[m * d]);
  }
  record([table, out, indices, d]() {
    for (std::size_t m = 0; m < indices.size(); ++m) {
      double* dst = &table->grad[static_cast<std::size_t>(indices[m]) * d];
      const double* src = &out->grad[m * d];
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return out;
}

Tensor* Tape::conv1d_same(Tensor* input, Tensor* filters, Tensor* bias) {
  check_shape(input, 2, "conv1d_same input");
  check_shape(filters, 3, "conv1d_same filters");
  check_shape(bias, 1, "conv1d_same bias");
  const std::size_t m_len = input->dim(0), d_len = input->dim(1);
  const std::size_t f_len = filters->dim(0), h = filters->dim(1);
  if (h % 2 == 0) throw ConfigError("conv1d_same: kernel width must be odd");
  if (filters->dim(2) != d_len || bias->dim(0) != f_len) {
    throw std::invalid_argument("conv1d_same: filter/bias shape mismatch");
  }
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(h - 1) / 2;
  Tensor* out = make({m_len, f_len});
  for (std::size_t m = 0; m < m_len; ++m) {
    for (std::size_t f = 0; f < f_len; ++f) {
      double acc = bias->value[f];
      for (std::size_t j = 0; j < h; ++j) {
        const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(m + j) - half;
        if (row < 0 || row >= static_cast<std::ptrdiff_t>(m_len)) continue;
        const double* in = &input->value[static_cast<std::size_t>(row) * d_len];
        const double* w = &filters->value[(f * h + j) * d_len];
        for (std::size_t d = 0; d < d_len; ++d) acc += w[d] * in[d];
      }
      out->value[m * f_len + f] = acc;
    }
  }
  record([input, filters, bias, out, m_len, d_len, f_len, h, half]() {
    for (std::size_t m = 0; m < m_len; ++m) {
      for (std::size_t f = 0; f < f_len; ++f) {
        const double g = out->grad[m * f_len + f];
        if (g == 0.0) continue;
        bias->grad[f] += g;
        for (std::size_t j = 0; j < h; ++j) {
          const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(m + j) - half;
          if (row < 0 || row >= static_cast<std::ptrdiff_t>(m_len)) continue;
          const double* in = &input->value[static_cast<std::size_t>(row) * d_len];
          double* din = &input->grad[static_cast<std::size_t>(row) * d_len];
          const double* w = &filters->value[(f * h + j) * d_len];
          double* dw = &filters->grad[(f * h + j) * d_len];
          for (std::size_t d = 0; d < d_len; ++d) {
            din[d] += g * w[d];
            dw[d] += g * in[d];
          }
        }
      }
    }
  });
  return out;
}

Tensor* Tape::conv1d_transpose_same(Tensor* input, Tensor* filters, Tensor* bias) {
  check_shape(input, 2, "conv1d_transpose_same input");
  check_shape(filters, 3, "conv1d_transpose_same filters");
  check_shape(bias, 1, "conv1d_transpose_same bias");
  const std::size_t m_len = input->dim(0), f_len = input->dim(1);
  const std::size_t h = filters->dim(1), d_len = filters->dim(2);
  if (h % 2 == 0) throw ConfigError("conv1d_transpose_same: kernel width must be odd");
  if (filters->dim(0) != f_len || bias->dim(0) != d_len) {
    throw std::invalid_argument("conv1d_transpose_same: filter/bias shape mismatch");
  }
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(h - 1) / 2;
  Tensor* out = make({m_len, d_len});
  for (std::size_t m = 0; m < m_len; ++m) {
    double* o = &out->value[m * d_len];
    for (std::size_t d = 0; d < d_len; ++d) o[d] = bias->value[d];
    for (std::size_t j = 0; j < h; ++j) {
      const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(m + j) - half;
      if (row < 0 || row >= static_cast<std::ptrdiff_t>(m_len)) continue;
      const double* in = &input->value[static_cast<std::size_t>(row) * f_len];
      for (std::size_t f = 0; f < f_len; ++f) {
        const double x = in[f];
        if (x == 0.0) continue;
        const double* w = &filters->value[(f * h + j) * d_len];
        for (std::size_t d = 0; d < d_len; ++d) o[d] += x * w[d];
      }
    }
  }
  record([input, filters, bias, out, m_len, d_len, f_len, h, half]() {
    for (std::size_t m = 0; m < m_len; ++m) {
      const double* g = &out->grad[m * d_len];
      for (std::size_t d = 0; d < d_len; ++d) bias->grad[d] += g[d];
      for (std::size_t j = 0; j < h; ++j) {
        const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(m + j) - half;
        if (row < 0 || row >= static_cast<std::ptrdiff_t>(m_len)) continue;
        const double* in = &input->value[static_cast<std::size_t>(row) * f_len];
        double* din = &input->grad[static_cast<std::size_t>(row) * f_len];
        for (std::size_t f = 0; f < f_len; ++f) {
          const double* w = &filters->value[(f * h + j) * d_len];
          double* dw = &filters->grad[(f * h + j) * d_len];
          double acc = 0.0;
          for (std::size_t d = 0; d < d_len; ++d) {
            acc += g[d] * w[d];
            dw[d] += g[d] * in[f];
          }
          din[f] += acc;
        }
      }
    }
  });
  return out;
}

Tensor* Tape::relu(Tensor* x) {
  Tensor* out = make(x->shape);
  for (std::size_t i = 0; i < x->numel(); ++i) {
    out->value[i] = x->value[i] > 0.0 ? x->value[i] : 0.0;
  }
  record([x, out]() {
    for (std::size_t i = 0; i < x->numel(); ++i) {
      if (x->value[i] > 0.0) x->grad[i] += out->grad[i];
    }
  });
  return out;
}

Tensor* Tape::maxpool1d(Tensor* x, std::size_t p, std::vector<std::size_t>* argmax_out) {
  check_shape(x, 2, "maxpool1d input");
  const std::size_t m_len = x->dim(0), f_len = x->dim(1);
  if (p == 0 || m_len % p != 0) {
    throw ConfigError("maxpool1d: pool size must divide the token count");
  }
  const std::size_t q_len = m_len / p;
  Tensor* out = make({q_len, f_len});
  std::vector<std::size_t> winners(q_len * f_len);
  for (std::size_t q = 0; q < q_len; ++q) {
    for (std::size_t f = 0; f < f_len; ++f) {
      std::size_t best = (q * p) * f_len + f;
      double best_v = x->value[best];
      for (std::size_t r = 1; r < p; ++r) {
        const std::size_t idx = (q * p + r) * f_len + f;
        if (x->value[idx] > best_v) {  // strict: ties keep the lowest index
          best_v = x->value[idx];
          best = idx;
        }
      }
      out->value[q * f_len + f] = best_v;
      winners[q * f_len + f] = best;
    }
  }
  if (argmax_out) *argmax_out = winners;
  record([x, out, winners = std::move(winners)]() {
    for (std::size_t i = 0; i < out->numel(); ++i) x->grad[winners[i]] += out->grad[i];
  });
  return out;
}

Tensor* Tape::upsample(Tensor* x, std::size_t p) {
  check_shape(x, 2, "upsample input");
  const std::size_t q_len = x->dim(0), f_len = x->dim(1);
  if (p == 0) throw ConfigError("upsample: pool size must be positive");
  Tensor* out = make({q_len * p, f_len});
  for (std::size_t q = 0; q < q_len; ++q) {
    for (std::size_t r = 0; r < p; ++r) {
      std::copy(&x->value[q * f_len], &x->value[q * f_len] + f_len,
                &out->value[(q * p + r) * f_len]);
    }
  }
  record([x, out, q_len, f_len, p]() {
    for (std::size_t q = 0; q < q_len; ++q) {
      for (std::size_t r = 0; r < p; ++r) {
        const double* g = &out->grad[(q * p + r) * f_len];
        double* dx = &x->grad[q * f_len];
        for (std::size_t f = 0; f < f_len; ++f) dx[f] += g[f];
      }
    }
  });
  return out;
}

Tensor* Tape::concat_flat(const std::vector<Tensor*>& parts) {
  std::size_t total = 0;
  for (const Tensor* t : parts) total += t->numel();
  Tensor* out = make({total});
  std::size_t offset = 0;
  for (Tensor* t : parts) {
    std::copy(t->value.begin(), t->value.end(), out->value.begin() + offset);
    offset += t->numel();
  }
  record([parts, out]() {
    std::size_t offset = 0;
    for (Tensor* t : parts) {
      for (std::size_t i = 0; i < t->numel(); ++i) t->grad[i] += out->grad[offset + i];
      offset += t->numel();
    }
  });
  return out;
}

Tensor* Tape::dense(Tensor* x, Tensor* weight, Tensor* bias) {
  check_shape(x, 1, "dense input");
  check_shape(weight, 2, "dense weight");
  check_shape(bias, 1, "dense bias");
  const std::size_t p_len = x->dim(0), q_len = weight->dim(0);
  if (weight->dim(1) != p_len || bias->dim(0) != q_len) {
    throw std::invalid_argument("dense: weight/bias shape mismatch");
  }
  Tensor* out = make({q_len});
  for (std::size_t q = 0; q < q_len; ++q) {
    const double* w = &weight->value[q * p_len];
    double acc = bias->value[q];
    for (std::size_t p = 0; p < p_len; ++p) acc += w[p] * x->value[p];
    out->value[q] = acc;
  }
  record([x, weight, bias, out, p_len, q_len]() {
    for (std::size_t q = 0; q < q_len; ++q) {
      const double g = out->grad[q];
      if (g == 0.0) continue;
      bias->grad[q] += g;
      const double* w = &weight->value[q * p_len];
      double* dw = &weight->grad[q * p_len];
      for (std::size_t p = 0; p < p_len; ++p) {
        x->grad[p] += g * w[p];
        dw[p] += g * x->value[p];
      }
    }
  });
  return out;
}

Tensor* Tape::softmax(Tensor* logits) {
  check_shape(logits, 1, "softmax input");
  Tensor* out = make(logits->shape);
  auto probs = grad::softmax(logits->value);
  out->value = probs;
  record([logits, out]() {
    double dot = 0.0;
    for (std::size_t k = 0; k < out->numel(); ++k) dot += out->grad[k] * out->value[k];
    for (std::size_t k = 0; k < out->numel(); ++k) {
      logits->grad[k] += out->value[k] * (out->grad[k] - dot);
    }
  });
  return out;
}

std::pair<Tensor*, Tensor*> Tape::softmax_cross_entropy(Tensor* logits,
                                                        const std::vector<double>& one_hot) {
  check_shape(logits, 1, "softmax_cross_entropy logits");
  if (one_hot.size() != logits->numel()) {
    throw std::invalid_argument("softmax_cross_entropy: one_hot size mismatch");
  }
  Tensor* probs = make(logits->shape);
  probs->value = grad::softmax(logits->value);
  Tensor* loss = make({std::size_t{1}});
  loss->value[0] = cross_entropy(probs->value, one_hot);
  record([logits, probs, loss, one_hot]() {
    const double g = loss->grad[0];
    for (std::size_t k = 0; k < probs->numel(); ++k) {
      logits->grad[k] += g * (probs->value[k] - one_hot[k]);
    }
  });
  return {probs, loss};
}

void Tape::backward(Tensor* loss, double seed) {
  if (loss->numel() != 1) {
    throw std::invalid_argument("backward requires a scalar loss tensor");
  }
  loss->grad[0] += seed;
  for (auto it = back_.rbegin(); it != back_.rend(); ++it) (*it)();
}

AdamState::AdamState(std::vector<Tensor*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor* t : params_) {
    m_.emplace_back(t->numel(), 0.0);
    v_.emplace_back(t->numel(), 0.0);
  }
}

void AdamState::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor* t = params_[p];
    double* m = m_[p].data();
    double* v = v_[p].data();
    for (std::size_t i = 0; i < t->numel(); ++i) {
      const double g = t->grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      t->value[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

std::vector<std::vector<double>> finite_diff(const std::function<double()>& fn,
                                             const std::vector<Tensor*>& params,
                                             double delta) {
  if (delta <= 0.0) throw std::invalid_argument("finite_diff: delta must be positive");
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (Tensor* t : params) {
    std::vector<double> g(t->numel());
    for (std::size_t i = 0; i < t->numel(); ++i) {
      const double saved = t->value[i];
      t->value[i] = saved + delta;
      const double up = fn();
      t->value[i] = saved - delta;
      const double down = fn();
      t->value[i] = saved;
      g[i] = (up - down) / (2.0 * delta);
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace textdecon::grad
