#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace textdecon::grad {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor of 64-bit reals with a same-shape gradient buffer.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    value.assign(n, 0.0);
    grad.assign(n, 0.0);
  }

  std::size_t numel() const { return value.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& at(std::size_t i) { return value[i]; }
  double& at(std::size_t i, std::size_t j) { return value[i * shape[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return value[(i * shape[1] + j) * shape[2] + k];
  }
  double cat(std::size_t i, std::size_t j) const { return value[i * shape[1] + j]; }
  double cat(std::size_t i, std::size_t j, std::size_t k) const {
    return value[(i * shape[1] + j) * shape[2] + k];
  }

  void fill(double v) { std::fill(value.begin(), value.end(), v); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Numerically safe softmax (max subtraction) of a plain vector.
std::vector<double> softmax(const std::vector<double>& logits);

// -sum_k z_k log p_k with the log clamped at -745 so p=0 stays finite.
double cross_entropy(const std::vector<double>& probs, const std::vector<double>& one_hot);

// Records one forward pass worth of primitive ops and replays their adjoints
// in reverse. The tape owns all intermediate tensors; parameters are caller
// owned and receive accumulated gradients. Construction order is the
// topological order, so reverse traversal is correct by construction.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Tensor* make(std::vector<std::size_t> shape);

  // out[m,:] = table[indices[m],:]; backward scatter-adds into table rows.
  Tensor* embedding_lookup(Tensor* table, const std::vector<int>& indices);

  // Same-padded 1-D convolution over token positions.
  // input M x D, filters F x h x D (h odd), bias F -> M x F.
  Tensor* conv1d_same(Tensor* input, Tensor* filters, Tensor* bias);

  // The filter bank transposed in its feature/depth axes.
  // input M x F, filters F x h x D (h odd), bias D -> M x D.
  Tensor* conv1d_transpose_same(Tensor* input, Tensor* filters, Tensor* bias);

  Tensor* relu(Tensor* x);  // subgradient 0 at exactly 0

  // Non-overlapping window max per feature; p must divide the token count.
  // Ties go to the lowest index; the winner map routes the whole incoming
  // gradient to that position.
  Tensor* maxpool1d(Tensor* x, std::size_t p, std::vector<std::size_t>* argmax_out = nullptr);

  // Row repetition (nearest neighbor), the inverse shape-wise of maxpool1d.
  Tensor* upsample(Tensor* x, std::size_t p);

  // Switch unpooling: each pooled value returns to its recorded argmax
  // position, zeros elsewhere. switches are flat indices into the pre-pool
  // tensor, as produced by maxpool1d.
  Tensor* unpool_argmax(Tensor* pooled, std::size_t p, const std::vector<std::size_t>& switches);

  // Row-major flatten + concatenation of the parts into one vector.
  Tensor* concat_flat(const std::vector<Tensor*>& parts);

  // y = weight * x + bias; x length P, weight Q x P, bias Q.
  Tensor* dense(Tensor* x, Tensor* weight, Tensor* bias);

  Tensor* softmax(Tensor* logits);

  // Returns (probs, scalar loss). The backward is the fused stable form
  // probs - one_hot; the probs output is observational and does not carry
  // gradient on its own.
  std::pair<Tensor*, Tensor*> softmax_cross_entropy(Tensor* logits,
                                                    const std::vector<double>& one_hot);

  // Seeds d(loss)/d(loss) = seed and accumulates gradients into every tensor
  // that fed it. Throws on a non-scalar argument.
  void backward(Tensor* loss, double seed = 1.0);

 private:
  void record(std::function<void()> fn) {
    if (recording_) back_.push_back(std::move(fn));
  }

  std::deque<Tensor> owned_;
  std::vector<std::function<void()>> back_;
  bool recording_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam over a fixed parameter list. Moments are
// zero-initialized; step() consumes whatever is in each tensor's grad.
class AdamState {
 public:
  explicit AdamState(std::vector<Tensor*> params, AdamConfig cfg = {});
  void step();
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

// Central-difference gradients of fn with respect to every entry of every
// listed tensor. fn must be a pure function of the tensors' current values.
std::vector<std::vector<double>> finite_diff(const std::function<double()>& fn,
                                             const std::vector<Tensor*>& params,
                                             double delta = 1e-5);

}  // namespace textdecon::grad
