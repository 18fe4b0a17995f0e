#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "textdecon/corpus.hpp"
#include "textdecon/tensor.hpp"

namespace textdecon::model {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Channel { word = 0, pos = 1, lemma = 2 };
inline constexpr std::array<Channel, 3> kChannels = {Channel::word, Channel::pos, Channel::lemma};
const char* channel_name(Channel c);

struct ModelConfig {
  std::size_t segment_len = 50;  // M
  std::size_t classes = 2;       // K
  std::array<bool, 3> channel_enabled = {true, true, true};
  std::array<std::size_t, 3> embed_dim = {64, 16, 48};  // D per channel
  std::array<std::size_t, 3> filters = {64, 64, 64};    // F per channel
  std::array<std::size_t, 3> vocab_size = {0, 0, 0};
  std::size_t kernel = 3;   // h, odd
  std::size_t pool = 2;     // p, divides M
  std::size_t hidden = 128; // E
  std::uint64_t seed = 0;

  void validate() const;  // throws grad::ConfigError
  bool enabled(Channel c) const { return channel_enabled[static_cast<std::size_t>(c)]; }
  std::size_t embed(Channel c) const { return embed_dim[static_cast<std::size_t>(c)]; }
  std::size_t filter_count(Channel c) const { return filters[static_cast<std::size_t>(c)]; }
  std::size_t vocab(Channel c) const { return vocab_size[static_cast<std::size_t>(c)]; }

  // Length of the concatenated deconvolved vector X: M * sum of enabled
  // embedding sizes. Layout is channel-major (word | pos | lemma), token
  // blocks of D_c contiguous within each channel block.
  std::size_t concat_dim() const;
  std::size_t channel_offset(Channel c) const;  // column offset of a channel block
};

struct ChannelParams {
  grad::Tensor embedding;  // V x D, row 0 (PAD) pinned to zero
  grad::Tensor conv_w;     // F x h x D
  grad::Tensor conv_b;     // F
  grad::Tensor deconv_w;   // F x h x D
  grad::Tensor deconv_b;   // D
};

// Final map y = d + C relu(b + A X).
struct DenseHead {
  grad::Tensor A;  // E x concat_dim
  grad::Tensor b;  // E
  grad::Tensor C;  // K x E
  grad::Tensor d;  // K
};

struct ModelParams {
  std::array<ChannelParams, 3> channels;  // disabled channels stay empty
  DenseHead head;

  // (name, tensor) pairs for enabled tensors, in fixed checkpoint order.
  std::vector<std::pair<std::string, grad::Tensor*>> named_tensors(const ModelConfig& cfg);
  std::vector<grad::Tensor*> tensors(const ModelConfig& cfg);
  void zero_grad(const ModelConfig& cfg);
};

// Every intermediate of one forward pass that the saliency math consumes.
struct ForwardTrace {
  std::array<std::vector<double>, 3> deconv;  // x^(c), M x D_c row-major
  std::vector<double> concat;                 // X
  std::vector<double> hidden;                 // relu(b + A X)
  std::vector<double> logits;                 // y
  std::vector<double> probs;                  // softmax(y)
};

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::size_t patience = 3;
  grad::AdamConfig adam = {};
};

struct TrainHistory {
  std::vector<double> train_loss, train_accuracy;
  std::vector<double> val_loss, val_accuracy;
  std::size_t stopped_epoch = 0;  // 1-based index of the last epoch run
  std::size_t best_epoch = 0;     // 1-based epoch with minimal validation loss
};

// Stop after `patience` consecutive epochs without strict improvement of the
// validation loss.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);
  bool observe(double val_loss);  // true iff this epoch improved
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t since_best_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t seen_ = 0;
  double best_;
};

struct Model {
  ModelConfig config;
  ModelParams params;
  corpus::VocabularySet vocabs;
  std::vector<std::string> class_labels;
};

// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases, zero PAD
// embedding rows; deterministic under config.seed.
ModelParams init(const ModelConfig& config);

ForwardTrace forward(const ModelConfig& config, ModelParams& params,
                     const corpus::Segment& segment);

// Mean cross-entropy and accuracy over segments without touching gradients.
std::pair<double, double> evaluate_loss(const ModelConfig& config, ModelParams& params,
                                        const std::vector<corpus::Segment>& segments);

// One recording forward for the segment's cross-entropy against its own
// class, backpropagated with seed grad_scale into the parameter gradients.
// Returns the loss value. The training loop calls this once per sample with
// grad_scale = 1/batch.
double accumulate_gradients(const ModelConfig& config, ModelParams& params,
                            const corpus::Segment& segment, double grad_scale = 1.0);

// Adam on the mean batch loss with seeded per-epoch shuffling and early
// stopping; leaves the best-validation-epoch weights in params.
TrainHistory train(const ModelConfig& config, ModelParams& params,
                   const corpus::CorpusSplit& split, const TrainOptions& options);

int predict(const ModelConfig& config, ModelParams& params, const corpus::Segment& segment);
double evaluate(const ModelConfig& config, ModelParams& params,
                const std::vector<corpus::Segment>& segments);

void save(const Model& model, const std::string& path);
Model load(const std::string& path);

// Forward-pass counter, used to measure explainer cost.
std::uint64_t forward_evaluations();
void reset_forward_evaluations();

}  // namespace textdecon::model
