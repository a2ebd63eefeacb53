#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ecloss/loss.hpp"
#include "ecloss/templates.hpp"
#include "ecloss/tensor.hpp"

namespace ecloss {

struct ConvSpec {
  std::size_t kernel = 3;
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
};
struct ReluSpec {};
struct MaxPoolSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
};
struct FlattenSpec {};
struct DenseSpec {
  std::size_t in = 0;
  std::size_t out = 0;
};

using LayerSpec = std::variant<ConvSpec, ReluSpec, MaxPoolSpec, FlattenSpec, DenseSpec>;

struct NetworkSpec {
  std::size_t in_channels = 1;
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  std::vector<LayerSpec> layers;
  // index of the convolutional layer whose post-ReLU output carries the
  // channel loss; layers[target_layer+1] must be relu
  std::size_t target_layer = 0;

  void validate() const;
  std::size_t parameter_count() const;
  std::array<std::size_t, 3> target_shape() const;  // channels, h, w post-target-relu
  std::size_t n_classes() const;

  // single-line textual form, parse() is its inverse
  std::string describe() const;
  static NetworkSpec parse(const std::string& line);
};

// conv(3,1,8,p1)-relu-pool2 / conv(3,8,16,p1)-relu-pool2 /
// conv(3,16,C,p1)-relu(target) / flatten-dense. image_size must be divisible
// by 4 so the target grid is image_size/4.
NetworkSpec reference_network(std::size_t image_size, std::size_t n_classes,
                              std::size_t channels = 16);

// uniform [-a, a], a = sqrt(6/(fan_in+fan_out)); biases zero; one derived
// RNG stream per parameterised layer
std::vector<double> init_parameters(const NetworkSpec& spec, std::uint64_t seed);
std::vector<double> zero_parameters(const NetworkSpec& spec);

struct ForwardResult {
  Tensor logits;                 // b x n_classes
  FeatureBatch target_features;  // post-ReLU maps of the target layer
};

ForwardResult forward(const NetworkSpec& spec, std::span<const double> params,
                      const Tensor& images);

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor dlogits;  // (softmax - onehot) / b
};

CrossEntropyResult softmax_cross_entropy(const Tensor& logits,
                                         std::span<const std::size_t> labels);

struct BackwardResult {
  double total = 0.0;
  double cls_loss = 0.0;
  double mi = 0.0;
  std::vector<double> param_grad;
};

// Reverse-mode gradient of alpha*cls - beta*MI; the channel-loss gradient is
// injected at the target layer's post-ReLU output. beta == 0 skips the
// injection entirely (bitwise-identical to a loss-free build) while MI is
// still evaluated for the log.
BackwardResult backward(const NetworkSpec& spec, std::span<const double> params,
                        const Tensor& images, std::span<const std::size_t> labels,
                        const TemplateSet& set, const LossConfig& config);

struct LabeledDataset {
  Tensor images;  // n x c x h x w
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

struct TrainerState {
  std::vector<double> parameters;
  double learning_rate = 0.03;
  std::size_t batch_size = 64;
  std::size_t step = 0;
  std::uint64_t rng_seed = 0;
  LossConfig loss_config;
};

struct TrainLogRow {
  std::size_t step = 0;
  double cls_loss = 0.0;
  double mi = 0.0;
  double total_loss = 0.0;
  double beta = 0.0;
};

// Plain SGD over seeded per-epoch shuffles. Non-finite total loss aborts
// with the offending step index.
TrainerState train(const NetworkSpec& spec, const LabeledDataset& data,
                   TrainerState state, const TemplateSet& set, std::size_t epochs,
                   std::vector<TrainLogRow>* log = nullptr);

std::size_t count_correct(const NetworkSpec& spec, std::span<const double> params,
                          const LabeledDataset& data);

void write_train_log(const std::vector<TrainLogRow>& log,
                     const std::filesystem::path& path);

struct Checkpoint {
  NetworkSpec spec;
  std::vector<double> parameters;
};

// "ECNN1" / arch line / parameter count / one value per line, exact
// round-trip formatting
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ecloss
