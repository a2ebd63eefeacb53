#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "ecloss/templates.hpp"
#include "ecloss/tensor.hpp"

namespace ecloss {

/// Batch of feature maps: b samples, c channels, each channel an h*w map.
/// Every channel of every sample counts as one draw of the random variable
/// the loss matches against the template set.
struct FeatureBatch {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major [batch][channel][h][w]

  std::size_t rows() const { return batch * channels; }
  std::size_t map_size() const { return height * width; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * map_size(), map_size()};
  }
  std::span<double> row(std::size_t r) {
    return {values.data() + r * map_size(), map_size()};
  }
};

struct LossConfig {
  enum class BetaSchedule { fixed, auto_adjust };

  double alpha = 1.0;  // classification weight
  double beta = 1e-5;  // channel-loss weight
  BetaSchedule schedule = BetaSchedule::fixed;

  // auto schedule: after each window of steps, beta is scaled up if the
  // total loss fell over the window and down if it rose
  std::size_t beta_window = 50;
  double beta_grow = 1.5;
  double beta_shrink = 0.5;
  double beta_min = 1e-7;
  double beta_max = 1e-2;
};

struct MIResult {
  double mi = 0.0;                       // nats, in [0, ln |T|]
  std::vector<double> per_channel_mi;    // length c
  std::vector<double> conditional;       // (b*c) x |T| row-stochastic, row-major
  std::size_t conditional_rows = 0;
  std::size_t conditional_cols = 0;
  std::vector<double> marginal;          // length |T|, batch mean of conditionals
};

// tr(x . T) for every template: entry k is the sum of the elementwise
// product of the map with template k.
std::vector<double> fitness(std::span<const double> map, const TemplateSet& set);

// P(T|x): max-shifted softmax of the fitness vector.
std::vector<double> conditional_likelihood(std::span<const double> fitness);

// Batch mean of conditional rows; the empirical template posterior that
// stands in for integrating over P(x). The prior argument is the uniform
// P(T) the rows were formed under; it is validated, not re-applied.
std::vector<double> marginal(std::span<const double> conditionals,
                             std::size_t rows, std::size_t cols, double prior);

// MI(T;X) with every channel of every sample weighted 1/(b*c): the
// empirical mean over rows of KL(P(T|x) || P(T)).
MIResult mutual_information(const FeatureBatch& batch, const TemplateSet& set);

// Same value, without materialising the conditional matrix.
double mutual_information_value(const FeatureBatch& batch, const TemplateSet& set);

// ECLoss = -MI and its exact analytic gradient w.r.t. every feature-map
// entry, same layout as the batch.
std::pair<double, Tensor> ecloss_and_gradient(const FeatureBatch& batch,
                                              const TemplateSet& set);

// alpha * cls_loss - beta * mi
double total_loss(double cls_loss, double mi, const LossConfig& config);

// Auto schedule: compares the ends of the recent total-loss history and
// scales beta accordingly, clamped to [beta_min, beta_max]. The fixed
// schedule and beta == 0 (ablation) pass through unchanged.
LossConfig update_beta(const LossConfig& config, std::span<const double> history);

}  // namespace ecloss
