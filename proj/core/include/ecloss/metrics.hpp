#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ecloss/loss.hpp"
#include "ecloss/tensor.hpp"

namespace ecloss {

// Feature map with everything below the top-10% intensity threshold zeroed.
struct ThresholdedMap {
  Tensor values;                    // h x w, sub-threshold entries zeroed
  double threshold = 0.0;           // largest t with >= 10% of pixels >= t
  double retained_fraction = 0.0;   // >= 0.1 (ties at t are all retained)
  bool degenerate = false;          // constant input: everything retained
};

// Row r gives the empirical distribution over parts of channel r's best-IoU
// part. Channels that never produce a nonempty thresholded map are dropped
// rather than filled with a uniform row; `channels` records which survive.
struct AssignmentMatrix {
  std::vector<std::vector<double>> a;  // kept-channel rows, row-stochastic
  std::vector<std::size_t> channels;   // source channel of each row
  std::size_t n_parts = 0;
};

struct PeakStats {
  double mean = 0.0;
  double stderr_ = 0.0;  // sample stddev / sqrt(n)
};

struct MetricsReport {
  std::vector<double> pe_per_image;
  double pe_mean = 0.0;
  double ls = 0.0;
  std::vector<double> s_per_channel;    // aligned with assignment_channels
  std::vector<std::size_t> assignment_channels;
  double peak_mean = 0.0;
  double peak_stderr = 0.0;
  std::size_t degenerate_maps = 0;  // constant (usually all-zero) channel maps
  std::size_t total_maps = 0;
};

// Masks for one image: [part][pixel], 0/1 over a mask_h x mask_w grid.
using PartMasks = std::vector<std::vector<std::uint8_t>>;

ThresholdedMap top10_threshold(const Tensor& map);

double iou_binary(const std::vector<std::uint8_t>& a,
                  const std::vector<std::uint8_t>& b);
double iou(const std::vector<std::uint8_t>& mask, const ThresholdedMap& activation);

// Mean over channels of the best-part IoU for a single image.
double part_explainability(const FeatureBatch& features, const PartMasks& masks,
                           std::size_t mask_h, std::size_t mask_w);

AssignmentMatrix assignment(const FeatureBatch& features,
                            const std::vector<PartMasks>& masks,
                            std::size_t mask_h, std::size_t mask_w);

// S_i = sqrt(sum_k (A_ik - 1/K)^2) / K per kept channel; second value is the
// mean over channels (higher = the channel fires on one part more reliably).
std::pair<std::vector<double>, double> location_consistency(
    const AssignmentMatrix& a);

// Audit-only literal form without the square: sqrt of a signed sum, NaN when
// the sum dips negative. Kept so the adopted formula can be compared against
// the degenerate one it replaces.
std::pair<std::vector<double>, double> location_consistency_literal(
    const AssignmentMatrix& a);

// Topographic prominence via descending-threshold union-find over level sets
// (8-connected). A peak counts when its prominence strictly exceeds
// prominence_min; the global maximum is measured against the map minimum.
std::size_t count_peaks(const Tensor& map, double prominence_min);
double default_prominence(const Tensor& map);  // 0.05 * (max - min)

// Mean and standard error of count_peaks across all channels x images.
// prominence_min == nullopt applies the per-map default_prominence.
PeakStats activation_robustness(const FeatureBatch& features,
                                std::optional<double> prominence_min = {});

MetricsReport evaluate_metrics(const FeatureBatch& features,
                               const std::vector<PartMasks>& masks,
                               std::size_t mask_h, std::size_t mask_w,
                               std::optional<double> prominence_min = {});

std::string report_csv(const MetricsReport& report);
std::string report_summary(const MetricsReport& report);

}  // namespace ecloss
