#include "ecloss/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ecloss/parallel.hpp"
#include "ecloss/viz.hpp"

namespace ecloss {
namespace {

constexpr std::size_t kImageChunk = 8;

void check_map(const Tensor& map, const char* who) {
  if (map.rank() != 2 || map.size() == 0)
    throw std::invalid_argument(std::string(who) + ": expected a nonempty 2-d map");
  if (!map.all_finite())
    throw std::invalid_argument(std::string(who) + ": map has non-finite values");
}

std::vector<std::uint8_t> binarize(const ThresholdedMap& t) {
  std::vector<std::uint8_t> bits(t.values.size(), 0);
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = t.values[i] > 0.0;
  return bits;
}

void check_masks(const PartMasks& masks, std::size_t px, const char* who) {
  if (masks.empty())
    throw std::invalid_argument(std::string(who) + ": empty part set");
  for (const auto& m : masks)
    if (m.size() != px)
      throw std::invalid_argument(std::string(who) + ": mask size mismatch");
}

// Upsample channel `c` of sample `r` to the mask grid and threshold it.
ThresholdedMap channel_map(const FeatureBatch& f, std::size_t r, std::size_t c,
                           std::size_t mask_h, std::size_t mask_w) {
  auto row = f.row(r * f.channels + c);
  Tensor map = Tensor::from_data({f.height, f.width},
                                 std::vector<double>(row.begin(), row.end()));
  return top10_threshold(upsample_bilinear(map, mask_h, mask_w));
}

// Best part by IoU; parts.second is the best value, parts.first the argmax
// (lowest index on ties), or SIZE_MAX when the activation is empty.
std::pair<std::size_t, double> best_part(const ThresholdedMap& t,
                                         const PartMasks& masks) {
  const auto bits = binarize(t);
  if (std::find(bits.begin(), bits.end(), std::uint8_t{1}) == bits.end())
    return {SIZE_MAX, 0.0};
  std::size_t arg = 0;
  double best = -1.0;
  for (std::size_t k = 0; k < masks.size(); ++k) {
    const double v = iou_binary(masks[k], bits);
    if (v > best) {
      best = v;
      arg = k;
    }
  }
  return {arg, best};
}

double sample_stderr(const std::vector<double>& xs) {
  const double n = double(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

}  // namespace

ThresholdedMap top10_threshold(const Tensor& map) {
  check_map(map, "top10_threshold");
  const std::size_t n = map.size();
  const std::size_t k = (n + 9) / 10;  // ceil(0.1 n): minimal count >= 10%

  std::vector<double> sorted(map.values());
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(),
                   std::greater<>());
  const double t = sorted[k - 1];

  ThresholdedMap out;
  out.threshold = t;
  out.values = map;
  std::size_t retained = 0;
  for (double& v : out.values.values()) {
    if (v < t)
      v = 0.0;
    else
      ++retained;
  }
  out.retained_fraction = double(retained) / double(n);
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  out.degenerate = *lo == *hi;
  return out;
}

double iou_binary(const std::vector<std::uint8_t>& a,
                  const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("iou: shape mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

double iou(const std::vector<std::uint8_t>& mask, const ThresholdedMap& activation) {
  if (mask.size() != activation.values.size())
    throw std::invalid_argument("iou: shape mismatch");
  return iou_binary(mask, binarize(activation));
}

double part_explainability(const FeatureBatch& features, const PartMasks& masks,
                           std::size_t mask_h, std::size_t mask_w) {
  if (features.batch != 1)
    throw std::invalid_argument("part_explainability: expected a single image");
  check_masks(masks, mask_h * mask_w, "part_explainability");
  double sum = 0.0;
  for (std::size_t c = 0; c < features.channels; ++c)
    sum += best_part(channel_map(features, 0, c, mask_h, mask_w), masks).second;
  return sum / double(features.channels);
}

AssignmentMatrix assignment(const FeatureBatch& features,
                            const std::vector<PartMasks>& masks,
                            std::size_t mask_h, std::size_t mask_w) {
  if (features.batch == 0)
    throw std::invalid_argument("assignment: empty image set");
  if (masks.size() != features.batch)
    throw std::invalid_argument("assignment: one mask set per image required");
  const std::size_t n_parts = masks.front().size();
  for (const auto& m : masks) {
    if (m.size() != n_parts)
      throw std::invalid_argument("assignment: inconsistent part counts");
    check_masks(m, mask_h * mask_w, "assignment");
  }

  // votes[image][channel] = argmax part or SIZE_MAX for an empty activation
  std::vector<std::vector<std::size_t>> votes(
      features.batch, std::vector<std::size_t>(features.channels));
  for_chunks(features.batch, kImageChunk,
             [&](std::size_t, std::size_t lo, std::size_t hi) {
               for (std::size_t i = lo; i < hi; ++i)
                 for (std::size_t c = 0; c < features.channels; ++c)
                   votes[i][c] =
                       best_part(channel_map(features, i, c, mask_h, mask_w),
                                 masks[i])
                           .first;
             });

  AssignmentMatrix out;
  out.n_parts = n_parts;
  for (std::size_t c = 0; c < features.channels; ++c) {
    std::vector<double> row(n_parts, 0.0);
    std::size_t seen = 0;
    for (std::size_t i = 0; i < features.batch; ++i)
      if (votes[i][c] != SIZE_MAX) {
        row[votes[i][c]] += 1.0;
        ++seen;
      }
    if (seen == 0) continue;  // channel never activates: drop the row
    for (double& v : row) v /= double(seen);
    out.a.push_back(std::move(row));
    out.channels.push_back(c);
  }
  return out;
}

namespace {

void check_assignment(const AssignmentMatrix& a) {
  if (a.a.empty() || a.n_parts == 0)
    throw std::invalid_argument("location_consistency: empty assignment matrix");
  for (const auto& row : a.a) {
    if (row.size() != a.n_parts)
      throw std::invalid_argument("location_consistency: ragged matrix");
    double sum = 0.0;
    for (double v : row) {
      if (!(v >= 0.0))
        throw std::invalid_argument("location_consistency: negative entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("location_consistency: row does not sum to 1");
  }
}

}  // namespace

std::pair<std::vector<double>, double> location_consistency(
    const AssignmentMatrix& a) {
  check_assignment(a);
  const double uniform = 1.0 / double(a.n_parts);
  std::vector<double> s;
  s.reserve(a.a.size());
  double total = 0.0;
  for (const auto& row : a.a) {
    double ss = 0.0;
    for (double v : row) ss += (v - uniform) * (v - uniform);
    const double si = std::sqrt(ss) / double(a.n_parts);
    s.push_back(si);
    total += si;
  }
  return {std::move(s), total / double(a.a.size())};
}

std::pair<std::vector<double>, double> location_consistency_literal(
    const AssignmentMatrix& a) {
  check_assignment(a);
  const double uniform = 1.0 / double(a.n_parts);
  std::vector<double> s;
  s.reserve(a.a.size());
  double total = 0.0;
  for (const auto& row : a.a) {
    double sum = 0.0;
    for (double v : row) sum += v - uniform;
    // signed sum of deviations from a row-stochastic row is ~0 (or slightly
    // negative in floating point, where the root goes NaN) -- kept verbatim
    // for auditing, never for reporting
    const double si = std::sqrt(sum) / double(a.n_parts);
    s.push_back(si);
    total += si;
  }
  return {std::move(s), total / double(a.a.size())};
}

namespace {

struct PeakForest {
  std::vector<std::ptrdiff_t> parent;  // -1 = pixel not yet flooded
  std::vector<std::size_t> champ;      // root -> champion pixel

  explicit PeakForest(std::size_t n) : parent(n, -1), champ(n, 0) {}

  std::size_t find(std::size_t x) {
    while (std::size_t(parent[x]) != x) {
      parent[x] = parent[std::size_t(parent[x])];
      x = std::size_t(parent[x]);
    }
    return x;
  }
};

// Champion order: higher value wins, then lower pixel index.
bool beats(const Tensor& m, std::size_t a, std::size_t b) {
  return m[a] != m[b] ? m[a] > m[b] : a < b;
}

}  // namespace

std::size_t count_peaks(const Tensor& map, double prominence_min) {
  check_map(map, "count_peaks");
  if (prominence_min < 0.0)
    throw std::invalid_argument("count_peaks: prominence_min must be >= 0");
  const std::size_t h = map.dim(0), w = map.dim(1), n = h * w;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return beats(map, a, b); });

  PeakForest forest(n);
  std::size_t count = 0;
  for (std::size_t p : order) {
    forest.parent[p] = std::ptrdiff_t(p);
    forest.champ[p] = p;
    const std::size_t r = p / w, c = p % w;
    for (std::ptrdiff_t dr = -1; dr <= 1; ++dr)
      for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        const std::ptrdiff_t nr = std::ptrdiff_t(r) + dr;
        const std::ptrdiff_t nc = std::ptrdiff_t(c) + dc;
        if (nr < 0 || nc < 0 || nr >= std::ptrdiff_t(h) || nc >= std::ptrdiff_t(w))
          continue;
        const std::size_t q = std::size_t(nr) * w + std::size_t(nc);
        if (forest.parent[q] < 0) continue;  // below the current water level
        const std::size_t rp = forest.find(p), rq = forest.find(q);
        if (rp == rq) continue;
        // the weaker champion dies here; its prominence is its height above
        // this merge level (the saddle)
        std::size_t win = rq, lose = rp;
        if (beats(map, forest.champ[rp], forest.champ[rq])) std::swap(win, lose);
        if (map[forest.champ[lose]] - map[p] > prominence_min) ++count;
        forest.parent[lose] = std::ptrdiff_t(win);
      }
  }
  // sole survivor: the global maximum, measured against the map minimum
  const std::size_t root = forest.find(order.front());
  if (map[forest.champ[root]] - map[order.back()] > prominence_min) ++count;
  return count;
}

double default_prominence(const Tensor& map) {
  check_map(map, "default_prominence");
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  return 0.05 * (*hi - *lo);
}

PeakStats activation_robustness(const FeatureBatch& features,
                                std::optional<double> prominence_min) {
  const std::size_t maps = features.rows();
  if (maps < 2)
    throw std::invalid_argument("activation_robustness: need at least 2 maps");

  std::vector<double> counts(maps, 0.0);
  for_chunks(maps, kImageChunk * 4,
             [&](std::size_t, std::size_t lo, std::size_t hi) {
               for (std::size_t r = lo; r < hi; ++r) {
                 auto row = features.row(r);
                 Tensor map = Tensor::from_data(
                     {features.height, features.width},
                     std::vector<double>(row.begin(), row.end()));
                 const double pm =
                     prominence_min ? *prominence_min : default_prominence(map);
                 counts[r] = double(count_peaks(map, pm));
               }
             });

  PeakStats stats;
  stats.mean = std::accumulate(counts.begin(), counts.end(), 0.0) / double(maps);
  stats.stderr_ = sample_stderr(counts);
  return stats;
}

MetricsReport evaluate_metrics(const FeatureBatch& features,
                               const std::vector<PartMasks>& masks,
                               std::size_t mask_h, std::size_t mask_w,
                               std::optional<double> prominence_min) {
  if (features.batch == 0 || masks.size() != features.batch)
    throw std::invalid_argument("evaluate_metrics: one mask set per image required");

  MetricsReport report;
  report.pe_per_image.assign(features.batch, 0.0);
  report.total_maps = features.rows();
  std::vector<std::size_t> degenerate(features.batch, 0);
  for_chunks(features.batch, kImageChunk,
             [&](std::size_t, std::size_t lo, std::size_t hi) {
               for (std::size_t i = lo; i < hi; ++i) {
                 double sum = 0.0;
                 for (std::size_t c = 0; c < features.channels; ++c) {
                   const auto tmap = channel_map(features, i, c, mask_h, mask_w);
                   degenerate[i] += tmap.degenerate;
                   sum += best_part(tmap, masks[i]).second;
                 }
                 report.pe_per_image[i] = sum / double(features.channels);
               }
             });
  report.degenerate_maps =
      std::accumulate(degenerate.begin(), degenerate.end(), std::size_t{0});
  report.pe_mean = std::accumulate(report.pe_per_image.begin(),
                                   report.pe_per_image.end(), 0.0) /
                   double(features.batch);

  const auto matrix = assignment(features, masks, mask_h, mask_w);
  if (!matrix.a.empty()) {
    auto [s, ls] = location_consistency(matrix);
    report.s_per_channel = std::move(s);
    report.assignment_channels = matrix.channels;
    report.ls = ls;
  }

  const auto peaks = activation_robustness(features, prominence_min);
  report.peak_mean = peaks.mean;
  report.peak_stderr = peaks.stderr_;
  return report;
}

std::string report_csv(const MetricsReport& report) {
  std::ostringstream out;
  out.precision(9);
  out << "metric,scope,value\n";
  for (std::size_t i = 0; i < report.pe_per_image.size(); ++i)
    out << "pe,image" << i << ',' << report.pe_per_image[i] << '\n';
  out << "pe,mean," << report.pe_mean << '\n';
  for (std::size_t i = 0; i < report.s_per_channel.size(); ++i)
    out << "s,channel" << report.assignment_channels[i] << ','
        << report.s_per_channel[i] << '\n';
  out << "ls,mean," << report.ls << '\n';
  out << "peaks,mean," << report.peak_mean << '\n';
  out << "peaks,stderr," << report.peak_stderr << '\n';
  out << "degenerate,count," << report.degenerate_maps << '\n';
  return out.str();
}

std::string report_summary(const MetricsReport& report) {
  std::ostringstream out;
  out.precision(4);
  out << "part explainability (mean over " << report.pe_per_image.size()
      << " images):  " << report.pe_mean << '\n';
  out << "location consistency (over " << report.s_per_channel.size()
      << " active channels): " << report.ls << '\n';
  out << "activation peaks: " << report.peak_mean << " +/- "
      << report.peak_stderr << " (stderr)\n";
  if (report.degenerate_maps > 0)
    out << "degenerate (constant) maps: " << report.degenerate_maps << " of "
        << report.total_maps << '\n';
  return out.str();
}

}  // namespace ecloss
