#pragma once

// Independent reference implementations used only by the tests. These are
// written straight from the formulas with none of the production code's
// shortcuts (no max-shift, no packed matrices, no incremental accumulators)
// so a shared bug between library and test is unlikely.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "ecloss/loss.hpp"
#include "ecloss/templates.hpp"

namespace oracles {

// MI(T;X) = sum_T sum_x P(x) P(T|x) ln(P(T|x)/P(T)), P(x) = 1/rows,
// P(T|x) = exp(tr(x.T)) / sum. Plain softmax without max-shift: callers keep
// values small enough that exp stays in range.
inline double brute_mi(const ecloss::FeatureBatch& batch,
                       const ecloss::TemplateSet& set) {
  const std::size_t rows = batch.batch * batch.channels;
  const std::size_t n = set.size();
  long double mi = 0.0L;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<long double> e(n);
    long double z = 0.0L;
    for (std::size_t k = 0; k < n; ++k) {
      long double tr = 0.0L;
      for (std::size_t u = 0; u < batch.height; ++u)
        for (std::size_t v = 0; v < batch.width; ++v)
          tr += batch.values[(r * batch.height + u) * batch.width + v] *
                set.templates[k].at(u, v);
      e[k] = std::exp(tr);
      z += e[k];
    }
    for (std::size_t k = 0; k < n; ++k) {
      const long double p = e[k] / z;
      mi += (1.0L / rows) * p * std::log(p / (long double)set.prior);
    }
  }
  return static_cast<double>(mi);
}

// Central finite differences of an arbitrary scalar function of the batch.
inline std::vector<double> central_diff(
    const ecloss::FeatureBatch& batch,
    const std::function<double(const ecloss::FeatureBatch&)>& f, double h) {
  std::vector<double> grad(batch.values.size());
  ecloss::FeatureBatch probe = batch;
  for (std::size_t i = 0; i < probe.values.size(); ++i) {
    const double keep = probe.values[i];
    probe.values[i] = keep + h;
    const double up = f(probe);
    probe.values[i] = keep - h;
    const double down = f(probe);
    probe.values[i] = keep;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline double max_rel_err(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Spearman rank correlation; average ranks for ties.
inline std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rk(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double mean_rank = 0.5 * (i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rk[order[k]] = mean_rank;
    i = j + 1;
  }
  return rk;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x), ry = ranks(y);
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) mx += rx[i], my += ry[i];
  mx /= n, my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Top-10% threshold by full descending sort (the library uses nth_element).
struct ThresholdOracle {
  double t;
  std::size_t retained;
};
inline ThresholdOracle top10_oracle(const std::vector<double>& values) {
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t k = (values.size() + 9) / 10;
  ThresholdOracle out{sorted[k - 1], 0};
  for (double v : values) out.retained += v >= out.t;
  return out;
}

// IoU from explicit index sets rather than a fused popcount loop.
inline double iou_sets(const std::vector<std::uint8_t>& a,
                       const std::vector<std::uint8_t>& b) {
  std::vector<std::size_t> ia, ib, un, in;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]) ia.push_back(i);
    if (b[i]) ib.push_back(i);
  }
  std::set_union(ia.begin(), ia.end(), ib.begin(), ib.end(), std::back_inserter(un));
  std::set_intersection(ia.begin(), ia.end(), ib.begin(), ib.end(),
                        std::back_inserter(in));
  return un.empty() ? 0.0 : double(in.size()) / double(un.size());
}

// Topographic prominence by widest-path search instead of union-find: the
// saddle of pixel p is the best (max of path minima) route to any pixel that
// outranks it (higher value, ties to the lower index). best[q] is computed
// with a Dijkstra-style relaxation maximizing the path's minimum value.
inline double prominence_widest_path(const std::vector<double>& m, std::size_t h,
                                     std::size_t w, std::size_t p) {
  const std::size_t n = h * w;
  const double neg = -std::numeric_limits<double>::infinity();
  std::vector<double> best(n, neg);
  std::vector<char> done(n, 0);
  best[p] = m[p];
  for (;;) {
    std::size_t u = n;
    for (std::size_t i = 0; i < n; ++i)
      if (!done[i] && best[i] != neg && (u == n || best[i] > best[u])) u = i;
    if (u == n) break;
    done[u] = 1;
    const std::size_t r = u / w, c = u % w;
    for (std::ptrdiff_t dr = -1; dr <= 1; ++dr)
      for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
        const std::ptrdiff_t nr = std::ptrdiff_t(r) + dr;
        const std::ptrdiff_t nc = std::ptrdiff_t(c) + dc;
        if ((dr == 0 && dc == 0) || nr < 0 || nc < 0 ||
            nr >= std::ptrdiff_t(h) || nc >= std::ptrdiff_t(w))
          continue;
        const std::size_t v = std::size_t(nr) * w + std::size_t(nc);
        best[v] = std::max(best[v], std::min(best[u], m[v]));
      }
  }
  double saddle = neg;
  for (std::size_t q = 0; q < n; ++q)
    if (m[q] > m[p] || (m[q] == m[p] && q < p)) saddle = std::max(saddle, best[q]);
  if (saddle == neg) return m[p] - *std::min_element(m.begin(), m.end());
  return m[p] - saddle;
}

inline std::size_t count_peaks_oracle(const std::vector<double>& m, std::size_t h,
                                      std::size_t w, double prominence_min) {
  std::size_t count = 0;
  for (std::size_t p = 0; p < h * w; ++p)
    count += prominence_widest_path(m, h, w, p) > prominence_min;
  return count;
}

}  // namespace oracles
