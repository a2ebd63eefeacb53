#include "ecloss/loss.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "ecloss/parallel.hpp"

namespace ecloss {

namespace {

constexpr std::size_t kRowChunk = 64;  // rows per work unit, thread-count independent

// Templates packed into one contiguous count x map_size matrix so the
// per-row fitness pass is a plain matrix-vector product.
struct PackedTemplates {
  std::size_t count = 0;
  std::size_t map = 0;
  std::vector<double> m;  // row-major [count][map]

  explicit PackedTemplates(const TemplateSet& set) {
    count = set.size();
    map = static_cast<std::size_t>(set.params.height) * set.params.width;
    m.resize(count * map);
    for (std::size_t k = 0; k < count; ++k) {
      const auto& v = set.templates[k].values;
      std::copy(v.begin(), v.end(), m.begin() + k * map);
    }
  }
  std::span<const double> row(std::size_t k) const { return {m.data() + k * map, map}; }
};

void check_batch(const FeatureBatch& batch, const TemplateSet& set) {
  if (set.size() == 0) throw std::invalid_argument("loss: empty template set");
  if (batch.batch == 0 || batch.channels == 0)
    throw std::invalid_argument("loss: empty feature batch");
  if (batch.height != static_cast<std::size_t>(set.params.height) ||
      batch.width != static_cast<std::size_t>(set.params.width))
    throw std::invalid_argument("loss: feature map grid does not match template grid");
  if (batch.values.size() != batch.rows() * batch.map_size())
    throw std::invalid_argument("loss: value count does not match declared shape");
  for (double v : batch.values)
    if (!std::isfinite(v)) throw std::invalid_argument("loss: non-finite feature value");
}

// Deterministic pairwise tree sum, arity 2: the reduction order depends only
// on the element count, never on thread scheduling.
double tree_sum(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::size_t n = v.size();
  while (n > 1) {
    std::size_t half = n / 2;
    for (std::size_t i = 0; i < half; ++i) v[i] = v[2 * i] + v[2 * i + 1];
    if (n % 2 == 1) {
      v[half] = v[n - 1];
      ++half;
    }
    n = half;
  }
  return v[0];
}

void fitness_into(std::span<const double> map, const PackedTemplates& pt,
                  std::span<double> out) {
  for (std::size_t k = 0; k < pt.count; ++k) {
    const double* t = pt.m.data() + k * pt.map;
    long double acc = 0.0L;
    for (std::size_t i = 0; i < pt.map; ++i) acc += map[i] * t[i];
    out[k] = static_cast<double>(acc);
  }
}

// Per-row softmax statistics. With P(T) = 1/N the row's KL term is
//   sum_k p_k (f_k - m) - ln(Z / N)
// which is exactly 0.0 when all fitness entries tie (Z == N bit-exactly).
struct RowStats {
  double kl = 0.0;
  double log_z = 0.0;  // ln sum_k exp(f_k - m)
  double max_f = 0.0;
};

RowStats softmax_row(std::span<const double> f, std::span<double> p) {
  const std::size_t n = f.size();
  double m = f[0];
  for (std::size_t k = 1; k < n; ++k) m = std::max(m, f[k]);
  long double z = 0.0L;
  for (std::size_t k = 0; k < n; ++k) {
    p[k] = std::exp(f[k] - m);
    z += p[k];
  }
  const double zd = static_cast<double>(z);
  long double dot = 0.0L;
  for (std::size_t k = 0; k < n; ++k) {
    dot += p[k] * (f[k] - m);
    p[k] /= zd;
  }
  RowStats s;
  s.max_f = m;
  s.log_z = std::log(zd);
  s.kl = static_cast<double>(dot) / zd - std::log(zd / static_cast<double>(n));
  return s;
}

}  // namespace

std::vector<double> fitness(std::span<const double> map, const TemplateSet& set) {
  const std::size_t map_size =
      static_cast<std::size_t>(set.params.height) * set.params.width;
  if (map.size() != map_size)
    throw std::invalid_argument("fitness: map size does not match template grid");
  std::vector<double> out(set.size());
  for (std::size_t k = 0; k < set.size(); ++k) {
    const auto& t = set.templates[k].values;
    long double acc = 0.0L;
    for (std::size_t i = 0; i < map_size; ++i) acc += map[i] * t[i];
    out[k] = static_cast<double>(acc);
  }
  return out;
}

std::vector<double> conditional_likelihood(std::span<const double> fitness) {
  if (fitness.empty())
    throw std::invalid_argument("conditional_likelihood: empty fitness vector");
  for (double v : fitness)
    if (!std::isfinite(v))
      throw std::invalid_argument("conditional_likelihood: non-finite fitness");
  std::vector<double> p(fitness.size());
  softmax_row(fitness, p);
  return p;
}

std::vector<double> marginal(std::span<const double> conditionals, std::size_t rows,
                             std::size_t cols, double prior) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("marginal: empty batch");
  if (conditionals.size() != rows * cols)
    throw std::invalid_argument("marginal: row/column counts do not match data");
  if (std::abs(prior * static_cast<double>(cols) - 1.0) > 1e-9)
    throw std::invalid_argument("marginal: prior is not uniform over the columns");
  std::vector<double> out(cols, 0.0);
  std::vector<long double> acc(cols, 0.0L);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < cols; ++k) acc[k] += conditionals[r * cols + k];
  for (std::size_t k = 0; k < cols; ++k)
    out[k] = static_cast<double>(acc[k] / static_cast<long double>(rows));
  return out;
}

MIResult mutual_information(const FeatureBatch& batch, const TemplateSet& set) {
  check_batch(batch, set);
  const PackedTemplates pt(set);
  const std::size_t rows = batch.rows();
  const std::size_t cols = pt.count;

  MIResult res;
  res.conditional_rows = rows;
  res.conditional_cols = cols;
  res.conditional.resize(rows * cols);
  std::vector<double> kl(rows);

  for_chunks(rows, kRowChunk, [&](std::size_t, std::size_t lo, std::size_t hi) {
    std::vector<double> f(cols);
    for (std::size_t r = lo; r < hi; ++r) {
      fitness_into(batch.row(r), pt, f);
      kl[r] = softmax_row(f, {res.conditional.data() + r * cols, cols}).kl;
    }
  });

  res.mi = tree_sum(kl) / static_cast<double>(rows);
  res.per_channel_mi.assign(batch.channels, 0.0);
  for (std::size_t ch = 0; ch < batch.channels; ++ch) {
    std::vector<double> chan(batch.batch);
    for (std::size_t s = 0; s < batch.batch; ++s) chan[s] = kl[s * batch.channels + ch];
    res.per_channel_mi[ch] = tree_sum(std::move(chan)) / static_cast<double>(batch.batch);
  }
  res.marginal = marginal(res.conditional, rows, cols, set.prior);
  return res;
}

double mutual_information_value(const FeatureBatch& batch, const TemplateSet& set) {
  check_batch(batch, set);
  const PackedTemplates pt(set);
  const std::size_t rows = batch.rows();
  std::vector<double> kl(rows);
  for_chunks(rows, kRowChunk, [&](std::size_t, std::size_t lo, std::size_t hi) {
    std::vector<double> f(pt.count), p(pt.count);
    for (std::size_t r = lo; r < hi; ++r) {
      fitness_into(batch.row(r), pt, f);
      kl[r] = softmax_row(f, p).kl;
    }
  });
  return tree_sum(kl) / static_cast<double>(rows);
}

std::pair<double, Tensor> ecloss_and_gradient(const FeatureBatch& batch,
                                              const TemplateSet& set) {
  check_batch(batch, set);
  const PackedTemplates pt(set);
  const std::size_t rows = batch.rows();
  const std::size_t cols = pt.count;
  const std::size_t map = pt.map;
  const double inv_rows = 1.0 / static_cast<double>(rows);

  Tensor grad({batch.batch, batch.channels, batch.height, batch.width}, 0.0);
  std::vector<double> kl(rows);

  for_chunks(rows, kRowChunk, [&](std::size_t, std::size_t lo, std::size_t hi) {
    std::vector<double> f(cols), p(cols), lnp(cols), g(cols);
    for (std::size_t r = lo; r < hi; ++r) {
      fitness_into(batch.row(r), pt, f);
      const RowStats st = softmax_row(f, p);
      kl[r] = st.kl;
      // dKL/df_k = p_k (ln p_k - sum_j p_j ln p_j); ln p from the shifted
      // form so underflowed p_k contribute exact zeros instead of NaN
      long double h = 0.0L;
      for (std::size_t k = 0; k < cols; ++k) {
        lnp[k] = (f[k] - st.max_f) - st.log_z;
        h += p[k] * lnp[k];
      }
      const double hd = static_cast<double>(h);
      for (std::size_t k = 0; k < cols; ++k) g[k] = p[k] * (lnp[k] - hd);
      // dECLoss/dx = -(1/rows) * T^t g
      double* gx = grad.data() + r * map;
      for (std::size_t k = 0; k < cols; ++k) {
        const double gk = -inv_rows * g[k];
        if (gk == 0.0) continue;
        const double* t = pt.m.data() + k * map;
        for (std::size_t i = 0; i < map; ++i) gx[i] += gk * t[i];
      }
    }
  });

  const double loss = -(tree_sum(std::move(kl)) / static_cast<double>(rows));
  return {loss, std::move(grad)};
}

double total_loss(double cls_loss, double mi, const LossConfig& config) {
  if (!std::isfinite(cls_loss) || !std::isfinite(mi))
    throw std::invalid_argument("total_loss: non-finite input");
  if (config.alpha < 0.0 || config.beta < 0.0)
    throw std::invalid_argument("total_loss: negative loss weight");
  return config.alpha * cls_loss - config.beta * mi;
}

LossConfig update_beta(const LossConfig& config, std::span<const double> history) {
  if (config.schedule == LossConfig::BetaSchedule::fixed) return config;
  if (config.beta == 0.0) return config;  // ablation stays off
  if (history.size() < 2) return config;
  LossConfig next = config;
  const double first = history.front();
  const double last = history.back();
  if (last < first)
    next.beta *= next.beta_grow;
  else if (last > first)
    next.beta *= next.beta_shrink;
  next.beta = std::clamp(next.beta, next.beta_min, next.beta_max);
  return next;
}

}  // namespace ecloss
