#include "ecloss/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ecloss/parallel.hpp"
#include "ecloss/rng.hpp"

namespace ecloss {

namespace {

constexpr double kIntensityLevels[3] = {0.55, 0.775, 1.0};
constexpr double kSizeScales[2] = {1.0, 1.1};
constexpr double kMaxSizeScale = 1.1;

// half-maximum of exp(-d^2 / (2 sigma^2)) with sigma = r/2
constexpr double kGaussHalfMax = 0.58870501125773734;  // sqrt(2 ln 2) / 2

double intensity_of(std::size_t identity, std::size_t part) {
  std::size_t d = identity;
  for (std::size_t p = 0; p < part; ++p) d /= 3;
  return kIntensityLevels[d % 3];
}

double scale_of(std::size_t identity, std::size_t part) {
  return kSizeScales[(identity >> part) & 1];
}

}  // namespace

double PartSpec::mask_radius() const {
  return profile == PartProfile::gaussian ? kGaussHalfMax * radius : radius;
}

std::vector<PartSpec> default_parts() {
  return {
      {"left_eye", 0.32, 0.28, 0.09, PartProfile::gaussian},
      {"right_eye", 0.32, 0.72, 0.09, PartProfile::gaussian},
      {"nose", 0.55, 0.50, 0.08, PartProfile::gaussian},
      {"mouth", 0.80, 0.50, 0.09, PartProfile::gaussian},
  };
}

void DatasetSpec::validate(std::span<const PartSpec> parts) const {
  if (n_identities == 0 || samples_per_identity == 0 || image_size == 0)
    throw std::invalid_argument("dataset spec: counts and image size must be positive");
  if (jitter_radius < 0.0 || noise_std < 0.0)
    throw std::invalid_argument("dataset spec: jitter and noise must be nonnegative");
  if (parts.empty()) throw std::invalid_argument("dataset spec: no parts");

  for (const auto& p : parts) {
    if (p.radius <= 0.0) throw std::invalid_argument("part " + p.name + ": radius <= 0");
    if (p.center_u < 0.0 || p.center_u > 1.0 || p.center_v < 0.0 || p.center_v > 1.0)
      throw std::invalid_argument("part " + p.name + ": center outside [0,1]^2");
  }
  for (std::size_t a = 0; a < parts.size(); ++a)
    for (std::size_t b = a + 1; b < parts.size(); ++b) {
      if (parts[a].name == parts[b].name)
        throw std::invalid_argument("duplicate part name " + parts[a].name);
      const double dist = std::hypot(parts[a].center_u - parts[b].center_u,
                                     parts[a].center_v - parts[b].center_v);
      if (dist <= parts[a].radius + parts[b].radius)
        throw std::invalid_argument("parts " + parts[a].name + " and " +
                                    parts[b].name + " overlap at canonical centers");
      // worst case: both masks at max size scale, centers jittered toward
      // each other
      const double reach = kMaxSizeScale * (parts[a].mask_radius() +
                                            parts[b].mask_radius()) +
                           2.0 * jitter_radius;
      if (dist <= reach)
        throw std::invalid_argument("jitter " + std::to_string(jitter_radius) +
                                    " can collide masks of " + parts[a].name +
                                    " and " + parts[b].name);
    }
}

SynthDataset generate(const DatasetSpec& spec, std::vector<PartSpec> parts) {
  spec.validate(parts);
  const std::size_t n = spec.n_identities * spec.samples_per_identity;
  const std::size_t hw = spec.image_size;

  SynthDataset data;
  data.spec = spec;
  data.parts = std::move(parts);
  data.samples.resize(n);

  // per-sample slot (disjoint writes) so the parallel loop stays race-free;
  // scanned after the join
  std::vector<std::size_t> empty_mask_part(n, SIZE_MAX);

  for_chunks(n, 16, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      SynthSample& sample = data.samples[i];
      sample.identity = i / spec.samples_per_identity;
      sample.image = Tensor({1, hw, hw}, 0.0);
      sample.masks.assign(data.parts.size(), std::vector<std::uint8_t>(hw * hw, 0));

      Rng rng(derive_seed(spec.seed, "sample", i));

      // jittered centers first, in part order, so the draw sequence is fixed
      std::vector<double> cu(data.parts.size()), cv(data.parts.size());
      for (std::size_t p = 0; p < data.parts.size(); ++p) {
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double rad = spec.jitter_radius * std::sqrt(rng.uniform());
        cu[p] = data.parts[p].center_u + rad * std::cos(angle);
        cv[p] = data.parts[p].center_v + rad * std::sin(angle);
      }

      for (std::size_t r = 0; r < hw; ++r)
        for (std::size_t c = 0; c < hw; ++c) {
          const double u = (double(r) + 0.5) / double(hw);
          const double v = (double(c) + 0.5) / double(hw);
          double val = 0.0;
          for (std::size_t p = 0; p < data.parts.size(); ++p) {
            const PartSpec& part = data.parts[p];
            const double scale = scale_of(sample.identity, p);
            const double level = intensity_of(sample.identity, p);
            const double d = std::hypot(u - cu[p], v - cv[p]);
            double profile = 0.0;
            if (part.profile == PartProfile::gaussian) {
              const double sigma = scale * part.radius / 2.0;
              profile = level * std::exp(-d * d / (2.0 * sigma * sigma));
            } else if (d <= scale * part.radius) {
              profile = level;
            }
            val = std::max(val, profile);
            if (d <= scale * part.mask_radius())
              sample.masks[p][r * hw + c] = 1;
          }
          sample.image[r * hw + c] = val;
        }

      if (spec.noise_std > 0.0) {
        for (std::size_t j = 0; j < hw * hw; ++j) {
          const double noisy = sample.image[j] + rng.normal(0.0, spec.noise_std);
          sample.image[j] = std::clamp(noisy, 0.0, 1.0);
        }
      }

      for (std::size_t p = 0; p < data.parts.size(); ++p) {
        bool any = false;
        for (std::uint8_t m : sample.masks[p]) any = any || m;
        if (!any && empty_mask_part[i] == SIZE_MAX) empty_mask_part[i] = p;
      }
    }
  });

  for (std::size_t i = 0; i < n; ++i)
    if (empty_mask_part[i] != SIZE_MAX)
      throw std::invalid_argument("image size " + std::to_string(hw) +
                                  " rasterizes an empty mask for part " +
                                  data.parts[empty_mask_part[i]].name);
  return data;
}

std::pair<SynthDataset, SynthDataset> split(const SynthDataset& data,
                                            double train_fraction,
                                            std::uint64_t seed) {
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
    throw std::invalid_argument("split: fraction must lie strictly between 0 and 1");

  // bucket sample indices by identity, preserving generation order
  std::vector<std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t id = data.samples[i].identity;
    if (id >= buckets.size()) buckets.resize(id + 1);
    buckets[id].push_back(i);
  }

  SynthDataset train, eval;
  train.spec = eval.spec = data.spec;
  train.parts = eval.parts = data.parts;

  for (std::size_t id = 0; id < buckets.size(); ++id) {
    auto& bucket = buckets[id];
    if (bucket.empty()) continue;
    Rng rng(derive_seed(seed, "split", id));
    shuffle(bucket, rng);
    const std::size_t m = bucket.size();
    std::size_t n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(m)));
    if (m >= 2) n_train = std::clamp<std::size_t>(n_train, 1, m - 1);
    for (std::size_t k = 0; k < m; ++k)
      (k < n_train ? train : eval).samples.push_back(data.samples[bucket[k]]);
  }

  if (train.samples.empty() || eval.samples.empty())
    throw std::invalid_argument("split: a side came out empty");
  return {std::move(train), std::move(eval)};
}

LabeledDataset to_labeled(const SynthDataset& data) {
  if (data.size() == 0) throw std::invalid_argument("to_labeled: empty dataset");
  const std::size_t hw = data.spec.image_size;
  LabeledDataset out;
  out.images = Tensor({data.size(), 1, hw, hw});
  out.labels.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::copy(data.samples[i].image.data(), data.samples[i].image.data() + hw * hw,
              out.images.data() + i * hw * hw);
    out.labels[i] = data.samples[i].identity;
  }
  return out;
}

void save_dataset(const SynthDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::size_t hw = data.spec.image_size;
  out << "ECDS1 " << data.size() << ' ' << hw << ' ' << hw << ' '
      << data.parts.size() << '\n';
  char buf[32];
  std::string line;
  for (const auto& sample : data.samples) {
    out << sample.identity << '\n';
    for (std::size_t r = 0; r < hw; ++r) {
      line.clear();
      for (std::size_t c = 0; c < hw; ++c) {
        std::snprintf(buf, sizeof buf, "%.9g", sample.image[r * hw + c]);
        if (c) line += ' ';
        line += buf;
      }
      line += '\n';
      out << line;
    }
    for (const auto& mask : sample.masks)
      for (std::size_t r = 0; r < hw; ++r) {
        line.clear();
        for (std::size_t c = 0; c < hw; ++c) {
          if (c) line += ' ';
          line += mask[r * hw + c] ? '1' : '0';
        }
        line += '\n';
        out << line;
      }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

SynthDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto fail = [&](const std::string& why) {
    throw std::runtime_error(path.string() + ": " + why);
  };

  std::string magic;
  std::size_t n = 0, h = 0, w = 0, n_parts = 0;
  if (!(in >> magic >> n >> h >> w >> n_parts) || magic != "ECDS1")
    fail("malformed header (want 'ECDS1 <n> <H> <W> <n_parts>')");
  if (h != w) fail("only square images are supported");
  if (n == 0 || h == 0 || n_parts == 0) fail("degenerate header counts");

  SynthDataset data;
  data.spec.image_size = h;
  data.spec.samples_per_identity = 0;  // unknown from file
  data.spec.noise_std = 0.0;
  data.spec.jitter_radius = 0.0;
  data.parts.resize(n_parts);
  for (std::size_t p = 0; p < n_parts; ++p)
    data.parts[p].name = "part" + std::to_string(p);

  data.samples.resize(n);
  std::size_t max_id = 0;
  for (std::size_t i = 0; i < n; ++i) {
    SynthSample& sample = data.samples[i];
    if (!(in >> sample.identity)) fail("missing label for sample " + std::to_string(i));
    max_id = std::max(max_id, sample.identity);
    sample.image = Tensor({1, h, w});
    for (std::size_t j = 0; j < h * w; ++j)
      if (!(in >> sample.image[j]))
        fail("truncated image in sample " + std::to_string(i));
    sample.masks.assign(n_parts, std::vector<std::uint8_t>(h * w, 0));
    for (std::size_t p = 0; p < n_parts; ++p)
      for (std::size_t j = 0; j < h * w; ++j) {
        int bit = 0;
        if (!(in >> bit) || (bit != 0 && bit != 1))
          fail("bad mask bit in sample " + std::to_string(i) + ", part " +
               std::to_string(p));
        sample.masks[p][j] = static_cast<std::uint8_t>(bit);
      }
  }
  data.spec.n_identities = max_id + 1;
  return data;
}

}  // namespace ecloss
