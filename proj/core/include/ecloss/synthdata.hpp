#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ecloss/nn.hpp"
#include "ecloss/tensor.hpp"

namespace ecloss {

enum class PartProfile { gaussian, disk };

// A blob part at a canonical normalized position. Gaussian parts use
// sigma = radius/2; the binary mask marks the profile above half-maximum
// (0.589*radius for gaussian, radius itself for disk).
struct PartSpec {
  std::string name;
  double center_u = 0.5;  // row fraction in [0,1]
  double center_v = 0.5;  // col fraction in [0,1]
  double radius = 0.1;    // normalized
  PartProfile profile = PartProfile::gaussian;

  double mask_radius() const;
};

// two eyes, a nose, and a mouth — spaced so the default jitter keeps their
// masks disjoint
std::vector<PartSpec> default_parts();

struct DatasetSpec {
  std::size_t n_identities = 10;
  std::size_t samples_per_identity = 200;
  std::size_t image_size = 56;
  double jitter_radius = 0.05;  // normalized displacement bound
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  // also checks that worst-case jitter + size scaling keeps masks disjoint
  void validate(std::span<const PartSpec> parts) const;
};

struct SynthSample {
  Tensor image;  // 1 x H x W, values in [0,1]
  std::size_t identity = 0;
  std::vector<std::vector<std::uint8_t>> masks;  // per part, H*W, 0/1
};

struct SynthDataset {
  DatasetSpec spec;
  std::vector<PartSpec> parts;
  std::vector<SynthSample> samples;

  std::size_t size() const { return samples.size(); }
};

// Identity fixes each part's intensity level (base-3 digits over
// {0.55, 0.775, 1.0}) and size scale (base-2 digits over {1.0, 1.1});
// per-sample jitter displaces centers uniformly in a disk; seeded Gaussian
// pixel noise, clamped to [0,1]. Sample i uses its own derived RNG stream,
// so parallel and serial generation agree bitwise.
SynthDataset generate(const DatasetSpec& spec, std::vector<PartSpec> parts);

// Seeded identity-stratified split; every identity with >= 2 samples lands
// on both sides. Throws if either side ends up empty.
std::pair<SynthDataset, SynthDataset> split(const SynthDataset& data,
                                            double train_fraction,
                                            std::uint64_t seed);

LabeledDataset to_labeled(const SynthDataset& data);

// "ECDS1 <n> <H> <W> <n_parts>", then per sample: label line, H image rows,
// n_parts * H mask rows of 0/1
void save_dataset(const SynthDataset& data, const std::filesystem::path& path);
SynthDataset load_dataset(const std::filesystem::path& path);

}  // namespace ecloss
