#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "ecloss/metrics.hpp"
#include "ecloss/tensor.hpp"

namespace ecloss {

struct HeatmapStyle {
  struct Stop {
    double value, r, g, b;
  };
  std::vector<Stop> stops;   // strictly increasing values spanning [0,1]
  double overlay_alpha = 0.6;

  static HeatmapStyle classic();  // blue -> cyan -> green -> yellow -> red
  void validate() const;
  std::array<double, 3> color(double v) const;
};

// Pixel-center (align-corners-false) bilinear interpolation; upscale only.
Tensor upsample_bilinear(const Tensor& map, std::size_t out_h, std::size_t out_w);

// Grayscale image in [0,1] with the thresholded map blended on top. Pixels
// where the map is zero pass the image through untouched; elsewhere the
// nonzero values are normalized to [0,1] and mixed at overlay_alpha.
Tensor render_overlay(const Tensor& image, const ThresholdedMap& tmap,
                      const HeatmapStyle& style);

// Binary PPM (P6) / PGM (P5), maxval 255, half-up rounding.
void write_ppm(const Tensor& rgb, const std::filesystem::path& path);
void write_pgm(const Tensor& gray, const std::filesystem::path& path);

// Equal-size h x w x 3 tiles laid out row-major into a grid; short rows are
// padded with black.
Tensor concat_grid(const std::vector<Tensor>& tiles, std::size_t columns);

}  // namespace ecloss
