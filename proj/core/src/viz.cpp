#include "ecloss/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

namespace ecloss {
namespace {

// Source coordinate of an output pixel center under the pixel-center
// convention, clamped so edge pixels replicate the border sample.
double src_coord(std::size_t o, std::size_t in, std::size_t out) {
  const double s = (double(o) + 0.5) * (double(in) / double(out)) - 0.5;
  return std::clamp(s, 0.0, double(in - 1));
}

std::uint8_t quantize(double v) {
  return std::uint8_t(std::lround(v * 255.0));  // half-up for v >= 0
}

void check_unit_range(const Tensor& t, const char* who) {
  for (double v : t.values())
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument(std::string(who) + ": values must lie in [0,1]");
}

void write_bytes(const std::filesystem::path& path, const std::string& header,
                 const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << header;
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

HeatmapStyle HeatmapStyle::classic() {
  HeatmapStyle s;
  s.stops = {{0.00, 0.0, 0.0, 1.0},
             {0.25, 0.0, 1.0, 1.0},
             {0.50, 0.0, 1.0, 0.0},
             {0.75, 1.0, 1.0, 0.0},
             {1.00, 1.0, 0.0, 0.0}};
  s.overlay_alpha = 0.6;
  return s;
}

void HeatmapStyle::validate() const {
  if (stops.size() < 2 || stops.front().value != 0.0 || stops.back().value != 1.0)
    throw std::invalid_argument("heatmap style: stops must span [0,1]");
  for (std::size_t i = 0; i < stops.size(); ++i) {
    if (i > 0 && !(stops[i - 1].value < stops[i].value))
      throw std::invalid_argument("heatmap style: stop values must increase");
    for (double ch : {stops[i].r, stops[i].g, stops[i].b})
      if (!(ch >= 0.0 && ch <= 1.0))
        throw std::invalid_argument("heatmap style: colors must lie in [0,1]");
  }
  if (!(overlay_alpha >= 0.0 && overlay_alpha <= 1.0))
    throw std::invalid_argument("heatmap style: alpha must lie in [0,1]");
}

std::array<double, 3> HeatmapStyle::color(double v) const {
  v = std::clamp(v, 0.0, 1.0);
  std::size_t hi = 1;
  while (hi + 1 < stops.size() && stops[hi].value < v) ++hi;
  const Stop& a = stops[hi - 1];
  const Stop& b = stops[hi];
  const double f = (v - a.value) / (b.value - a.value);
  return {a.r + f * (b.r - a.r), a.g + f * (b.g - a.g), a.b + f * (b.b - a.b)};
}

Tensor upsample_bilinear(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  if (map.rank() != 2 || map.size() == 0)
    throw std::invalid_argument("upsample: expected a nonempty 2-d map");
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (out_h < h || out_w < w)
    throw std::invalid_argument("upsample: output must not be smaller than input");

  Tensor out({out_h, out_w});
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double sy = src_coord(oy, h, out_h);
    const std::size_t y0 = std::size_t(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - double(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double sx = src_coord(ox, w, out_w);
      const std::size_t x0 = std::size_t(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - double(x0);
      const double top = map.at2(y0, x0) * (1.0 - fx) + map.at2(y0, x1) * fx;
      const double bot = map.at2(y1, x0) * (1.0 - fx) + map.at2(y1, x1) * fx;
      out.at2(oy, ox) = top * (1.0 - fy) + bot * fy;
    }
  }
  return out;
}

Tensor render_overlay(const Tensor& image, const ThresholdedMap& tmap,
                      const HeatmapStyle& style) {
  style.validate();
  if (image.rank() != 2)
    throw std::invalid_argument("render_overlay: image must be 2-d grayscale");
  if (tmap.values.rank() != 2 || tmap.values.dim(0) != image.dim(0) ||
      tmap.values.dim(1) != image.dim(1))
    throw std::invalid_argument("render_overlay: image and map sizes differ");
  check_unit_range(image, "render_overlay");

  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (double v : tmap.values.values())
    if (v > 0.0) {
      lo = any ? std::min(lo, v) : v;
      hi = any ? std::max(hi, v) : v;
      any = true;
    }

  const std::size_t h = image.dim(0), w = image.dim(1);
  Tensor out({h, w, 3});
  for (std::size_t i = 0; i < h * w; ++i) {
    const double g = image[i];
    const double v = tmap.values[i];
    if (v <= 0.0) {
      out[3 * i] = out[3 * i + 1] = out[3 * i + 2] = g;
      continue;
    }
    const double norm = hi > lo ? (v - lo) / (hi - lo) : 1.0;
    const auto rgb = style.color(norm);
    for (std::size_t ch = 0; ch < 3; ++ch)
      out[3 * i + ch] =
          (1.0 - style.overlay_alpha) * g + style.overlay_alpha * rgb[ch];
  }
  return out;
}

void write_ppm(const Tensor& rgb, const std::filesystem::path& path) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3)
    throw std::invalid_argument("write_ppm: expected an h x w x 3 tensor");
  check_unit_range(rgb, "write_ppm");
  const std::size_t h = rgb.dim(0), w = rgb.dim(1);
  std::vector<std::uint8_t> bytes(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) bytes[i] = quantize(rgb[i]);
  write_bytes(path,
              "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n",
              bytes);
}

void write_pgm(const Tensor& gray, const std::filesystem::path& path) {
  if (gray.rank() != 2)
    throw std::invalid_argument("write_pgm: expected an h x w tensor");
  check_unit_range(gray, "write_pgm");
  const std::size_t h = gray.dim(0), w = gray.dim(1);
  std::vector<std::uint8_t> bytes(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) bytes[i] = quantize(gray[i]);
  write_bytes(path,
              "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n",
              bytes);
}

Tensor concat_grid(const std::vector<Tensor>& tiles, std::size_t columns) {
  if (tiles.empty() || columns == 0)
    throw std::invalid_argument("concat_grid: nothing to lay out");
  const std::size_t th = tiles.front().dim(0), tw = tiles.front().dim(1);
  for (const auto& t : tiles)
    if (t.rank() != 3 || t.dim(0) != th || t.dim(1) != tw || t.dim(2) != 3)
      throw std::invalid_argument("concat_grid: tiles must share an h x w x 3 shape");

  const std::size_t rows = (tiles.size() + columns - 1) / columns;
  Tensor out({rows * th, columns * tw, 3});
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const std::size_t r0 = (i / columns) * th, c0 = (i % columns) * tw;
    for (std::size_t y = 0; y < th; ++y)
      for (std::size_t x = 0; x < tw; ++x)
        for (std::size_t ch = 0; ch < 3; ++ch)
          out[((r0 + y) * columns * tw + (c0 + x)) * 3 + ch] =
              tiles[i][(y * tw + x) * 3 + ch];
  }
  return out;
}

}  // namespace ecloss
