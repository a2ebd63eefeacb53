#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace ecloss {

/// Grid geometry and peak shape shared by every template in a set.
/// tau is the peak magnitude, radius the linear-decay radius in grid cells.
struct TemplateParams {
  std::size_t height = 14;
  std::size_t width = 14;
  double tau = 0.001;
  double radius = 4.0;

  void validate() const;  // throws std::invalid_argument
  bool operator==(const TemplateParams&) const = default;
};

struct PeakCoord {
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const PeakCoord&) const = default;
};

enum class TemplateKind { negative, one_peak, two_peak };

/// One activation template: an h*w grid with zero, one or two peaks of
/// value tau, decaying linearly with Euclidean distance down to -tau.
struct ActivationTemplate {
  std::size_t height = 0;
  std::size_t width = 0;
  TemplateKind kind = TemplateKind::negative;
  PeakCoord peak_a{};  // one_peak and two_peak
  PeakCoord peak_b{};  // two_peak only; canonically peak_a < peak_b
  std::vector<double> values;  // row-major, height*width

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  bool same_kind(const ActivationTemplate& o) const;
};

/// Ordered template collection with the uniform prior P(T) = 1/|set|.
struct TemplateSet {
  TemplateParams params;
  std::vector<ActivationTemplate> templates;
  double prior = 0.0;

  std::size_t size() const { return templates.size(); }
};

// Coordinates are zero-based: 0 <= row < height, 0 <= col < width.
ActivationTemplate make_one_peak(const TemplateParams& params, PeakCoord peak);
ActivationTemplate make_negative(const TemplateParams& params);

// Elementwise max of two one-peak templates sharing the same grid.
// Peaks must be distinct; the result stores them in canonical order.
ActivationTemplate combine_two_peak(const ActivationTemplate& a,
                                    const ActivationTemplate& b);

// All one-peak templates (row-major peak order), all unordered two-peak
// combinations (lexicographic by flat peak indices), and one negative
// template. Count = hw + C(hw,2) + 1.
TemplateSet build_full_set(const TemplateParams& params);

// Deterministic "even" subsample: always keeps the negative template and
// all one-peak templates when they fit, filling up with two-peak templates
// picked by uniform stride over their canonical order. When target_count
// cannot hold every one-peak template, one-peak templates are stride
// sampled the same way instead of erroring. The seed only rotates the
// stride phase; identical inputs always give an identical set.
TemplateSet subsample_even(const TemplateSet& full, std::size_t target_count,
                           std::uint64_t seed);

// Text format, one template per line after the header
//   ECT1 <h> <w> <count> <tau> <r>
// with values at 9 significant digits. Deserialization rebuilds templates
// from their kind and the header parameters, so a round trip reproduces
// values bit-exactly; the stored values are cross-checked against the
// rebuilt grid to catch corruption.
void serialize(const TemplateSet& set, std::ostream& out);
TemplateSet deserialize(std::istream& in);

void save_template_set(const TemplateSet& set, const std::filesystem::path& path);
TemplateSet load_template_set(const std::filesystem::path& path);

}  // namespace ecloss
