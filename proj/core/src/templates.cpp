#include "ecloss/templates.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ecloss/rng.hpp"

namespace ecloss {

namespace {

std::string format_exact(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

void append_g9(std::string& out, double v) {
  char buf[24];
  const int n = std::snprintf(buf, sizeof(buf), "%.9g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

[[noreturn]] void parse_fail(std::size_t byte_offset, const std::string& what) {
  throw std::runtime_error("template parse error at byte " +
                           std::to_string(byte_offset) + ": " + what);
}

}  // namespace

void TemplateParams::validate() const {
  if (height < 1 || width < 1)
    throw std::invalid_argument("template params: grid must be at least 1x1");
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw std::invalid_argument("template params: tau must be positive");
  if (!(radius > 0.0) || !std::isfinite(radius))
    throw std::invalid_argument("template params: radius must be positive");
}

bool ActivationTemplate::same_kind(const ActivationTemplate& o) const {
  if (kind != o.kind) return false;
  switch (kind) {
    case TemplateKind::negative:
      return true;
    case TemplateKind::one_peak:
      return peak_a == o.peak_a;
    case TemplateKind::two_peak:
      return peak_a == o.peak_a && peak_b == o.peak_b;
  }
  return false;
}

ActivationTemplate make_one_peak(const TemplateParams& params, PeakCoord peak) {
  params.validate();
  if (peak.row >= params.height || peak.col >= params.width)
    throw std::invalid_argument("one-peak template: peak coordinate out of range");

  ActivationTemplate t;
  t.height = params.height;
  t.width = params.width;
  t.kind = TemplateKind::one_peak;
  t.peak_a = peak;
  t.values.resize(params.height * params.width);
  for (std::size_t u = 0; u < params.height; ++u) {
    for (std::size_t v = 0; v < params.width; ++v) {
      const double du = static_cast<double>(u) - static_cast<double>(peak.row);
      const double dv = static_cast<double>(v) - static_cast<double>(peak.col);
      const double dist = std::sqrt(du * du + dv * dv);
      t.values[u * params.width + v] =
          params.tau * std::max(1.0 - dist / params.radius, -1.0);
    }
  }
  return t;
}

ActivationTemplate make_negative(const TemplateParams& params) {
  params.validate();
  ActivationTemplate t;
  t.height = params.height;
  t.width = params.width;
  t.kind = TemplateKind::negative;
  t.values.assign(params.height * params.width, -params.tau);
  return t;
}

ActivationTemplate combine_two_peak(const ActivationTemplate& a,
                                    const ActivationTemplate& b) {
  if (a.kind != TemplateKind::one_peak || b.kind != TemplateKind::one_peak)
    throw std::invalid_argument("two-peak template: operands must be one-peak");
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("two-peak template: grid mismatch");
  if (a.peak_a == b.peak_a)
    throw std::invalid_argument("two-peak template: peaks must be distinct");

  ActivationTemplate t;
  t.height = a.height;
  t.width = a.width;
  t.kind = TemplateKind::two_peak;
  t.peak_a = std::min(a.peak_a, b.peak_a);
  t.peak_b = std::max(a.peak_a, b.peak_a);
  t.values.resize(a.values.size());
  for (std::size_t i = 0; i < t.values.size(); ++i)
    t.values[i] = std::max(a.values[i], b.values[i]);
  return t;
}

TemplateSet build_full_set(const TemplateParams& params) {
  params.validate();
  const std::size_t cells = params.height * params.width;

  TemplateSet set;
  set.params = params;
  set.templates.reserve(cells + cells * (cells - 1) / 2 + 1);

  std::vector<ActivationTemplate> one_peaks;
  one_peaks.reserve(cells);
  for (std::size_t r = 0; r < params.height; ++r)
    for (std::size_t c = 0; c < params.width; ++c)
      one_peaks.push_back(make_one_peak(params, {r, c}));

  for (const auto& t : one_peaks) set.templates.push_back(t);
  for (std::size_t i = 0; i < cells; ++i)
    for (std::size_t j = i + 1; j < cells; ++j)
      set.templates.push_back(combine_two_peak(one_peaks[i], one_peaks[j]));
  set.templates.push_back(make_negative(params));

  set.prior = 1.0 / static_cast<double>(set.templates.size());
  return set;
}

namespace {

// Picks `take` indices from [0, n) by uniform stride; the seed rotates the
// phase inside one stride so different seeds spread differently while
// staying evenly spaced.
std::vector<std::size_t> stride_pick(std::size_t n, std::size_t take,
                                     std::uint64_t seed) {
  std::vector<std::size_t> idx;
  if (take == 0) return idx;
  const std::size_t stride = n / take;
  const std::size_t offset =
      (take == n || stride <= 1) ? 0 : static_cast<std::size_t>(mix64(seed) % stride);
  idx.reserve(take);
  for (std::size_t k = 0; k < take; ++k) idx.push_back(offset + k * stride);
  return idx;
}

}  // namespace

TemplateSet subsample_even(const TemplateSet& full, std::size_t target_count,
                           std::uint64_t seed) {
  if (target_count < 2)
    throw std::invalid_argument("subsample: target_count must be at least 2");
  if (target_count > full.size())
    throw std::invalid_argument("subsample: target_count exceeds set size");

  std::vector<const ActivationTemplate*> ones, twos;
  const ActivationTemplate* negative = nullptr;
  for (const auto& t : full.templates) {
    switch (t.kind) {
      case TemplateKind::one_peak: ones.push_back(&t); break;
      case TemplateKind::two_peak: twos.push_back(&t); break;
      case TemplateKind::negative: negative = &t; break;
    }
  }
  if (negative == nullptr)
    throw std::invalid_argument("subsample: set has no negative template");

  TemplateSet out;
  out.params = full.params;
  out.templates.reserve(target_count);

  const std::size_t budget = target_count - 1;  // negative always kept
  if (budget >= ones.size()) {
    for (const auto* t : ones) out.templates.push_back(*t);
    for (std::size_t i : stride_pick(twos.size(), budget - ones.size(), seed))
      out.templates.push_back(*twos[i]);
  } else {
    for (std::size_t i : stride_pick(ones.size(), budget, seed))
      out.templates.push_back(*ones[i]);
  }
  out.templates.push_back(*negative);

  out.prior = 1.0 / static_cast<double>(out.templates.size());
  return out;
}

void serialize(const TemplateSet& set, std::ostream& out) {
  std::string line;
  line.reserve(64 + set.params.height * set.params.width * 16);

  line = "ECT1 ";
  line += std::to_string(set.params.height);
  line += ' ';
  line += std::to_string(set.params.width);
  line += ' ';
  line += std::to_string(set.templates.size());
  line += ' ';
  line += format_exact(set.params.tau);
  line += ' ';
  line += format_exact(set.params.radius);
  line += '\n';
  out << line;

  for (const auto& t : set.templates) {
    line.clear();
    switch (t.kind) {
      case TemplateKind::negative:
        line = "neg";
        break;
      case TemplateKind::one_peak:
        line = "one " + std::to_string(t.peak_a.row) + ' ' +
               std::to_string(t.peak_a.col);
        break;
      case TemplateKind::two_peak:
        line = "two " + std::to_string(t.peak_a.row) + ' ' +
               std::to_string(t.peak_a.col) + ' ' +
               std::to_string(t.peak_b.row) + ' ' +
               std::to_string(t.peak_b.col);
        break;
    }
    for (double v : t.values) {
      line += ' ';
      append_g9(line, v);
    }
    line += '\n';
    out << line;
  }
}

namespace {

struct LineReader {
  std::istream& in;
  std::size_t offset = 0;

  bool next(std::string& line) {
    if (!std::getline(in, line)) return false;
    offset += line.size() + 1;
    return true;
  }
};

}  // namespace

TemplateSet deserialize(std::istream& in) {
  LineReader reader{in};
  std::string line;

  if (!reader.next(line)) parse_fail(0, "empty stream");
  std::istringstream header(line);
  std::string magic;
  std::size_t h = 0, w = 0, count = 0;
  double tau = 0.0, radius = 0.0;
  if (!(header >> magic >> h >> w >> count >> tau >> radius) || magic != "ECT1")
    parse_fail(0, "malformed header (want 'ECT1 <h> <w> <count> <tau> <r>')");

  TemplateParams params{h, w, tau, radius};
  try {
    params.validate();
  } catch (const std::invalid_argument& e) {
    parse_fail(0, e.what());
  }

  TemplateSet set;
  set.params = params;
  set.templates.reserve(count);
  const std::size_t cells = h * w;
  std::size_t negatives = 0;

  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t line_start = reader.offset;
    if (!reader.next(line))
      parse_fail(line_start, "truncated payload: header declares " +
                                 std::to_string(count) + " templates, got " +
                                 std::to_string(i));
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) parse_fail(line_start, "missing kind tag");

    ActivationTemplate t;
    if (tag == "neg") {
      t = make_negative(params);
      ++negatives;
    } else if (tag == "one") {
      PeakCoord p;
      if (!(ls >> p.row >> p.col)) parse_fail(line_start, "malformed one-peak coords");
      if (p.row >= h || p.col >= w) parse_fail(line_start, "peak coordinate out of range");
      t = make_one_peak(params, p);
    } else if (tag == "two") {
      PeakCoord a, b;
      if (!(ls >> a.row >> a.col >> b.row >> b.col))
        parse_fail(line_start, "malformed two-peak coords");
      if (a.row >= h || a.col >= w || b.row >= h || b.col >= w)
        parse_fail(line_start, "peak coordinate out of range");
      if (a == b) parse_fail(line_start, "degenerate two-peak (equal peaks)");
      t = combine_two_peak(make_one_peak(params, a), make_one_peak(params, b));
    } else {
      parse_fail(line_start, "unknown kind tag '" + tag + "'");
    }

    for (std::size_t k = 0; k < cells; ++k) {
      double v = 0.0;
      if (!(ls >> v))
        parse_fail(line_start, "dimension mismatch: expected " +
                                   std::to_string(cells) + " values, got " +
                                   std::to_string(k));
      // stored at 9 significant digits; anything further off is corruption
      if (std::abs(v - t.values[k]) > 1e-7 * params.tau)
        parse_fail(line_start, "value " + std::to_string(k) +
                                   " disagrees with template kind");
    }
    double extra = 0.0;
    if (ls >> extra) parse_fail(line_start, "dimension mismatch: trailing values");

    for (const auto& prev : set.templates)
      if (prev.same_kind(t)) parse_fail(line_start, "duplicate template");
    set.templates.push_back(std::move(t));
  }

  if (negatives != 1)
    parse_fail(reader.offset, "set must contain exactly one negative template");

  set.prior = 1.0 / static_cast<double>(set.templates.size());
  return set;
}

void save_template_set(const TemplateSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  serialize(set, out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TemplateSet load_template_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return deserialize(in);
}

}  // namespace ecloss
