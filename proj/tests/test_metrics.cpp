#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecloss/metrics.hpp"
#include "ecloss/rng.hpp"
#include "ecloss/tensor.hpp"
#include "oracles.hpp"

using namespace ecloss;

namespace {

Tensor map_from(std::vector<double> v, std::size_t h, std::size_t w) {
  return Tensor::from_data({h, w}, std::move(v));
}

Tensor random_map(Rng& rng, std::size_t h, std::size_t w) {
  Tensor t({h, w});
  for (double& v : t.values()) v = rng.uniform(-1.0, 2.0);
  return t;
}

// Gaussian bump of the given height centered at (cy, cx).
void add_blob(Tensor& t, double cy, double cx, double sigma, double height) {
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) {
      const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
      t.at2(r, c) += height * std::exp(-d2 / (2.0 * sigma * sigma));
    }
}

// One image, `supports` channels; channel k carries the value 5 on its
// support pixels and tiny distinct values elsewhere, so the top-10% cut of
// an 8x8 map (ceil 6.4 = 7 kept) retains exactly a 7-pixel support.
FeatureBatch batch_with_supports(const std::vector<std::vector<std::size_t>>& supports) {
  FeatureBatch f;
  f.batch = 1;
  f.channels = supports.size();
  f.height = f.width = 8;
  f.values.assign(f.rows() * f.map_size(), 0.0);
  for (std::size_t c = 0; c < supports.size(); ++c) {
    auto row = f.row(c);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = 1e-6 * double(i);
    for (std::size_t px : supports[c]) row[px] = 5.0;
  }
  return f;
}

std::vector<std::uint8_t> mask_of(const std::vector<std::size_t>& pixels,
                                  std::size_t n = 64) {
  std::vector<std::uint8_t> m(n, 0);
  for (std::size_t p : pixels) m[p] = 1;
  return m;
}

std::vector<std::size_t> range_px(std::size_t lo, std::size_t count) {
  std::vector<std::size_t> v(count);
  std::iota(v.begin(), v.end(), lo);
  return v;
}

}  // namespace

TEST_CASE("top-10% threshold picks the k-th largest value") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);  // 1..100 distinct
  std::shuffle(v.begin(), v.end(), std::mt19937_64(7));
  auto t = top10_threshold(map_from(v, 10, 10));
  CHECK(t.threshold == 91.0);
  CHECK(t.retained_fraction == 0.1);
  CHECK_FALSE(t.degenerate);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    if (t.values[i] != 0.0) {
      ++kept;
      CHECK(t.values[i] == v[i]);
      CHECK(t.values[i] >= 91.0);
    } else {
      CHECK(v[i] < 91.0);
    }
  }
  CHECK(kept == 10);
}

TEST_CASE("threshold ties at t are all retained") {
  std::vector<double> v(100, 0.0);
  std::iota(v.begin(), v.end(), 1.0);
  for (std::size_t i = 0; i < 15; ++i) v[i] = 1000.0;  // 15-way tie at the max
  auto t = top10_threshold(map_from(v, 10, 10));
  CHECK(t.threshold == 1000.0);
  CHECK(t.retained_fraction == 0.15);
}

TEST_CASE("constant map is flagged degenerate and fully retained") {
  auto t = top10_threshold(map_from(std::vector<double>(36, 2.5), 6, 6));
  CHECK(t.degenerate);
  CHECK(t.retained_fraction == 1.0);
  CHECK(t.threshold == 2.5);
  for (double v : t.values.values()) CHECK(v == 2.5);
}

TEST_CASE("threshold matches a sort-based oracle on random maps") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 3 + rng.uniform_index(12);
    const std::size_t w = 3 + rng.uniform_index(12);
    Tensor m = random_map(rng, h, w);
    const auto want = oracles::top10_oracle(m.values());
    auto got = top10_threshold(m);
    CHECK(got.threshold == want.t);
    CHECK(got.retained_fraction == double(want.retained) / double(h * w));
    CHECK(got.retained_fraction >= 0.1);
    // any higher threshold would keep fewer than 10%
    std::size_t above = 0;
    for (double v : m.values()) above += v > want.t;
    CHECK(above < (h * w + 9) / 10);
  }
  CHECK_THROWS_AS(top10_threshold(Tensor({3})), std::invalid_argument);
  auto bad = map_from(std::vector<double>(9, 1.0), 3, 3);
  bad[4] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(top10_threshold(bad), std::invalid_argument);
}

TEST_CASE("iou handles the set-arithmetic cases") {
  auto tmap_of = [](const std::vector<std::size_t>& px) {
    ThresholdedMap t;
    t.values = Tensor({8, 8});
    for (std::size_t p : px) t.values[p] = 1.0;
    return t;
  };
  CHECK(iou(mask_of(range_px(0, 12)), tmap_of(range_px(0, 12))) == 1.0);
  CHECK(iou(mask_of(range_px(0, 12)), tmap_of(range_px(40, 12))) == 0.0);
  // 20 + 20 with overlap 10 -> 10/30
  const double v = iou(mask_of(range_px(0, 20)), tmap_of(range_px(10, 20)));
  CHECK(std::abs(v - 10.0 / 30.0) <= 1e-15);
  CHECK(iou(mask_of({}), tmap_of({})) == 0.0);  // empty union defined as 0
  const std::vector<std::uint8_t> short_mask(63, 0);
  CHECK_THROWS_AS(iou(short_mask, tmap_of({1})), std::invalid_argument);
}

TEST_CASE("iou is symmetric and monotone under shrinking differences") {
  Rng rng(21);
  for (int trial = 0; trial < 4000; ++trial) {
    std::vector<std::uint8_t> a(16, 0), b(16, 0);
    const std::size_t na = rng.uniform_index(7), nb = rng.uniform_index(7);
    for (std::size_t i = 0; i < na; ++i) a[rng.uniform_index(16)] = 1;
    for (std::size_t i = 0; i < nb; ++i) b[rng.uniform_index(16)] = 1;

    const double ab = iou_binary(a, b);
    CHECK(iou_binary(b, a) == ab);
    CHECK(ab == oracles::iou_sets(a, b));
    if (std::count(a.begin(), a.end(), 1) > 0) CHECK(iou_binary(a, a) == 1.0);

    // match one differing bit of b to a: IoU must not decrease
    std::vector<std::uint8_t> closer = b;
    for (std::size_t i = 0; i < 16; ++i)
      if (a[i] != b[i]) {
        closer[i] = a[i];
        break;
      }
    CHECK(iou_binary(a, closer) >= ab);
  }
}

TEST_CASE("part explainability averages the best-part IoU over channels") {
  // channel supports sized 7 (the exact top-10% count of an 8x8 map)
  const auto s0 = range_px(0, 7), s1 = range_px(32, 7);

  // activations that equal part masks exactly
  CHECK(part_explainability(batch_with_supports({s0, s1}),
                            {mask_of(s0), mask_of(s1)}, 8, 8) == 1.0);

  // activations disjoint from every mask
  CHECK(part_explainability(batch_with_supports({s0, s1}),
                            {mask_of(range_px(48, 4)), mask_of(range_px(56, 4))},
                            8, 8) == 0.0);

  // best IoUs 0.4 = 4/(7+7-4) and 0.2 = 2/(7+5-2) -> mean 0.3
  const auto m0 = mask_of(range_px(3, 7));   // overlaps s0 in 4 px
  const auto m1 = mask_of(range_px(37, 5));  // overlaps s1 in 2 px
  const double pe =
      part_explainability(batch_with_supports({s0, s1}), {m0, m1}, 8, 8);
  CHECK(std::abs(pe - 0.3) <= 1e-12);

  // an all-zero channel contributes IoU 0
  FeatureBatch with_dead = batch_with_supports({s0});
  with_dead.channels = 2;
  with_dead.values.resize(2 * 64, 0.0);
  const double pe_dead =
      part_explainability(with_dead, {mask_of(s0)}, 8, 8);
  CHECK(pe_dead == 0.5);

  CHECK_THROWS_AS(part_explainability(batch_with_supports({s0}), {}, 8, 8),
                  std::invalid_argument);
  FeatureBatch two = batch_with_supports({s0});
  two.batch = 2;
  two.values.resize(2 * 64, 0.0);
  CHECK_THROWS_AS(part_explainability(two, {mask_of(s0)}, 8, 8),
                  std::invalid_argument);
}

TEST_CASE("assignment tallies argmax parts per channel") {
  const auto s0 = range_px(0, 7), s1 = range_px(32, 7);
  const std::size_t n_images = 10;

  // stack the same single-image layout ten times, alternating channel 1's
  // support between two locations
  FeatureBatch f;
  f.batch = n_images;
  f.channels = 2;
  f.height = f.width = 8;
  f.values.assign(f.rows() * f.map_size(), 0.0);
  std::vector<PartMasks> masks(n_images);
  const auto sa = range_px(16, 7);
  for (std::size_t i = 0; i < n_images; ++i) {
    auto single = batch_with_supports({s0, i % 2 == 0 ? s1 : sa});
    std::copy(single.values.begin(), single.values.end(),
              f.values.begin() + i * 2 * 64);
    // parts: 0 matches channel-1-even, 1 matches channel-1-odd, 2 matches
    // channel 0
    masks[i] = {mask_of(s1), mask_of(sa), mask_of(s0)};
  }

  auto a = assignment(f, masks, 8, 8);
  REQUIRE(a.a.size() == 2);
  CHECK(a.n_parts == 3);
  CHECK(a.channels == std::vector<std::size_t>{0, 1});
  CHECK(a.a[0] == std::vector<double>{0.0, 0.0, 1.0});  // always part 2
  CHECK(a.a[1] == std::vector<double>{0.5, 0.5, 0.0});  // equal split
  for (const auto& row : a.a)
    CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-9);
}

TEST_CASE("assignment breaks IoU ties toward the lowest part index") {
  const auto support = range_px(24, 7);
  auto f = batch_with_supports({support});
  // two parts overlapping the support identically
  PartMasks masks{mask_of(range_px(24, 5)), mask_of(range_px(26, 5))};
  auto a = assignment(f, {masks}, 8, 8);
  REQUIRE(a.a.size() == 1);
  CHECK(a.a[0] == std::vector<double>{1.0, 0.0});
}

TEST_CASE("assignment drops channels that never activate") {
  auto f = batch_with_supports({range_px(0, 7)});
  f.channels = 2;
  f.values.resize(2 * 64, 0.0);  // channel 1 all zero
  auto a = assignment(f, {{mask_of(range_px(0, 7))}}, 8, 8);
  REQUIRE(a.a.size() == 1);
  CHECK(a.channels == std::vector<std::size_t>{0});

  CHECK_THROWS_AS(assignment(FeatureBatch{}, {}, 8, 8), std::invalid_argument);
  CHECK_THROWS_AS(assignment(f, {}, 8, 8), std::invalid_argument);
}

TEST_CASE("location consistency scores one-hot rows highest") {
  AssignmentMatrix a;
  a.n_parts = 4;
  a.a = {{0.25, 0.25, 0.25, 0.25}, {0.0, 0.0, 1.0, 0.0}};
  a.channels = {0, 1};
  auto [s, ls] = location_consistency(a);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == 0.0);
  CHECK(std::abs(s[1] - 0.21650635094610965) <= 1e-15);  // sqrt(0.75)/4
  CHECK(std::abs(ls - 0.10825317547305482) <= 1e-15);

  // random stochastic rows score strictly between the extremes
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> row(4);
    double sum = 0.0;
    for (double& v : row) sum += v = -std::log(1.0 - rng.uniform());
    for (double& v : row) v /= sum;
    AssignmentMatrix one;
    one.n_parts = 4;
    one.a = {row};
    one.channels = {0};
    const double si = location_consistency(one).first[0];
    CHECK(si >= 0.0);
    CHECK(si <= 0.21650635094610965 + 1e-12);
  }

  AssignmentMatrix bad;
  bad.n_parts = 2;
  bad.a = {{0.7, 0.7}};
  bad.channels = {0};
  CHECK_THROWS_AS(location_consistency(bad), std::invalid_argument);
  bad.a = {{1.5, -0.5}};
  CHECK_THROWS_AS(location_consistency(bad), std::invalid_argument);
  CHECK_THROWS_AS(location_consistency(AssignmentMatrix{}), std::invalid_argument);
}

TEST_CASE("literal consistency form degenerates to ~0 or NaN") {
  AssignmentMatrix a;
  a.n_parts = 3;
  a.a = {{0.1, 0.2, 0.7}, {1.0, 0.0, 0.0}};
  a.channels = {0, 1};
  auto [s, ls] = location_consistency_literal(a);
  for (double v : s) CHECK((std::isnan(v) || std::abs(v) < 1e-7));
  CHECK((std::isnan(ls) || std::abs(ls) < 1e-7));
}

TEST_CASE("peak counting on hand-built ridges") {
  // 1x7 ridge: peaks 3, 2, 4 with prominences 3, 1, 4
  auto ridge = map_from({0.0, 3.0, 1.0, 2.0, 0.0, 4.0, 0.0}, 1, 7);
  CHECK(count_peaks(ridge, 0.5) == 3);
  CHECK(count_peaks(ridge, 1.0) == 2);  // strictly-exceeds rule drops prom 1
  CHECK(count_peaks(ridge, 3.5) == 1);
  CHECK(count_peaks(ridge, 4.0) == 0);

  Tensor blob({16, 16});
  add_blob(blob, 8.0, 8.0, 2.0, 1.0);
  CHECK(count_peaks(blob, 0.1) == 1);

  Tensor two({16, 16});
  add_blob(two, 4.0, 4.0, 1.5, 1.0);
  add_blob(two, 11.0, 11.0, 1.5, 1.0);
  CHECK(count_peaks(two, 0.1) == 2);

  CHECK(count_peaks(Tensor({8, 8}), 0.1) == 0);          // flat zero
  CHECK(count_peaks(map_from(std::vector<double>(16, 3.0), 4, 4), 0.0) == 0);
  CHECK_THROWS_AS(count_peaks(ridge, -0.1), std::invalid_argument);
}

TEST_CASE("peak counting equals the widest-path oracle") {
  Rng rng(13);
  for (int trial = 0; trial < 150; ++trial) {
    Tensor m({10, 10});
    // smooth-ish random field: a few blobs plus noise, with ties likely when
    // quantized
    const std::size_t blobs = 1 + rng.uniform_index(4);
    for (std::size_t b = 0; b < blobs; ++b)
      add_blob(m, rng.uniform(0.0, 9.0), rng.uniform(0.0, 9.0),
               rng.uniform(0.8, 2.5), rng.uniform(0.2, 1.0));
    for (double& v : m.values()) v += rng.uniform(0.0, 0.05);
    if (trial % 3 == 0)  // quantize to force plateaus and ties
      for (double& v : m.values()) v = std::floor(v * 8.0) / 8.0;

    for (double pm : {0.0, 0.02, default_prominence(m), 0.3}) {
      CHECK(count_peaks(m, pm) ==
            oracles::count_peaks_oracle(m.values(), 10, 10, pm));
    }
  }
}

TEST_CASE("peak counting is invariant to shifts and scales") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor m({9, 9});
    for (double& v : m.values()) v = rng.uniform(0.0, 1.0);
    const double pm = 0.2;
    const std::size_t base = count_peaks(m, pm);

    Tensor shifted = m;
    for (double& v : shifted.values()) v += 7.25;
    CHECK(count_peaks(shifted, pm) == base);

    Tensor scaled = m;
    for (double& v : scaled.values()) v *= 4.0;
    CHECK(count_peaks(scaled, pm * 4.0) == base);
  }
}

TEST_CASE("activation robustness aggregates counts with a standard error") {
  // three maps engineered to 1, 2 and 3 peaks
  FeatureBatch f;
  f.batch = 3;
  f.channels = 1;
  f.height = f.width = 16;
  f.values.assign(3 * 256, 0.0);
  const double centers[3][3][2] = {{{8, 8}, {0, 0}, {0, 0}},
                                   {{4, 4}, {11, 11}, {0, 0}},
                                   {{3, 3}, {3, 12}, {12, 8}}};
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor m({16, 16});
    for (std::size_t b = 0; b <= i; ++b)
      add_blob(m, centers[i][b][0], centers[i][b][1], 1.2, 1.0);
    std::copy(m.values().begin(), m.values().end(), f.values.begin() + i * 256);
  }
  auto stats = activation_robustness(f, 0.1);
  CHECK(stats.mean == 2.0);
  CHECK(std::abs(stats.stderr_ - 1.0 / std::sqrt(3.0)) <= 1e-15);

  // identical single-blob maps: mean 1, stderr 0
  FeatureBatch ones;
  ones.batch = 2;
  ones.channels = 2;
  ones.height = ones.width = 16;
  ones.values.clear();
  Tensor blob({16, 16});
  add_blob(blob, 8, 8, 2.0, 1.0);
  for (int i = 0; i < 4; ++i)
    ones.values.insert(ones.values.end(), blob.values().begin(),
                       blob.values().end());
  auto flat = activation_robustness(ones, 0.1);
  CHECK(flat.mean == 1.0);
  CHECK(flat.stderr_ == 0.0);

  FeatureBatch lone;
  lone.batch = 1;
  lone.channels = 1;
  lone.height = lone.width = 4;
  lone.values.assign(16, 0.0);
  CHECK_THROWS_AS(activation_robustness(lone, 0.1), std::invalid_argument);
}

TEST_CASE("metrics report wires the pieces together") {
  const auto s0 = range_px(0, 7), s1 = range_px(32, 7);
  FeatureBatch f;
  f.batch = 2;
  f.channels = 2;
  f.height = f.width = 8;
  f.values.assign(f.rows() * f.map_size(), 0.0);
  std::vector<PartMasks> masks(2);
  for (std::size_t i = 0; i < 2; ++i) {
    auto single = batch_with_supports({s0, s1});
    std::copy(single.values.begin(), single.values.end(),
              f.values.begin() + i * 2 * 64);
    masks[i] = {mask_of(s0), mask_of(s1)};
  }

  auto report = evaluate_metrics(f, masks, 8, 8, 0.1);
  REQUIRE(report.pe_per_image.size() == 2);
  CHECK(report.pe_per_image[0] == 1.0);
  CHECK(report.pe_mean == 1.0);
  REQUIRE(report.s_per_channel.size() == 2);
  CHECK(std::abs(report.ls - std::sqrt(0.5) / 2.0) <= 1e-12);  // one-hot, K=2
  CHECK(report.peak_mean > 0.0);

  CHECK(report.degenerate_maps == 0);
  CHECK(report.total_maps == 4);

  const auto csv = report_csv(report);
  CHECK(csv.find("metric,scope,value\n") == 0);
  CHECK(csv.find("pe,mean,") != std::string::npos);
  CHECK(csv.find("ls,mean,") != std::string::npos);
  CHECK(csv.find("peaks,stderr,") != std::string::npos);
  CHECK(csv.find("degenerate,count,0") != std::string::npos);
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  // header, pe rows + mean, s rows, ls, peak mean + stderr, degenerate count
  CHECK(lines == 1 + 3 + 2 + 1 + 2 + 1);

  const auto text = report_summary(report);
  CHECK(text.find("part explainability") != std::string::npos);
  CHECK(text.find("location consistency") != std::string::npos);

  CHECK_THROWS_AS(evaluate_metrics(f, {masks[0]}, 8, 8, 0.1),
                  std::invalid_argument);
}
