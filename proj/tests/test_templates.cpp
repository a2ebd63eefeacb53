#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ecloss/templates.hpp"

using namespace ecloss;

namespace {

const TemplateParams kSmall{4, 4, 0.001, 4.0};

bool same_set(const TemplateSet& a, const TemplateSet& b) {
  if (a.params.height != b.params.height || a.params.width != b.params.width)
    return false;
  if (a.params.tau != b.params.tau || a.params.radius != b.params.radius) return false;
  if (a.prior != b.prior || a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.templates[i];
    const auto& y = b.templates[i];
    if (!x.same_kind(y)) return false;
    for (std::size_t j = 0; j < x.values.size(); ++j)
      if (x.values[j] != y.values[j]) return false;  // bit-exact
  }
  return true;
}

std::string to_text(const TemplateSet& set) {
  std::ostringstream out;
  serialize(set, out);
  return out.str();
}

}  // namespace

TEST_CASE("one-peak values follow the linear decay") {
  TemplateParams p{1, 9, 0.001, 4.0};
  auto t = make_one_peak(p, {0, 0});
  CHECK(t.at(0, 0) == 0.001);                      // distance 0
  CHECK(t.at(0, 2) == doctest::Approx(0.0005));    // 1 - 2/4 = 0.5
  CHECK(t.at(0, 8) == -0.001);                     // 1 - 8/4 clamped to -1
  CHECK(t.kind == TemplateKind::one_peak);
}

TEST_CASE("one-peak is bounded, peaks uniquely, and decays monotonically") {
  TemplateParams p{7, 7, 0.25, 3.0};
  auto t = make_one_peak(p, {2, 4});
  for (double v : t.values) {
    CHECK(v >= -p.tau);
    CHECK(v <= p.tau);
  }
  for (std::size_t r = 0; r < p.height; ++r)
    for (std::size_t c = 0; c < p.width; ++c) {
      const double d1 = std::hypot(double(r) - 2.0, double(c) - 4.0);
      const double v1 = t.at(r, c);
      if (r == 2 && c == 4) continue;
      CHECK(v1 < p.tau);  // unique maximum
      for (std::size_t r2 = 0; r2 < p.height; ++r2)
        for (std::size_t c2 = 0; c2 < p.width; ++c2) {
          const double d2 = std::hypot(double(r2) - 2.0, double(c2) - 4.0);
          const double v2 = t.at(r2, c2);
          if (d1 < d2) {
            if (v2 > -p.tau) CHECK(v1 > v2);
            else CHECK(v1 >= v2);
          } else if (d1 == d2) {
            CHECK(v1 == v2);
          }
        }
    }
}

TEST_CASE("one-peak rejects out-of-range coordinates") {
  CHECK_THROWS_AS(make_one_peak(kSmall, {4, 0}), std::invalid_argument);
  CHECK_THROWS_AS(make_one_peak(kSmall, {0, 4}), std::invalid_argument);
}

TEST_CASE("negative template is the constant -tau floor") {
  TemplateParams p{3, 3, 0.001, 4.0};
  auto neg = make_negative(p);
  double sum = 0.0;
  for (double v : neg.values) {
    CHECK(v == -0.001);
    sum += v;
  }
  CHECK(sum == doctest::Approx(-0.009));
  auto one = make_one_peak(p, {1, 1});
  for (std::size_t i = 0; i < one.values.size(); ++i)
    CHECK(std::max(neg.values[i], one.values[i]) == one.values[i]);
}

TEST_CASE("two-peak combination is the elementwise max") {
  TemplateParams p{1, 5, 0.001, 4.0};
  auto a = make_one_peak(p, {0, 0});
  auto b = make_one_peak(p, {0, 4});
  auto ab = combine_two_peak(a, b);
  auto ba = combine_two_peak(b, a);
  CHECK(ab.at(0, 0) == p.tau);
  CHECK(ab.at(0, 4) == p.tau);
  CHECK(ab.at(0, 2) == doctest::Approx(0.5 * p.tau));  // both operands give 0.5 tau
  for (std::size_t i = 0; i < ab.values.size(); ++i) {
    CHECK(ab.values[i] == ba.values[i]);  // commutative
    CHECK(ab.values[i] == std::max(a.values[i], b.values[i]));
  }
  CHECK(ab.kind == TemplateKind::two_peak);
}

TEST_CASE("two-peak rejects degenerate input") {
  auto a = make_one_peak(kSmall, {1, 1});
  CHECK_THROWS_AS(combine_two_peak(a, a), std::invalid_argument);
  auto neg = make_negative(kSmall);
  CHECK_THROWS_AS(combine_two_peak(a, neg), std::invalid_argument);
  TemplateParams other{5, 5, 0.001, 4.0};
  CHECK_THROWS_AS(combine_two_peak(a, make_one_peak(other, {0, 0})),
                  std::invalid_argument);
}

TEST_CASE("full set counts: hw + C(hw,2) + 1") {
  CHECK(build_full_set({2, 2, 0.001, 4.0}).size() == 11);
  CHECK(build_full_set({1, 1, 0.001, 4.0}).size() == 2);
  CHECK(build_full_set({14, 14, 0.001, 4.0}).size() == 19307);

  for (std::size_t h = 1; h <= 6; ++h)
    for (std::size_t w = 1; w <= 6; ++w) {
      const std::size_t cells = h * w;
      std::size_t pairs = 0;  // brute pair enumeration
      for (std::size_t i = 0; i < cells; ++i)
        for (std::size_t j = i + 1; j < cells; ++j) ++pairs;
      CHECK(build_full_set({h, w, 0.001, 4.0}).size() == cells + pairs + 1);
    }
}

TEST_CASE("full set structure: one negative, unique kinds, exact prior") {
  auto set = build_full_set({3, 3, 0.001, 4.0});
  std::size_t negatives = 0;
  for (const auto& t : set.templates)
    if (t.kind == TemplateKind::negative) ++negatives;
  CHECK(negatives == 1);
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t j = i + 1; j < set.size(); ++j)
      CHECK(!set.templates[i].same_kind(set.templates[j]));
  CHECK(std::abs(set.prior * double(set.size()) - 1.0) <= 1e-12);
}

TEST_CASE("subsample keeps negative + all one-peaks, strides two-peaks") {
  auto full = build_full_set({14, 14, 0.001, 4.0});
  auto sub = subsample_even(full, 400, 7);
  CHECK(sub.size() == 400);
  std::size_t ones = 0, twos = 0, negs = 0;
  for (const auto& t : sub.templates) {
    if (t.kind == TemplateKind::one_peak) ++ones;
    if (t.kind == TemplateKind::two_peak) ++twos;
    if (t.kind == TemplateKind::negative) ++negs;
  }
  CHECK(ones == 196);
  CHECK(twos == 203);
  CHECK(negs == 1);
  CHECK(sub.prior == 0.0025);  // 1/400 is the same double as the literal

  auto again = subsample_even(full, 400, 7);
  CHECK(same_set(sub, again));  // deterministic

  for (std::size_t i = 0; i + 1 < sub.size(); ++i)
    for (std::size_t j = i + 1; j < sub.size(); ++j)
      CHECK(!sub.templates[i].same_kind(sub.templates[j]));
}

TEST_CASE("subsample edge cases") {
  auto full = build_full_set({2, 2, 0.001, 4.0});
  auto same = subsample_even(full, 11, 123);
  CHECK(same_set(same, full));  // target == size is a no-op

  auto tiny = subsample_even(full, 3, 5);  // below one-peak count: strides one-peaks
  CHECK(tiny.size() == 3);
  std::size_t negs = 0;
  for (const auto& t : tiny.templates) {
    CHECK(t.kind != TemplateKind::two_peak);
    if (t.kind == TemplateKind::negative) ++negs;
  }
  CHECK(negs == 1);

  CHECK_THROWS_AS(subsample_even(full, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(subsample_even(full, 12, 0), std::invalid_argument);
}

TEST_CASE("serialize / deserialize round-trips bit-exactly") {
  auto set = subsample_even(build_full_set({5, 4, 0.003, 2.5}), 9, 42);
  std::stringstream buf;
  serialize(set, buf);
  auto back = deserialize(buf);
  CHECK(same_set(set, back));
}

TEST_CASE("deserialize rejects malformed input with byte offsets") {
  std::istringstream empty("");
  CHECK_THROWS_WITH_AS(deserialize(empty), doctest::Contains("byte 0"),
                       std::runtime_error);

  std::istringstream junk("BOGUS 2 2 1 0.001 4\nneg\n");
  CHECK_THROWS_AS(deserialize(junk), std::runtime_error);

  auto full = build_full_set({2, 2, 0.001, 4.0});
  std::string text = to_text(full);
  // drop the last payload line: header still declares 11
  text.erase(text.rfind("neg"));
  std::istringstream truncated(text);
  CHECK_THROWS_WITH_AS(deserialize(truncated), doctest::Contains("truncated"),
                       std::runtime_error);

  // header/payload dimension mismatch: 2x2 values under a 3x3 header
  std::string mismatch = to_text(full);
  mismatch.replace(mismatch.find("ECT1 2 2"), 8, "ECT1 3 3");
  std::istringstream bad(mismatch);
  CHECK_THROWS_AS(deserialize(bad), std::runtime_error);
}

TEST_CASE("file save / load round-trip") {
  auto set = build_full_set({3, 3, 0.002, 3.0});
  const auto path = std::filesystem::temp_directory_path() / "ecloss_rt.ect";
  save_template_set(set, path);
  auto back = load_template_set(path);
  CHECK(same_set(set, back));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_template_set(path), std::runtime_error);
}

TEST_CASE("params validation") {
  CHECK_THROWS_AS(TemplateParams({0, 4, 0.001, 4.0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(TemplateParams({4, 4, 0.0, 4.0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(TemplateParams({4, 4, 0.001, -1.0}).validate(), std::invalid_argument);
}
