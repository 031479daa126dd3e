#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "dtoll/pwl.hpp"

using namespace dtoll::pwl;

namespace {

PwlFunction two_piece() { return PwlFunction({{0.0, 1.0, 0.5}, {2.0, 3.0, -3.5}}); }

// Random valid function: increasing slopes are not required, only positive ones.
PwlFunction random_pwl(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> slope(0.1, 5.0);
  std::uniform_real_distribution<double> gap(0.05, 3.0);
  std::uniform_real_distribution<double> value(0.0, 4.0);
  std::uniform_int_distribution<int> count(1, 5);
  const int n = count(rng);
  std::vector<Segment> segs;
  double x = 0.0;
  double y = value(rng);
  for (int k = 0; k < n; ++k) {
    const double s = slope(rng);
    segs.push_back({x, s, y - s * x});
    const double nx = x + gap(rng);
    y = y + s * (nx - x);
    x = nx;
  }
  return PwlFunction(std::move(segs));
}

}  // namespace

TEST_CASE("eval on a single line") {
  const auto f = PwlFunction::line(1.0, 0.5);
  CHECK(f(3.0) == doctest::Approx(3.5));
}

TEST_CASE("eval is continuous at a breakpoint") {
  const auto f = two_piece();
  CHECK(f(2.0) == doctest::Approx(2.5));
  CHECK(f(std::nextafter(2.0, 0.0)) == doctest::Approx(2.5));
  CHECK(f.segment_index(2.0) == 1);
  CHECK(f.segment_index(1.999) == 0);
}

TEST_CASE("eval rejects negative and non-finite flow") {
  const auto f = two_piece();
  CHECK_THROWS_AS(f(-1e-9), PwlError);
  CHECK_THROWS_AS(f(std::numeric_limits<double>::quiet_NaN()), PwlError);
  CHECK_THROWS_AS(f(std::numeric_limits<double>::infinity()), PwlError);
}

TEST_CASE("construction enforces the invariants") {
  CHECK_THROWS_AS(PwlFunction({}), PwlError);
  CHECK_THROWS_AS(PwlFunction({{0.5, 1.0, 0.0}}), PwlError);
  CHECK_THROWS_AS(PwlFunction({{0.0, 0.0, 1.0}}), PwlError);
  CHECK_THROWS_AS(PwlFunction({{0.0, 1.0, 0.0}, {1.0, 2.0, 0.0}}), PwlError);  // jump at 1
  CHECK_THROWS_AS(PwlFunction({{0.0, 1.0, 0.0}, {0.0, 2.0, 0.0}}), PwlError);
  CHECK_NOTHROW(two_piece());
}

TEST_CASE("invert") {
  CHECK(PwlFunction::line(1.0, 0.5).invert(3.5) == doctest::Approx(3.0));
  CHECK(two_piece().invert(5.5) == doctest::Approx(3.0));
  CHECK(two_piece().invert(2.5) == doctest::Approx(2.0));
  CHECK(two_piece().invert(0.5) == 0.0);
  CHECK_THROWS_AS(two_piece().invert(0.4), PwlError);
  CHECK_THROWS_AS(two_piece().invert(std::numeric_limits<double>::infinity()), PwlError);
}

TEST_CASE("invert round-trips eval on random inputs") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> xs(0.0, 20.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto f = random_pwl(rng);
    const double x = xs(rng);
    CHECK(std::abs(f.invert(f(x)) - x) <= 1e-10 * std::max(1.0, x));
  }
}

TEST_CASE("add of two lines") {
  const auto h = add(PwlFunction::line(1.0, 0.5), PwlFunction::line(2.0, 1.0));
  REQUIRE(h.size() == 1);
  CHECK(h[0].slope == doctest::Approx(3.0));
  CHECK(h[0].intercept == doctest::Approx(1.5));
}

TEST_CASE("add merges breakpoints and matches a grid oracle") {
  const PwlFunction f({{0.0, 1.0, 0.0}, {2.0, 2.0, -2.0}});
  const PwlFunction g({{0.0, 0.5, 1.0}, {3.0, 4.0, -9.5}});
  const auto h = f + g;
  CHECK(h.breakpoints() == std::vector<double>{0.0, 2.0, 3.0});
  for (int i = 0; i <= 100; ++i) {
    const double x = 0.06 * i;
    CHECK(h(x) == doctest::Approx(f(x) + g(x)).epsilon(1e-12));
  }
  // Shared breakpoints collapse to one.
  CHECK(add(f, f).breakpoints() == std::vector<double>{0.0, 2.0});
}

TEST_CASE("add is commutative and associative") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = random_pwl(rng);
    const auto g = random_pwl(rng);
    const auto k = random_pwl(rng);
    CHECK(add(f, g).breakpoints() == add(g, f).breakpoints());
    const auto left = add(add(f, g), k);
    const auto right = add(f, add(g, k));
    CHECK(left.breakpoints() == right.breakpoints());
    for (double x : {0.0, 0.7, 2.3, 5.1, 11.0}) CHECK(left(x) == doctest::Approx(right(x)).epsilon(1e-12));
  }
}

TEST_CASE("scale_argument and shift_value") {
  const auto f = two_piece();
  const auto g = scale_argument(f, 0.5);
  for (double x : {0.0, 1.0, 4.0, 7.5}) CHECK(g(x) == doctest::Approx(f(0.5 * x)));
  CHECK(shift_value(f, 2.0)(3.0) == doctest::Approx(f(3.0) + 2.0));
}

TEST_CASE("tangent slope from below the curve") {
  // Touch point t solves t^4 + 1 = 4 t^4, i.e. t^4 = 1/3; checked here by
  // bisection independent of the library's root finder.
  double lo = 0.0, hi = 2.0;
  for (int i = 0; i < 200; ++i) {
    const double m = 0.5 * (lo + hi);
    (m * m * m * m + 1.0 - 4.0 * m * m * m * m > 0.0 ? lo : hi) = m;
  }
  const double oracle = 4.0 * lo * lo * lo;
  CHECK(oracle == doctest::Approx(1.7547653506033225).epsilon(1e-12));
  const BprFunction bpr{1.0, 4.0, 0.5};
  CHECK(tangent_slope_from(bpr, 0.0, -0.5, 1e6) == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("approximate_bpr on the reference curve") {
  const BprFunction bpr{1.0, 4.0, 0.5};
  const auto f = approximate_bpr(bpr, {1.0, 4});
  REQUIRE(f.size() == 4);
  CHECK(f[0].x_start == 0.0);
  CHECK(f[0].intercept == doctest::Approx(0.5));
  CHECK(f[0].slope == doctest::Approx(4.0 * std::pow(3.0, -0.75)).epsilon(1e-10));
  for (std::size_t k = 1; k < f.size(); ++k) CHECK(f[k].slope > f[k - 1].slope);

  // Error band on every bounded segment, 1000 samples each.
  for (std::size_t k = 0; k + 1 < f.size(); ++k) {
    const double lo = f[k].x_start;
    const double hi = f[k + 1].x_start;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double x = lo + (hi - lo) * i / 1000.0;
      worst = std::max(worst, std::abs(f(x) - bpr(x)));
    }
    CHECK(worst <= 2.0 + 1e-12);
  }
}

TEST_CASE("approximate_bpr band holds across parameters") {
  for (double c : {0.5, 1.0, 2.0}) {
    for (double a : {2.0, 3.0, 4.0}) {
      for (int eta : {2, 3, 5, 6}) {
        const BprFunction bpr{c, a, 1.0};
        const auto f = approximate_bpr(bpr, {0.5, eta});
        REQUIRE(static_cast<int>(f.size()) == eta);
        for (std::size_t k = 0; k + 1 < f.size(); ++k) {
          for (int i = 0; i <= 1000; ++i) {
            const double x = f[k].x_start + (f[k + 1].x_start - f[k].x_start) * i / 1000.0;
            CHECK(std::abs(f(x) - bpr(x)) <= 1.0 + 1e-9);
          }
        }
      }
    }
  }
}

TEST_CASE("approximate_bpr with a single segment is the first tangent ray") {
  const auto f = approximate_bpr({1.0, 4.0, 0.5}, {1.0, 1});
  REQUIRE(f.size() == 1);
  CHECK(f[0].intercept == doctest::Approx(0.5));
  CHECK(f[0].slope == doctest::Approx(4.0 * std::pow(3.0, -0.75)).epsilon(1e-10));
}

TEST_CASE("approximate_bpr failures") {
  // A linear curve has no tangent from a point below it.
  CHECK_THROWS_AS(approximate_bpr({1.0, 1.0, 0.5}, {1.0, 2, 1e3}), PwlError);
  CHECK_THROWS_AS(approximate_bpr({1.0, 4.0, 0.5}, {0.0, 2}), PwlError);
  CHECK_THROWS_AS(approximate_bpr({1.0, 4.0, 0.5}, {1.0, 0}), PwlError);
  CHECK_THROWS_AS(approximate_bpr({-1.0, 4.0, 0.5}, {1.0, 2}), PwlError);
  // Bands wide enough to leave the search window.
  CHECK_THROWS_AS(approximate_bpr({1.0, 1.05, 0.5}, {1.0, 3, 10.0}), PwlError);
}

TEST_CASE("csv round trip") {
  const auto f = approximate_bpr({2.0, 4.0, 1.0}, {1.0, 4});
  const auto g = PwlFunction::from_csv(f.to_csv());
  REQUIRE(g.size() == f.size());
  for (double x : {0.0, 0.3, 1.1, 2.5, 9.0}) CHECK(g(x) == doctest::Approx(f(x)).epsilon(1e-12));
}
