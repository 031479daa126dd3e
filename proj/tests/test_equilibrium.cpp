#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "dtoll/equilibrium.hpp"
#include "oracles.hpp"

using namespace dtoll::equilibrium;
using dtoll::pwl::PwlFunction;
using dtoll::pwl::Segment;
using oracle::beckmann_tstt;
using oracle::random_convex;

namespace {

std::vector<PwlFunction> worked_routes() { return {PwlFunction::line(1.0, 0.5), PwlFunction::line(2.0, 1.0)}; }

}  // namespace

TEST_CASE("worked two-route equilibrium") {
  const auto routes = worked_routes();
  const std::vector<double> u{2.0, 2.0};
  const auto sol = solve_equilibrium(routes, 3.0, u);
  CHECK(sol.w == doctest::Approx(14.0 / 3.0).epsilon(1e-12));
  CHECK(std::abs(sol.flows[0] - 13.0 / 6.0) <= 1e-12);
  CHECK(std::abs(sol.flows[1] - 5.0 / 6.0) <= 1e-12);
  CHECK(std::abs(sol.tstt - 28.0 / 3.0) <= 1e-12);
  CHECK(sol.unused_count() == 0);
}

TEST_CASE("zero demand leaves every route unused") {
  const auto routes = worked_routes();
  const std::vector<double> u{2.0, 2.0};
  const auto sol = solve_equilibrium(routes, 0.0, u);
  CHECK(sol.unused_count() == 2);
  CHECK(sol.flows == std::vector<double>{0.0, 0.0});
  CHECK(std::abs(sol.tstt - 5.5) <= 1e-12);
}

TEST_CASE("low demand uses only the cheaper route") {
  const auto routes = worked_routes();
  const std::vector<double> u{2.0, 2.0};
  const auto sol = solve_equilibrium(routes, 0.2, u);
  CHECK(sol.used == std::vector<bool>{true, false});
  CHECK(sol.w == doctest::Approx(2.7));
  CHECK(routes[1](0.0) + u[1] > sol.w);
  CHECK(sol.tstt == doctest::Approx(5.7));
  CHECK(tstt(routes, 0.2, u) == doctest::Approx(5.7));
}

TEST_CASE("tstt is continuous at route activation") {
  const auto routes = worked_routes();
  const std::vector<double> u{2.0, 2.0};
  // Route 2 activates when w reaches 3, i.e. x = 0.5.
  const double left = tstt(routes, std::nextafter(0.5, 0.0), u);
  const double right = tstt(routes, std::nextafter(0.5, 1.0), u);
  CHECK(std::abs(left - right) <= 1e-9);
  CHECK(tstt(routes, 0.5, u) == doctest::Approx(6.0));
}

TEST_CASE("input validation") {
  const auto routes = worked_routes();
  const std::vector<double> u{2.0, 2.0};
  CHECK_THROWS_AS(solve_equilibrium(routes, -1.0, u), EquilibriumError);
  CHECK_THROWS_AS(solve_equilibrium(routes, 1.0, std::vector<double>{2.0}), EquilibriumError);
  CHECK_THROWS_AS(solve_equilibrium(std::vector<PwlFunction>{}, 1.0, std::vector<double>{}), EquilibriumError);
}

TEST_CASE("complementarity and conservation on random instances") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> count(1, 4);
  std::uniform_real_distribution<double> toll(0.5, 4.0);
  std::uniform_real_distribution<double> demand(0.0, 12.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int R = count(rng);
    std::vector<PwlFunction> routes;
    std::vector<double> u;
    for (int r = 0; r < R; ++r) {
      routes.push_back(random_convex(rng));
      u.push_back(toll(rng));
    }
    const double x = demand(rng);
    const auto sol = solve_equilibrium(routes, x, u);
    double total = 0.0;
    double expected_tstt = 0.0;
    for (int r = 0; r < R; ++r) {
      const double cost = routes[r](sol.flows[r]) + u[r];
      CHECK(sol.flows[r] >= 0.0);
      CHECK(std::abs(sol.flows[r] * (cost - sol.w)) <= 1e-9 * std::max(1.0, sol.w));
      CHECK(cost >= sol.w - 1e-9);
      total += sol.flows[r];
      expected_tstt += sol.used[r] ? sol.w : routes[r](0.0) + u[r];
    }
    CHECK(std::abs(total - x) <= 1e-12 * std::max(1.0, x));
    CHECK(sol.tstt == doctest::Approx(expected_tstt).epsilon(1e-12));
  }
}

TEST_CASE("tstt is monotone in demand and tolls") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> toll(0.5, 4.0);
  std::uniform_real_distribution<double> demand(0.0, 8.0);
  std::uniform_real_distribution<double> bump(1e-3, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PwlFunction> routes{random_convex(rng), random_convex(rng), random_convex(rng)};
    std::vector<double> u{toll(rng), toll(rng), toll(rng)};
    const double x = demand(rng);
    const double base = tstt(routes, x, u);
    CHECK(tstt(routes, x + bump(rng), u) > base);
    for (std::size_t r = 0; r < 3; ++r) {
      auto v = u;
      v[r] += bump(rng);
      CHECK(tstt(routes, x, v) >= base - 1e-12);
    }
  }
}

TEST_CASE("tstt is continuous across its breakpoints") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> toll(0.5, 4.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PwlFunction> routes{random_convex(rng), random_convex(rng)};
    std::vector<double> u{toll(rng), toll(rng)};
    const auto f = extract_tstt_pwl(routes, u);
    for (const auto& p : f.pieces()) {
      if (p.x_start == 0.0) continue;
      const double left = tstt(routes, p.x_start * (1 - 1e-13), u);
      const double right = tstt(routes, p.x_start * (1 + 1e-13), u);
      CHECK(std::abs(left - right) <= 1e-9);
    }
  }
}

TEST_CASE("agrees with the Beckmann oracle on small two-route instances") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> toll(0.5, 4.0);
  std::uniform_real_distribution<double> demand(0.01, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PwlFunction> routes{random_convex(rng), random_convex(rng)};
    std::vector<double> u{toll(rng), toll(rng)};
    const double x = demand(rng);
    CHECK(tstt(routes, x, u) == doctest::Approx(beckmann_tstt(routes, x, u)).epsilon(1e-6));
  }
}

TEST_CASE("extract_tstt_pwl for the worked routes") {
  const auto routes = worked_routes();
  const std::vector<double> u{2.0, 2.0};
  const auto f = extract_tstt_pwl(routes, u);
  REQUIRE(f.pieces().size() == 2);
  const auto& p0 = f.pieces()[0];
  const auto& p1 = f.pieces()[1];
  CHECK(p0.x_start == 0.0);
  CHECK(p0.k0 == doctest::Approx(1.0));
  CHECK(p0.kr[0] == doctest::Approx(1.0));
  CHECK(p0.kr[1] == doctest::Approx(1.0));
  CHECK(p0.kc == doctest::Approx(1.5));
  CHECK(p1.x_start == doctest::Approx(0.5));
  CHECK(p1.k0 == doctest::Approx(4.0 / 3.0));
  CHECK(p1.kr[0] == doctest::Approx(4.0 / 3.0));
  CHECK(p1.kr[1] == doctest::Approx(2.0 / 3.0));
  CHECK(p1.kc == doctest::Approx(4.0 / 3.0));
  CHECK(f(0.5) == doctest::Approx(6.0));
  CHECK(std::abs(f(3.0) - 28.0 / 3.0) <= 1e-12);
  CHECK(f.strictly_positive());
}

TEST_CASE("extract_tstt_pwl for a single route is the route itself") {
  const PwlFunction route({{0.0, 1.0, 0.5}, {2.0, 3.0, -3.5}});
  const std::vector<PwlFunction> routes{route};
  const std::vector<double> u{3.0};
  const auto f = extract_tstt_pwl(routes, u);
  REQUIRE(f.pieces().size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(f.pieces()[k].k0 == doctest::Approx(route[k].slope));
    CHECK(f.pieces()[k].kr[0] == doctest::Approx(1.0));
    CHECK(f.pieces()[k].kc == doctest::Approx(route[k].intercept));
  }
}

TEST_CASE("extract_tstt_pwl agrees with tstt pointwise") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> toll(0.5, 4.0);
  std::uniform_real_distribution<double> demand(0.0, 15.0);
  for (int inst = 0; inst < 10; ++inst) {
    std::vector<PwlFunction> routes{random_convex(rng), random_convex(rng), random_convex(rng)};
    std::vector<double> u{toll(rng), toll(rng), toll(rng)};
    const auto f = extract_tstt_pwl(routes, u);
    CHECK(f.strictly_positive());
    for (int i = 0; i < 200; ++i) {
      const double x = demand(rng);
      CHECK(std::abs(f(x) - tstt(routes, x, u)) <= 1e-9 * std::max(1.0, f(x)));
    }
  }
}

TEST_CASE("coefficient extrema") {
  const auto routes = worked_routes();
  const std::vector<double> u{2.0, 2.0};
  const std::vector<TsttPwl> fs{extract_tstt_pwl(routes, u)};
  const auto ex = coefficient_extrema(fs);
  CHECK(ex.k0_min == doctest::Approx(1.0));
  CHECK(ex.k0_max == doctest::Approx(4.0 / 3.0));
  CHECK(ex.kr_max[0] == doctest::Approx(4.0 / 3.0));
  CHECK(ex.kr_min[1] == doctest::Approx(2.0 / 3.0));

  const std::vector<PwlFunction> single{PwlFunction::line(2.0, 1.0)};
  const std::vector<double> one{1.0};
  const std::vector<TsttPwl> gs{extract_tstt_pwl(single, one)};
  const auto ey = coefficient_extrema(gs);
  CHECK(ey.k0_min == ey.k0_max);
  CHECK(ey.kr_min == ey.kr_max);

  // Order of the inputs does not matter.
  const std::vector<double> v{4.0, 2.0};
  const std::vector<TsttPwl> ab{extract_tstt_pwl(routes, u), extract_tstt_pwl(routes, v)};
  const std::vector<TsttPwl> ba{extract_tstt_pwl(routes, v), extract_tstt_pwl(routes, u)};
  const auto e1 = coefficient_extrema(ab);
  const auto e2 = coefficient_extrema(ba);
  CHECK(e1.k0_max == e2.k0_max);
  CHECK(e1.k0_min == e2.k0_min);
  CHECK(e1.kr_max == e2.kr_max);
  CHECK(e1.kr_min == e2.kr_min);
}
