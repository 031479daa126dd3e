#include <cmath>
#include <random>

#include "doctest.h"
#include "dtoll/solver.hpp"
#include "oracles.hpp"

using namespace dtoll;
using mdp::MdpModel;
using solver::Policy;
using solver::SolverError;
using oracle::all_policies;
using oracle::make_model;
using oracle::random_model;
using oracle::stationary_average;

namespace {

MdpModel hand_model() {
  Eigen::MatrixXd P(2, 2);
  P << 0.5, 0.5, 0.25, 0.75;
  Eigen::MatrixXd g(2, 1);
  g << 1.0, 3.0;
  return make_model({P}, g);
}

// Action 0 is cheap now but drifts to the expensive state.
MdpModel crafted_model() {
  Eigen::MatrixXd P0(2, 2), P1(2, 2);
  P0 << 0.1, 0.9, 0.5, 0.5;
  P1 << 0.9, 0.1, 0.6, 0.4;
  Eigen::MatrixXd g(2, 2);
  g << 1.0, 2.0, 10.0, 11.0;
  return make_model({P0, P1}, g);
}

mdp::ProblemConfig original_config() {
  const pwl::BprFunction curves[] = {{1.0, 4.0, 0.5}, {2.0, 4.0, 1.0}};
  return mdp::ProblemConfig{mdp::Instance::bpr_routes(curves, pwl::ApproxConfig{})};
}

}  // namespace

TEST_CASE("two-state policy evaluation") {
  const auto m = hand_model();
  const auto ev = solver::policy_evaluation(m, {0, 0});
  CHECK(ev.lambda == doctest::Approx(7.0 / 3.0).epsilon(1e-14));
  CHECK(ev.h(0) == doctest::Approx(-8.0 / 3.0).epsilon(1e-14));
  CHECK(ev.h(1) == 0.0);
  CHECK(stationary_average(m, {0, 0}) == doctest::Approx(7.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("single-state model") {
  Eigen::MatrixXd P = Eigen::MatrixXd::Ones(1, 1);
  Eigen::MatrixXd g(1, 2);
  g << 4.0, 2.5;
  const auto m = make_model({P, P}, g);
  const auto ev = solver::policy_evaluation(m, {0});
  CHECK(ev.lambda == 4.0);
  CHECK(ev.h(0) == 0.0);
  CHECK(solver::relative_value_iteration(m).lambda == doctest::Approx(2.5));
  CHECK(solver::policy_iteration(m).lambda == doctest::Approx(2.5));
}

TEST_CASE("unreachable anchor is reported") {
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd g(2, 1);
  g << 1.0, 2.0;
  const auto m = make_model({P}, g);
  CHECK_THROWS_WITH_AS(solver::policy_evaluation(m, {0, 0}), doctest::Contains("not reachable"), SolverError);
}

TEST_CASE("policy checks") {
  const auto m = crafted_model();
  CHECK_THROWS_AS(solver::policy_evaluation(m, {0}), SolverError);
  CHECK_THROWS_AS(solver::policy_evaluation(m, {0, 2}), SolverError);
  CHECK_THROWS_AS(solver::simulate_policy(m, {0, 0}, 0, 1), SolverError);
}

TEST_CASE("improvement with one action or zero h") {
  const auto single = hand_model();
  CHECK(solver::policy_improvement(single, Eigen::VectorXd::Zero(2)) == Policy{0, 0});
  const auto m = crafted_model();
  CHECK(solver::policy_improvement(m, Eigen::VectorXd::Zero(2)) == Policy{0, 0});
}

TEST_CASE("ties go to the lowest action index") {
  Eigen::MatrixXd P(2, 2);
  P << 0.5, 0.5, 0.5, 0.5;
  Eigen::MatrixXd g(2, 3);
  g << 2.0, 1.0, 1.0, 3.0, 3.0, 3.0;
  const auto m = make_model({P, P, P}, g);
  CHECK(solver::policy_improvement(m, Eigen::VectorXd::Zero(2)) == Policy{1, 0});
}

TEST_CASE("crafted model: improvement beats the myopic policy") {
  const auto m = crafted_model();
  double best = std::numeric_limits<double>::infinity();
  Policy best_policy;
  for (const auto& p : all_policies(2, 2)) {
    const double lambda = solver::policy_evaluation(m, p).lambda;
    if (lambda < best) {
      best = lambda;
      best_policy = p;
    }
  }
  CHECK(best_policy != Policy{0, 0});
  const auto res = solver::policy_iteration(m);
  CHECK(res.policy == best_policy);
  CHECK(res.lambda == doctest::Approx(best).epsilon(1e-12));
  CHECK(res.bellman_residual <= 1e-8);
  CHECK_THROWS_WITH_AS(solver::policy_iteration(m, {}, {.max_iterations = 1, .tolerance = 1e-10}),
                       doctest::Contains("did not converge"), SolverError);
}

TEST_CASE("one-action model converges after one improvement") {
  const auto m = hand_model();
  const auto res = solver::policy_iteration(m);
  CHECK(res.iterations == 1);
  CHECK(res.lambda == doctest::Approx(7.0 / 3.0));
}

TEST_CASE("small random models match exhaustive enumeration") {
  std::mt19937_64 rng(17);
  for (int S = 1; S <= 3; ++S) {
    for (int A = 1; A <= 3; ++A) {
      for (int t = 0; t < 20; ++t) {
        const auto m = random_model(rng, S, A);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : all_policies(static_cast<std::size_t>(S), static_cast<std::size_t>(A))) {
          const double lambda = solver::policy_evaluation(m, p).lambda;
          CHECK(lambda == doctest::Approx(stationary_average(m, p)).epsilon(1e-9));
          best = std::min(best, lambda);
        }
        const auto res = solver::policy_iteration(m);
        CHECK(res.lambda == doctest::Approx(best).epsilon(1e-12));
        CHECK(res.bellman_residual <= 1e-8);
        for (std::size_t k = 1; k < res.trace.size(); ++k) {
          CHECK(res.trace[k].lambda <= res.trace[k - 1].lambda + 1e-12);
        }
        CHECK(solver::relative_value_iteration(m).lambda == doctest::Approx(best).epsilon(1e-8));
      }
    }
  }
}

TEST_CASE("original instance: policy iteration, value iteration and simulation agree") {
  const auto cfg = original_config();
  const auto m = mdp::build_truncated_model(cfg);
  const auto res = solver::policy_iteration(m);
  CHECK(res.bellman_residual <= 1e-8);
  CHECK(res.h(15) == 0.0);
  CHECK(res.lambda > 0.0);
  for (std::size_t k = 1; k < res.trace.size(); ++k) CHECK(res.trace[k].lambda <= res.trace[k - 1].lambda + 1e-12);
  const auto rvi = solver::relative_value_iteration(m);
  CHECK(std::abs(rvi.lambda - res.lambda) <= 1e-8);
  CHECK(solver::policy_evaluation(m, res.policy).lambda ==
        doctest::Approx(stationary_average(m, res.policy)).epsilon(1e-9));

  // Tolls fall as demand rises.
  const auto& low = m.actions[res.policy.front()];
  const auto& high = m.actions[res.policy.back()];
  bool strictly = false;
  for (std::size_t r = 0; r < low.size(); ++r) {
    CHECK(low[r] >= high[r]);
    strictly = strictly || low[r] > high[r];
  }
  CHECK(strictly);

  const Policy cheapest(m.state_count(), 0);
  const double lambda = solver::policy_evaluation(m, cheapest).lambda;
  const auto sim = solver::simulate_policy(m, cheapest, 1'000'000, 42);
  CHECK(std::abs(sim.average_cost - lambda) <= 3.0 * sim.standard_error);
  CHECK(sim.standard_error > 0.0);
  std::uint64_t visits = 0;
  for (auto v : sim.visits) visits += v;
  CHECK(visits == 1'000'000);
}

TEST_CASE("simulation is reproducible and degenerate at horizon 1") {
  const auto m = crafted_model();
  const auto one = solver::simulate_policy(m, {1, 0}, 1, 7);
  CHECK(one.average_cost == m.g(0, 1));
  CHECK(one.standard_error == 0.0);
  CHECK(one.excursions == 0);
  CHECK(std::isnan(one.mean_return_time));

  const auto a = solver::simulate_policy(m, {1, 0}, 50'000, 123);
  const auto b = solver::simulate_policy(m, {1, 0}, 50'000, 123);
  CHECK(a.average_cost == b.average_cost);
  CHECK(a.standard_error == b.standard_error);
  CHECK(a.visits == b.visits);
  CHECK(a.mean_return_time == b.mean_return_time);
  const auto c = solver::simulate_policy(m, {1, 0}, 50'000, 124);
  CHECK(a.visits != c.visits);

  // Renewal identity: lambda = C / N over excursions from state 0.
  const double lambda = solver::policy_evaluation(m, {1, 0}).lambda;
  CHECK(a.mean_return_cost / a.mean_return_time == doctest::Approx(lambda).epsilon(0.02));
}

TEST_CASE("policy CSV") {
  const auto m = crafted_model();
  CHECK(solver::policy_csv(m, {1, 0}) == "state,toll_route_1\n0,2\n1,1\n");
}

TEST_CASE("running average trace") {
  const auto m = crafted_model();
  const auto rep = solver::simulate_policy(m, {1, 0}, 1005, 9, 100);
  REQUIRE(rep.running_average.size() == 11);
  CHECK(rep.running_average.front().first == 100);
  CHECK(rep.running_average.back().first == 1005);
  CHECK(rep.running_average.back().second == doctest::Approx(rep.average_cost).epsilon(1e-14));
  CHECK(solver::simulate_policy(m, {1, 0}, 1005, 9).running_average.empty());
}
