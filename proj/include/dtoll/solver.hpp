#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dtoll/mdp.hpp"

namespace dtoll::solver {

using mdp::MdpModel;

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Action index per state.
using Policy = std::vector<std::size_t>;

struct Evaluation {
  double lambda = 0.0;
  Eigen::VectorXd h;  // zero at the model's anchor state
};

struct TraceEntry {
  double lambda = 0.0;
  std::size_t changed = 0;  // states whose action differs from the previous policy
};

struct SolveResult {
  Policy policy;
  double lambda = 0.0;
  Eigen::VectorXd h;
  std::size_t iterations = 0;
  std::vector<TraceEntry> trace;
  double bellman_residual = 0.0;
  double wall_ms = 0.0;
};

struct IterationOptions {
  std::size_t max_iterations = 1000;
  double tolerance = 1e-10;
};

/// Average cost and differential costs of a stationary policy, from
/// h(i) + lambda = g(i, mu(i)) + sum_j p_ij h(j) with h(anchor) = 0.
Evaluation policy_evaluation(const MdpModel& model, const Policy& policy);

/// Greedy policy for h; ties go to the lowest action index, which is the
/// lexicographically smallest toll vector.
Policy policy_improvement(const MdpModel& model, const Eigen::VectorXd& h);

/// Alternates evaluation and improvement from `initial` (all lowest tolls
/// when empty) until the policy is stable, (lambda, h) stop moving within
/// the tolerance, or a policy repeats.
SolveResult policy_iteration(const MdpModel& model, Policy initial = {}, const IterationOptions& options = {});

/// max_i |min_u [g(i,u) + sum_j p_ij(u) h(j)] - h(i) - lambda|.
double bellman_residual(const MdpModel& model, double lambda, const Eigen::VectorXd& h);

struct RviResult {
  double lambda = 0.0;
  Eigen::VectorXd h;
  std::size_t iterations = 0;
};

/// Relative value iteration, stopped when the span of T(h) - h is within
/// the tolerance.
RviResult relative_value_iteration(const MdpModel& model,
                                   const IterationOptions& options = {.max_iterations = 1'000'000, .tolerance = 1e-10});

struct SimulationReport {
  double average_cost = 0.0;
  double standard_error = 0.0;
  std::vector<std::uint64_t> visits;
  std::uint64_t excursions = 0;       // completed returns to state 0
  double mean_return_time = 0.0;      // NaN without a completed excursion
  double mean_return_cost = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t horizon = 0;
  std::vector<std::pair<std::uint64_t, double>> running_average;  // (steps, average so far)
};

/// Samples the chain from state 0 with a seeded 64-bit Mersenne Twister.
/// The standard error uses up to 100 batch means. With `record_every` > 0
/// the running average is recorded every that many steps and at the end.
SimulationReport simulate_policy(const MdpModel& model, const Policy& policy, std::uint64_t horizon,
                                 std::uint64_t seed, std::uint64_t record_every = 0);

/// "state,toll_route_1,...,toll_route_R" with one row per state.
std::string policy_csv(const MdpModel& model, const Policy& policy);

}  // namespace dtoll::solver
