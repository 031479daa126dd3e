#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtoll/equilibrium.hpp"
#include "dtoll/network.hpp"
#include "dtoll/pwl.hpp"

namespace dtoll::mdp {

using equilibrium::TsttPwl;
using pwl::PwlFunction;

class MdpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// TSTT as a function of demand for one fixed toll vector.
class TsttEvaluator {
 public:
  TsttEvaluator(std::vector<PwlFunction> costs, std::vector<double> tolls);
  double operator()(double x) const;

 private:
  std::vector<PwlFunction> costs_;
  std::vector<double> tolls_;
};

/// The tolled network: parallel single-link routes or a reducible network.
class Instance {
 public:
  static Instance parallel_routes(std::vector<PwlFunction> routes);
  static Instance bpr_routes(std::span<const pwl::BprFunction> curves, const pwl::ApproxConfig& approx);
  /// Single OD pair: top-level alternatives stay separate routes. Several
  /// OD pairs: the chain is reduced to one link using `splits`.
  static Instance from_network(network::Network net, network::MultiOdSpec splits = {});

  /// Number of independently tolled routes or links.
  std::size_t slot_count() const;

  TsttEvaluator evaluator(std::span<const double> tolls) const;
  double tstt(double x, std::span<const double> tolls) const { return evaluator(tolls)(x); }
  TsttPwl tstt_pwl(std::span<const double> tolls) const;

  bool is_network() const { return network_.has_value(); }
  const std::vector<PwlFunction>& routes() const { return routes_; }
  const network::Network& network() const { return *network_; }

 private:
  std::vector<PwlFunction> routes_;
  std::optional<network::Network> network_;
  network::MultiOdSpec splits_;
};

struct ProblemConfig {
  Instance instance;
  double theta = 100.0;
  int x_max = 15;
  std::vector<double> toll_levels{2.0, 3.0, 4.0};
  std::optional<int> aggregation;

  void validate() const;
  /// m^R toll vectors in lexicographic order; action 0 is all lowest tolls.
  std::size_t action_count() const;
  std::vector<double> action_tolls(std::size_t action) const;
  double tau_min() const { return toll_levels.front(); }
  double tau_max() const { return toll_levels.back(); }
};

struct AggregatedState {
  double lo = 0.0;
  double hi = 0.0;
  double center() const { return 0.5 * (lo + hi); }
};

/// N equal intervals covering [0, x_max].
std::vector<AggregatedState> aggregated_states(int x_max, int n);

struct MdpModel {
  std::vector<double> states;               // demand represented by each state
  std::vector<std::vector<double>> actions;  // toll vector of each action
  std::vector<Eigen::MatrixXd> P;            // per action, states x states
  Eigen::MatrixXd g;                         // states x actions
  Eigen::MatrixXd tstt;                      // states x actions, TSTT at the state itself
  bool aggregated = false;

  std::size_t state_count() const { return states.size(); }
  std::size_t action_count() const { return actions.size(); }
  /// Reference state with zero differential cost: the last one.
  std::size_t anchor() const { return states.size() - 1; }

  /// Checks shapes, stochastic rows and positive finite costs.
  void validate() const;
};

double poisson_log_pmf(int j, double lambda);

/// Poisson(lambda) restricted to 0..x_max and renormalized.
std::vector<double> truncated_poisson(double lambda, int x_max);

/// Transition row from demand x under tolls u, with mean theta / tstt(x, u).
std::vector<double> poisson_row(const ProblemConfig& cfg, double x, std::span<const double> tolls);

/// sum_j q_xj(u) tstt(j, u) over 0..x_max.
double expected_cost(const ProblemConfig& cfg, double x, std::span<const double> tolls);

/// Standard normal probability of [lo, hi] for N(mean, variance).
double normal_interval_mass(double mean, double variance, double lo, double hi);

/// Normal masses of the intervals for mean = variance = `mean`, normalized.
std::vector<double> normal_row(double mean, std::span<const AggregatedState> intervals);

MdpModel build_truncated_model(const ProblemConfig& cfg, unsigned threads = 1);
MdpModel build_aggregated_model(const ProblemConfig& cfg, int n, unsigned threads = 1);
/// Aggregated when cfg.aggregation is set, truncated otherwise.
MdpModel build_model(const ProblemConfig& cfg, unsigned threads = 1);

/// Transition matrix of one action with a header row of target states.
std::string transition_csv(const MdpModel& model, std::size_t action);
/// g table: "state,a1,...".
std::string cost_csv(const MdpModel& model);

}  // namespace dtoll::mdp
