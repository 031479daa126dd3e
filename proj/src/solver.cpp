#include "dtoll/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <random>
#include <set>

namespace dtoll::solver {
namespace {

void check_policy(const MdpModel& model, const Policy& policy) {
  if (policy.size() != model.state_count()) {
    throw SolverError(fmt::format("policy has {} entries, model has {} states", policy.size(), model.state_count()));
  }
  for (std::size_t i = 0; i < policy.size(); ++i) {
    if (policy[i] >= model.action_count()) {
      throw SolverError(fmt::format("policy picks action {} at state {}, only {} exist", policy[i], i, model.action_count()));
    }
  }
}

// Column a of the Q table: g(., a) + P_a h.
Eigen::VectorXd q_column(const MdpModel& model, std::size_t a, const Eigen::VectorXd& h) {
  return model.g.col(static_cast<Eigen::Index>(a)) + model.P[a] * h;
}

Eigen::VectorXd bellman(const MdpModel& model, const Eigen::VectorXd& h) {
  Eigen::VectorXd best = q_column(model, 0, h);
  for (std::size_t a = 1; a < model.action_count(); ++a) best = best.cwiseMin(q_column(model, a, h));
  return best;
}

std::size_t changed_states(const Policy& a, const Policy& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return n;
}

}  // namespace

Evaluation policy_evaluation(const MdpModel& model, const Policy& policy) {
  check_policy(model, policy);
  const auto S = static_cast<Eigen::Index>(model.state_count());
  const auto anchor = static_cast<Eigen::Index>(model.anchor());
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(S, S);
  Eigen::VectorXd rhs(S);
  for (Eigen::Index i = 0; i < S; ++i) {
    const std::size_t a = policy[static_cast<std::size_t>(i)];
    M.row(i) -= model.P[a].row(i);
    rhs(i) = model.g(i, static_cast<Eigen::Index>(a));
  }
  // h(anchor) is fixed at 0, so its column carries lambda instead.
  M.col(anchor).setOnes();
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  if (!lu.isInvertible()) {
    throw SolverError(fmt::format("policy evaluation is singular: anchor state {} is not reachable from every state",
                                  model.anchor()));
  }
  const Eigen::VectorXd z = lu.solve(rhs);
  Evaluation out;
  out.lambda = z(anchor);
  out.h = z;
  out.h(anchor) = 0.0;
  return out;
}

Policy policy_improvement(const MdpModel& model, const Eigen::VectorXd& h) {
  if (static_cast<std::size_t>(h.size()) != model.state_count()) throw SolverError("h has the wrong size");
  if (!h.allFinite()) throw SolverError("h must be finite");
  Policy policy(model.state_count(), 0);
  Eigen::VectorXd best = q_column(model, 0, h);
  for (std::size_t a = 1; a < model.action_count(); ++a) {
    const Eigen::VectorXd q = q_column(model, a, h);
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      if (q(i) < best(i)) {
        best(i) = q(i);
        policy[static_cast<std::size_t>(i)] = a;
      }
    }
  }
  return policy;
}

double bellman_residual(const MdpModel& model, double lambda, const Eigen::VectorXd& h) {
  return (bellman(model, h) - h - Eigen::VectorXd::Constant(h.size(), lambda)).cwiseAbs().maxCoeff();
}

SolveResult policy_iteration(const MdpModel& model, Policy initial, const IterationOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  Policy policy = initial.empty() ? Policy(model.state_count(), 0) : std::move(initial);
  check_policy(model, policy);

  SolveResult out;
  std::set<Policy> seen{policy};
  Evaluation prev;
  Policy prev_policy = policy;
  bool converged = false;
  while (out.iterations < options.max_iterations) {
    const Evaluation ev = policy_evaluation(model, policy);
    ++out.iterations;
    out.trace.push_back({ev.lambda, changed_states(policy, prev_policy)});
    const bool settled = out.iterations > 1 && std::abs(ev.lambda - prev.lambda) <= options.tolerance &&
                         (ev.h - prev.h).cwiseAbs().maxCoeff() <= options.tolerance;
    out.policy = policy;
    out.lambda = ev.lambda;
    out.h = ev.h;
    if (settled) {
      converged = true;
      break;
    }
    Policy next = policy_improvement(model, ev.h);
    if (next == policy || !seen.insert(next).second) {
      converged = true;
      break;
    }
    prev = ev;
    prev_policy = std::move(policy);
    policy = std::move(next);
  }
  if (!converged) {
    std::string tail;
    for (std::size_t k = out.trace.size() > 5 ? out.trace.size() - 5 : 0; k < out.trace.size(); ++k) {
      tail += fmt::format(" ({}, {})", out.trace[k].lambda, out.trace[k].changed);
    }
    throw SolverError(fmt::format("policy iteration did not converge in {} iterations; last (lambda, changed):{}",
                                  options.max_iterations, tail));
  }
  out.bellman_residual = bellman_residual(model, out.lambda, out.h);
  out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

RviResult relative_value_iteration(const MdpModel& model, const IterationOptions& options) {
  const auto anchor = static_cast<Eigen::Index>(model.anchor());
  RviResult out;
  out.h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.state_count()));
  while (out.iterations < options.max_iterations) {
    const Eigen::VectorXd th = bellman(model, out.h);
    ++out.iterations;
    const Eigen::VectorXd diff = th - out.h;
    out.lambda = th(anchor);
    out.h = th.array() - th(anchor);
    if (diff.maxCoeff() - diff.minCoeff() <= options.tolerance) return out;
  }
  throw SolverError(fmt::format("relative value iteration did not converge in {} iterations", options.max_iterations));
}

SimulationReport simulate_policy(const MdpModel& model, const Policy& policy, std::uint64_t horizon,
                                 std::uint64_t seed, std::uint64_t record_every) {
  check_policy(model, policy);
  if (horizon < 1) throw SolverError("simulation horizon must be >= 1");
  const std::size_t S = model.state_count();

  std::vector<std::vector<double>> cumulative(S);
  std::vector<double> cost(S);
  for (std::size_t i = 0; i < S; ++i) {
    const std::size_t a = policy[i];
    cost[i] = model.g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a));
    double acc = 0.0;
    for (std::size_t j = 0; j < S; ++j) {
      acc += model.P[a](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      cumulative[i].push_back(acc);
    }
  }

  std::mt19937_64 rng(seed);
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  SimulationReport rep;
  rep.seed = seed;
  rep.horizon = horizon;
  rep.visits.assign(S, 0);
  const std::uint64_t batches = std::min<std::uint64_t>(100, horizon);
  std::vector<double> batch_sum(batches, 0.0);
  std::vector<std::uint64_t> batch_len(batches, 0);

  double total = 0.0, excursion_cost = 0.0, return_time_sum = 0.0, return_cost_sum = 0.0;
  std::uint64_t last_zero = 0;
  std::size_t x = 0;
  for (std::uint64_t k = 0; k < horizon; ++k) {
    if (x == 0 && k > 0) {
      ++rep.excursions;
      return_time_sum += static_cast<double>(k - last_zero);
      return_cost_sum += excursion_cost;
      excursion_cost = 0.0;
      last_zero = k;
    }
    ++rep.visits[x];
    total += cost[x];
    excursion_cost += cost[x];
    const std::uint64_t b = std::min<std::uint64_t>(
        batches - 1, static_cast<std::uint64_t>(static_cast<double>(k) * static_cast<double>(batches) / static_cast<double>(horizon)));
    batch_sum[b] += cost[x];
    ++batch_len[b];
    if (record_every > 0 && ((k + 1) % record_every == 0 || k + 1 == horizon)) {
      rep.running_average.emplace_back(k + 1, total / static_cast<double>(k + 1));
    }

    const double r = uniform();
    const auto& cdf = cumulative[x];
    auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
    x = it == cdf.end() ? S - 1 : static_cast<std::size_t>(it - cdf.begin());
  }

  rep.average_cost = total / static_cast<double>(horizon);
  if (batches > 1) {
    double mean = 0.0;
    for (std::uint64_t b = 0; b < batches; ++b) mean += batch_sum[b] / static_cast<double>(batch_len[b]);
    mean /= static_cast<double>(batches);
    double var = 0.0;
    for (std::uint64_t b = 0; b < batches; ++b) {
      const double d = batch_sum[b] / static_cast<double>(batch_len[b]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(batches - 1);
    rep.standard_error = std::sqrt(var / static_cast<double>(batches));
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  rep.mean_return_time = rep.excursions ? return_time_sum / static_cast<double>(rep.excursions) : nan;
  rep.mean_return_cost = rep.excursions ? return_cost_sum / static_cast<double>(rep.excursions) : nan;
  return rep;
}

std::string policy_csv(const MdpModel& model, const Policy& policy) {
  check_policy(model, policy);
  const std::size_t R = model.actions.front().size();
  std::string out = "state";
  for (std::size_t r = 0; r < R; ++r) out += fmt::format(",toll_route_{}", r + 1);
  out += '\n';
  for (std::size_t i = 0; i < policy.size(); ++i) {
    out += fmt::format("{}", model.states[i]);
    for (double u : model.actions[policy[i]]) out += fmt::format(",{}", u);
    out += '\n';
  }
  return out;
}

}  // namespace dtoll::solver
