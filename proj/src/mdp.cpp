#include "dtoll/mdp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <numeric>
#include <thread>

namespace dtoll::mdp {

TsttEvaluator::TsttEvaluator(std::vector<PwlFunction> costs, std::vector<double> tolls)
    : costs_(std::move(costs)), tolls_(std::move(tolls)) {}

double TsttEvaluator::operator()(double x) const { return equilibrium::tstt(costs_, x, tolls_); }

Instance Instance::parallel_routes(std::vector<PwlFunction> routes) {
  if (routes.empty()) throw MdpError("an instance needs at least one route");
  Instance inst;
  inst.routes_ = std::move(routes);
  return inst;
}

Instance Instance::bpr_routes(std::span<const pwl::BprFunction> curves, const pwl::ApproxConfig& approx) {
  std::vector<PwlFunction> routes;
  for (const auto& c : curves) routes.push_back(pwl::approximate_bpr(c, approx));
  return parallel_routes(std::move(routes));
}

Instance Instance::from_network(network::Network net, network::MultiOdSpec splits) {
  const auto diag = network::validate(net);
  if (!diag.valid()) throw MdpError(fmt::format("invalid network: {}", fmt::join(diag.messages, "; ")));
  if (net.od_pairs.size() > 1 && splits.rho.size() + 1 != net.od_pairs.size()) {
    throw MdpError(fmt::format("{} OD pairs need {} split fractions, got {}", net.od_pairs.size(),
                               net.od_pairs.size() - 1, splits.rho.size()));
  }
  Instance inst;
  inst.network_ = std::move(net);
  inst.splits_ = std::move(splits);
  // Fail early on bad fractions or non-chain topologies.
  inst.evaluator(std::vector<double>(inst.slot_count(), 1.0));
  return inst;
}

std::size_t Instance::slot_count() const { return network_ ? network_->slot_count() : routes_.size(); }

TsttEvaluator Instance::evaluator(std::span<const double> tolls) const {
  if (tolls.size() != slot_count()) {
    throw MdpError(fmt::format("expected {} tolls, got {}", slot_count(), tolls.size()));
  }
  if (!network_) return TsttEvaluator(routes_, std::vector<double>(tolls.begin(), tolls.end()));
  std::vector<PwlFunction> costs;
  if (network_->od_pairs.size() == 1) {
    for (const auto& r : network::reduce_series_parallel(*network_, tolls)) costs.push_back(r.as_pwl());
  } else {
    costs.push_back(network::reduce_multi_od(*network_, splits_, tolls).as_pwl());
  }
  std::vector<double> zero(costs.size(), 0.0);
  return TsttEvaluator(std::move(costs), std::move(zero));
}

TsttPwl Instance::tstt_pwl(std::span<const double> tolls) const {
  if (!network_) return equilibrium::extract_tstt_pwl(routes_, tolls);
  if (network_->od_pairs.size() == 1) {
    const auto alternatives = network::reduce_series_parallel(*network_, tolls);
    return equilibrium::extract_tstt_pwl(std::span<const TsttPwl>(alternatives));
  }
  return network::reduce_multi_od(*network_, splits_, tolls);
}

void ProblemConfig::validate() const {
  if (!(theta > 0.0) || !std::isfinite(theta)) throw MdpError(fmt::format("theta must be finite and > 0, got {}", theta));
  if (x_max < 0) throw MdpError(fmt::format("x_max must be >= 0, got {}", x_max));
  if (toll_levels.empty()) throw MdpError("at least one toll level is required");
  for (std::size_t i = 0; i < toll_levels.size(); ++i) {
    const double t = toll_levels[i];
    if (!(t > 0.0) || !std::isfinite(t)) throw MdpError(fmt::format("toll levels must be finite and > 0, got {}", t));
    if (i > 0 && !(t > toll_levels[i - 1])) throw MdpError("toll levels must be strictly increasing");
  }
  if (aggregation && *aggregation < 1) throw MdpError(fmt::format("aggregation count must be >= 1, got {}", *aggregation));
  const double count = std::pow(static_cast<double>(toll_levels.size()), static_cast<double>(instance.slot_count()));
  if (count > 1e6) throw MdpError(fmt::format("action space of {} toll vectors is too large", count));
}

std::size_t ProblemConfig::action_count() const {
  std::size_t n = 1;
  for (std::size_t s = 0; s < instance.slot_count(); ++s) n *= toll_levels.size();
  return n;
}

std::vector<double> ProblemConfig::action_tolls(std::size_t action) const {
  if (action >= action_count()) throw MdpError(fmt::format("action {} out of range", action));
  const std::size_t slots = instance.slot_count();
  const std::size_t m = toll_levels.size();
  std::vector<double> u(slots);
  for (std::size_t s = slots; s-- > 0;) {
    u[s] = toll_levels[action % m];
    action /= m;
  }
  return u;
}

std::vector<AggregatedState> aggregated_states(int x_max, int n) {
  if (n < 1) throw MdpError(fmt::format("aggregation count must be >= 1, got {}", n));
  if (x_max < 1) throw MdpError("aggregation needs x_max >= 1");
  const double width = static_cast<double>(x_max) / n;
  std::vector<AggregatedState> out(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) out[static_cast<std::size_t>(c)] = {c * width, c + 1 == n ? static_cast<double>(x_max) : (c + 1) * width};
  return out;
}

void MdpModel::validate() const {
  const auto S = static_cast<Eigen::Index>(states.size());
  const auto A = static_cast<Eigen::Index>(actions.size());
  if (S == 0 || A == 0) throw MdpError("model needs at least one state and one action");
  if (P.size() != actions.size()) throw MdpError("one transition matrix per action is required");
  if (g.rows() != S || g.cols() != A) throw MdpError("cost table has the wrong shape");
  for (Eigen::Index a = 0; a < A; ++a) {
    const auto& m = P[static_cast<std::size_t>(a)];
    if (m.rows() != S || m.cols() != S) throw MdpError(fmt::format("transition matrix {} has the wrong shape", a));
    for (Eigen::Index i = 0; i < S; ++i) {
      if ((m.row(i).array() < 0.0).any() || !m.row(i).allFinite()) {
        throw MdpError(fmt::format("row {} of action {} has invalid probabilities", i, a));
      }
      const double sum = m.row(i).sum();
      if (std::abs(sum - 1.0) > 1e-12) throw MdpError(fmt::format("row {} of action {} sums to {}", i, a, sum));
      if (!(g(i, a) > 0.0) || !std::isfinite(g(i, a))) {
        throw MdpError(fmt::format("cost g({}, {}) = {} is not finite and positive", i, a, g(i, a)));
      }
    }
  }
}

double poisson_log_pmf(int j, double lambda) {
  if (j < 0) return -std::numeric_limits<double>::infinity();
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw MdpError(fmt::format("Poisson mean must be finite and > 0, got {}", lambda));
  return j * std::log(lambda) - lambda - std::lgamma(j + 1.0);
}

namespace {

// exp(logs) normalized, shifted by the maximum so nothing underflows to 0/0.
std::vector<double> normalize_logs(std::vector<double> logs) {
  const double top = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (auto& v : logs) {
    v = std::exp(v - top);
    sum += v;
  }
  for (auto& v : logs) v /= sum;
  return logs;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

std::vector<double> truncated_poisson(double lambda, int x_max) {
  if (x_max < 0) throw MdpError("x_max must be >= 0");
  std::vector<double> logs(static_cast<std::size_t>(x_max) + 1);
  for (int j = 0; j <= x_max; ++j) logs[static_cast<std::size_t>(j)] = poisson_log_pmf(j, lambda);
  return normalize_logs(std::move(logs));
}

std::vector<double> poisson_row(const ProblemConfig& cfg, double x, std::span<const double> tolls) {
  const double t = cfg.instance.tstt(x, tolls);
  if (!(t > 0.0)) throw MdpError(fmt::format("TSTT at demand {} is {}, expected > 0", x, t));
  return truncated_poisson(cfg.theta / t, cfg.x_max);
}

double expected_cost(const ProblemConfig& cfg, double x, std::span<const double> tolls) {
  const auto ev = cfg.instance.evaluator(tolls);
  const auto q = truncated_poisson(cfg.theta / ev(x), cfg.x_max);
  double g = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) g += q[j] * ev(static_cast<double>(j));
  return g;
}

double normal_interval_mass(double mean, double variance, double lo, double hi) {
  if (!(variance > 0.0)) throw MdpError("variance must be > 0");
  const double sd = std::sqrt(variance);
  const double a = (lo - mean) / sd;
  const double b = (hi - mean) / sd;
  // Use the tail that avoids cancellation.
  if (a > 0.0) return 0.5 * (std::erfc(a / std::sqrt(2.0)) - std::erfc(b / std::sqrt(2.0)));
  return normal_cdf(b) - normal_cdf(a);
}

std::vector<double> normal_row(double mean, std::span<const AggregatedState> intervals) {
  std::vector<double> row;
  row.reserve(intervals.size());
  double sum = 0.0;
  for (const auto& s : intervals) {
    row.push_back(normal_interval_mass(mean, mean, s.lo, s.hi));
    sum += row.back();
  }
  if (sum > 0.0) {
    for (auto& v : row) v /= sum;
    return row;
  }
  // Every interval is far in a tail; fall back to densities at the centers.
  std::vector<double> logs;
  for (const auto& s : intervals) logs.push_back(-0.5 * (s.center() - mean) * (s.center() - mean) / mean);
  return normalize_logs(std::move(logs));
}

namespace {

template <typename Fn>
void for_each_action(std::size_t count, unsigned threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t a = next++; a < count; a = next++) {
      try {
        fn(a);
      } catch (...) {
        errors[a] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

MdpModel empty_model(const ProblemConfig& cfg, std::vector<double> states) {
  MdpModel m;
  m.states = std::move(states);
  const std::size_t A = cfg.action_count();
  for (std::size_t a = 0; a < A; ++a) m.actions.push_back(cfg.action_tolls(a));
  const auto S = static_cast<Eigen::Index>(m.states.size());
  m.P.assign(A, Eigen::MatrixXd::Zero(S, S));
  m.g = Eigen::MatrixXd::Zero(S, static_cast<Eigen::Index>(A));
  m.tstt = Eigen::MatrixXd::Zero(S, static_cast<Eigen::Index>(A));
  return m;
}

std::string describe(const std::vector<double>& u) { return fmt::format("({})", fmt::join(u, ", ")); }

double positive_tstt(const TsttEvaluator& ev, double x, const std::vector<double>& u) {
  const double t = ev(x);
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw MdpError(fmt::format("TSTT at demand {} under tolls {} is {}", x, describe(u), t));
  }
  return t;
}

}  // namespace

MdpModel build_truncated_model(const ProblemConfig& cfg, unsigned threads) {
  cfg.validate();
  std::vector<double> states(static_cast<std::size_t>(cfg.x_max) + 1);
  std::iota(states.begin(), states.end(), 0.0);
  MdpModel m = empty_model(cfg, std::move(states));
  const auto S = static_cast<Eigen::Index>(m.states.size());

  for_each_action(m.action_count(), threads, [&](std::size_t a) {
    const auto& u = m.actions[a];
    const auto col = static_cast<Eigen::Index>(a);
    try {
      const auto ev = cfg.instance.evaluator(u);
      for (Eigen::Index i = 0; i < S; ++i) m.tstt(i, col) = positive_tstt(ev, static_cast<double>(i), u);
    } catch (const MdpError&) {
      throw;
    } catch (const std::exception& e) {
      throw MdpError(fmt::format("tolls {}: {}", describe(u), e.what()));
    }
    for (Eigen::Index i = 0; i < S; ++i) {
      const auto q = truncated_poisson(cfg.theta / m.tstt(i, col), cfg.x_max);
      double g = 0.0;
      for (Eigen::Index j = 0; j < S; ++j) {
        m.P[a](i, j) = q[static_cast<std::size_t>(j)];
        g += q[static_cast<std::size_t>(j)] * m.tstt(j, col);
      }
      m.g(i, col) = g;
    }
  });
  return m;
}

MdpModel build_aggregated_model(const ProblemConfig& cfg, int n, unsigned threads) {
  cfg.validate();
  const auto intervals = aggregated_states(cfg.x_max, n);
  std::vector<double> centers;
  for (const auto& s : intervals) centers.push_back(s.center());
  MdpModel m = empty_model(cfg, std::move(centers));
  m.aggregated = true;
  const auto S = static_cast<Eigen::Index>(m.states.size());

  for_each_action(m.action_count(), threads, [&](std::size_t a) {
    const auto& u = m.actions[a];
    const auto col = static_cast<Eigen::Index>(a);
    std::vector<double> integer_tstt;
    try {
      const auto ev = cfg.instance.evaluator(u);
      for (int j = 0; j <= cfg.x_max; ++j) integer_tstt.push_back(positive_tstt(ev, j, u));
      for (Eigen::Index i = 0; i < S; ++i) {
        m.tstt(i, col) = positive_tstt(ev, m.states[static_cast<std::size_t>(i)], u);
      }
    } catch (const MdpError&) {
      throw;
    } catch (const std::exception& e) {
      throw MdpError(fmt::format("tolls {}: {}", describe(u), e.what()));
    }
    for (Eigen::Index i = 0; i < S; ++i) {
      const double mean = cfg.theta / m.tstt(i, col);
      const auto row = normal_row(mean, intervals);
      for (Eigen::Index j = 0; j < S; ++j) m.P[a](i, j) = row[static_cast<std::size_t>(j)];
      const auto q = truncated_poisson(mean, cfg.x_max);
      double g = 0.0;
      for (std::size_t j = 0; j < q.size(); ++j) g += q[j] * integer_tstt[j];
      m.g(i, col) = g;
    }
  });
  return m;
}

MdpModel build_model(const ProblemConfig& cfg, unsigned threads) {
  return cfg.aggregation ? build_aggregated_model(cfg, *cfg.aggregation, threads) : build_truncated_model(cfg, threads);
}

std::string transition_csv(const MdpModel& model, std::size_t action) {
  if (action >= model.action_count()) throw MdpError(fmt::format("action {} out of range", action));
  std::string out = "state";
  for (double s : model.states) out += fmt::format(",{}", s);
  out += '\n';
  const auto& p = model.P[action];
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    out += fmt::format("{}", model.states[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < p.cols(); ++j) out += fmt::format(",{}", p(i, j));
    out += '\n';
  }
  return out;
}

std::string cost_csv(const MdpModel& model) {
  std::string out = "state";
  for (std::size_t a = 0; a < model.action_count(); ++a) out += fmt::format(",a{}", a + 1);
  out += '\n';
  for (Eigen::Index i = 0; i < model.g.rows(); ++i) {
    out += fmt::format("{}", model.states[static_cast<std::size_t>(i)]);
    for (Eigen::Index a = 0; a < model.g.cols(); ++a) out += fmt::format(",{}", model.g(i, a));
    out += '\n';
  }
  return out;
}

}  // namespace dtoll::mdp
