#include "dtoll/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "dtoll/conditions.hpp"
#include "dtoll/network.hpp"

namespace dtoll::experiment {
namespace {

namespace fs = std::filesystem;

constexpr std::pair<Kind, const char*> kKindNames[] = {
    {Kind::solve, "solve"},
    {Kind::verify, "verify"},
    {Kind::simulate, "simulate"},
    {Kind::sweep_theta, "sweep-theta"},
    {Kind::sweep_eta, "sweep-eta"},
    {Kind::sweep_xmax, "sweep-xmax"},
    {Kind::sweep_aggregation, "sweep-aggregation"},
    {Kind::sweep_routes, "sweep-routes"},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct Line {
  std::string source;
  int number = 0;

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(fmt::format("{}:{}: {}", source, number, msg)); }
};

double to_double(const std::string& key, const std::string& text, const Line& at) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
    at.fail(fmt::format("'{}' expects a number, got '{}'", key, text));
  }
  return v;
}

std::vector<double> to_list(const std::string& key, const std::string& text, const Line& at) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item), at));
  if (out.empty()) at.fail(fmt::format("'{}' expects a comma-separated list of numbers", key));
  return out;
}

long long to_integer(const std::string& key, const std::string& text, const Line& at) {
  long long v = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) at.fail(fmt::format("'{}' expects an integer, got '{}'", key, text));
  return v;
}

bool integral(double v) { return std::floor(v) == v; }

const std::map<std::string, std::string>& key_sections() {
  static const std::map<std::string, std::string> keys{
      {"c", "instance"},     {"b", "instance"},      {"a", "instance"},
      {"epsilon", "instance"}, {"eta", "instance"},  {"search_limit", "instance"},
      {"network", "instance"}, {"theta", "instance"}, {"x_max", "instance"},
      {"tolls", "instance"}, {"aggregation", "instance"}, {"kind", "experiment"},
      {"grid", "experiment"}, {"seed", "experiment"}, {"horizon", "experiment"},
      {"out", "experiment"}, {"threads", "experiment"},
  };
  return keys;
}

std::string join(const std::vector<double>& v) { return fmt::format("{}", fmt::join(v, ", ")); }

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw std::runtime_error(fmt::format("write to {} failed", path.string()));
}

std::string summary_csv(const PointResult& p) {
  return fmt::format("lambda,iterations,bellman_residual\n{},{},{}\n", p.solve.lambda, p.solve.iterations,
                     p.solve.bellman_residual);
}

template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t k = 0; k < n; ++k) body(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(threads, n); ++t) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < n; k = next++) {
          try {
            body(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::string to_string(Kind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<Kind> parse_kind(const std::string& text) {
  for (const auto& [k, name] : kKindNames) {
    if (text == name) return k;
  }
  return std::nullopt;
}

bool is_sweep(Kind kind) {
  return kind != Kind::solve && kind != Kind::verify && kind != Kind::simulate;
}

std::vector<double> default_grid(Kind kind) {
  switch (kind) {
    case Kind::sweep_theta: return {25.0, 100.0, 400.0};
    case Kind::sweep_eta: return {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    case Kind::sweep_xmax: return {4.0, 6.0, 8.0, 10.0, 12.0, 15.0};
    case Kind::sweep_aggregation: return {2.0, 4.0, 8.0, 16.0};
    case Kind::sweep_routes: return {1.0, 2.0, 3.0, 4.0};
    default: return {};
  }
}

std::vector<pwl::BprFunction> ExperimentConfig::curves() const {
  if (c.size() != b.size()) throw ConfigError(fmt::format("{}: 'c' has {} values but 'b' has {}", source, c.size(), b.size()));
  if (a.size() != 1 && a.size() != c.size()) {
    throw ConfigError(fmt::format("{}: 'a' needs one value or one per route ({}), got {}", source, c.size(), a.size()));
  }
  std::vector<pwl::BprFunction> out;
  for (std::size_t r = 0; r < c.size(); ++r) out.push_back({c[r], a.size() == 1 ? a[0] : a[r], b[r]});
  return out;
}

std::vector<pwl::BprFunction> ExperimentConfig::cycled_curves(std::size_t count) const {
  const auto base = curves();
  std::vector<pwl::BprFunction> out;
  for (std::size_t r = 0; r < count; ++r) out.push_back(base[r % base.size()]);
  return out;
}

mdp::ProblemConfig ExperimentConfig::problem() const {
  auto instance = [&] {
    if (network) {
      auto file = network::load_network(network->string());
      return mdp::Instance::from_network(std::move(file.network), file.splits);
    }
    const auto cs = curves();
    return mdp::Instance::bpr_routes(cs, approx);
  }();
  mdp::ProblemConfig p{std::move(instance), theta, x_max, toll_levels, aggregation};
  p.validate();
  return p;
}

std::string ExperimentConfig::manifest() const {
  std::string out;
  out += fmt::format("source = {}\n", source);
  out += fmt::format("kind = {}\n", to_string(kind));
  if (network) {
    out += fmt::format("network = {}\n", network->string());
  } else {
    out += fmt::format("c = {}\nb = {}\na = {}\n", join(c), join(b), join(a));
    out += fmt::format("epsilon = {}\neta = {}\nsearch_limit = {}\n", approx.epsilon, approx.eta, approx.search_limit);
  }
  out += fmt::format("theta = {}\nx_max = {}\ntolls = {}\n", theta, x_max, join(toll_levels));
  out += fmt::format("aggregation = {}\n", aggregation ? std::to_string(*aggregation) : "none");
  if (is_sweep(kind)) out += fmt::format("grid = {}\n", join(grid));
  out += fmt::format("seed = {}\nhorizon = {}\nout = {}\nthreads = {}\n", seed, horizon, output.string(), threads);
  return out;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  ExperimentConfig cfg;
  cfg.source = source;
  std::map<std::string, Line> seen;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  Line at{source, 0};
  while (std::getline(in, raw)) {
    ++at.number;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') at.fail(fmt::format("malformed section header '{}'", line));
      section = trim(line.substr(1, line.size() - 2));
      if (section != "instance" && section != "experiment") at.fail(fmt::format("unknown section '{}'", section));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) at.fail(fmt::format("expected 'key = value', got '{}'", line));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto known = key_sections().find(key);
    if (known == key_sections().end()) at.fail(fmt::format("unknown key '{}'", key));
    if (!section.empty() && known->second != section) {
      at.fail(fmt::format("key '{}' belongs in [{}], not [{}]", key, known->second, section));
    }
    if (const auto prev = seen.find(key); prev != seen.end()) {
      at.fail(fmt::format("key '{}' repeats line {}", key, prev->second.number));
    }
    seen.emplace(key, at);

    if (key == "c") {
      cfg.c = to_list(key, value, at);
    } else if (key == "b") {
      cfg.b = to_list(key, value, at);
    } else if (key == "a") {
      cfg.a = to_list(key, value, at);
    } else if (key == "epsilon") {
      cfg.approx.epsilon = to_double(key, value, at);
    } else if (key == "eta") {
      const auto eta = to_integer(key, value, at);
      if (eta < 1 || eta > 1'000'000) at.fail(fmt::format("eta must be in [1, 1000000], got {}", eta));
      cfg.approx.eta = static_cast<int>(eta);
    } else if (key == "search_limit") {
      cfg.approx.search_limit = to_double(key, value, at);
    } else if (key == "network") {
      if (value.empty()) at.fail("'network' needs a path");
      cfg.network = fs::path(value);
    } else if (key == "theta") {
      cfg.theta = to_double(key, value, at);
      if (!(cfg.theta > 0.0)) at.fail(fmt::format("theta must be > 0, got {}", value));
    } else if (key == "x_max") {
      const auto x = to_integer(key, value, at);
      if (x < 0 || x > 100'000) at.fail(fmt::format("x_max must be in [0, 100000], got {}", x));
      cfg.x_max = static_cast<int>(x);
    } else if (key == "tolls") {
      cfg.toll_levels = to_list(key, value, at);
    } else if (key == "aggregation") {
      if (value == "none") {
        cfg.aggregation.reset();
      } else {
        const auto n = to_integer(key, value, at);
        if (n < 1 || n > 100'000) at.fail(fmt::format("aggregation must be in [1, 100000], got {}", n));
        cfg.aggregation = static_cast<int>(n);
      }
    } else if (key == "kind") {
      const auto kind = parse_kind(value);
      if (!kind) at.fail(fmt::format("unknown kind '{}'", value));
      cfg.kind = *kind;
    } else if (key == "grid") {
      cfg.grid = to_list(key, value, at);
    } else if (key == "seed") {
      const auto s = to_integer(key, value, at);
      if (s < 0) at.fail("seed must be >= 0");
      cfg.seed = static_cast<std::uint64_t>(s);
    } else if (key == "horizon") {
      const auto h = to_integer(key, value, at);
      if (h < 1) at.fail("horizon must be >= 1");
      cfg.horizon = static_cast<std::uint64_t>(h);
    } else if (key == "out") {
      if (value.empty()) at.fail("'out' needs a directory");
      cfg.output = fs::path(value);
    } else if (key == "threads") {
      const auto t = to_integer(key, value, at);
      if (t < 1 || t > 1024) at.fail(fmt::format("threads must be in [1, 1024], got {}", t));
      cfg.threads = static_cast<unsigned>(t);
    }
  }

  auto fail_at = [&](const std::string& key, const std::string& msg) {
    const auto it = seen.find(key);
    if (it != seen.end()) it->second.fail(msg);
    throw ConfigError(fmt::format("{}: {}", source, msg));
  };
  try {
    cfg.approx.validate();
  } catch (const std::exception& e) {
    fail_at(seen.count("epsilon") ? "epsilon" : "search_limit", e.what());
  }
  for (std::size_t k = 0; k < cfg.toll_levels.size(); ++k) {
    if (!(cfg.toll_levels[k] > 0.0)) fail_at("tolls", "toll levels must be > 0");
    if (k > 0 && !(cfg.toll_levels[k] > cfg.toll_levels[k - 1])) fail_at("tolls", "toll levels must be strictly increasing");
  }
  if (!cfg.network) {
    if (cfg.c.size() != cfg.b.size()) fail_at(seen.count("b") ? "b" : "c", "'c' and 'b' need one value per route");
    if (cfg.a.size() != 1 && cfg.a.size() != cfg.c.size()) fail_at("a", "'a' needs one value or one per route");
    try {
      for (const auto& f : cfg.curves()) f.validate();
    } catch (const std::exception& e) {
      fail_at(seen.count("c") ? "c" : "b", e.what());
    }
  }
  if (cfg.aggregation && cfg.x_max < 1) fail_at("aggregation", "aggregation needs x_max >= 1");

  if (is_sweep(cfg.kind)) {
    if (!seen.count("grid")) cfg.grid = default_grid(cfg.kind);
    for (double v : cfg.grid) {
      if (!(v > 0.0) && !(cfg.kind == Kind::sweep_xmax && v == 0.0)) fail_at("grid", fmt::format("grid value {} must be > 0", v));
      const bool needs_integer = cfg.kind != Kind::sweep_theta;
      if (needs_integer && !integral(v)) fail_at("grid", fmt::format("{} needs integer grid values, got {}", to_string(cfg.kind), v));
      if (needs_integer && v > 100'000) fail_at("grid", fmt::format("grid value {} is too large", v));
      if (cfg.kind == Kind::sweep_aggregation && cfg.x_max < 1) fail_at("grid", "sweep-aggregation needs x_max >= 1");
    }
    if ((cfg.kind == Kind::sweep_eta || cfg.kind == Kind::sweep_routes) && cfg.network) {
      fail_at("network", fmt::format("{} needs inline routes, not a network file", to_string(cfg.kind)));
    }
  } else if (seen.count("grid")) {
    fail_at("grid", fmt::format("kind {} takes no grid", to_string(cfg.kind)));
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_config(ss.str(), path.string());
  if (cfg.network && cfg.network->is_relative()) cfg.network = path.parent_path() / *cfg.network;
  return cfg;
}

mdp::ProblemConfig sweep_problem(const ExperimentConfig& cfg, double value) {
  ExperimentConfig point = cfg;
  switch (cfg.kind) {
    case Kind::sweep_theta: point.theta = value; break;
    case Kind::sweep_eta: point.approx.eta = static_cast<int>(value); break;
    case Kind::sweep_xmax: point.x_max = static_cast<int>(value); break;
    case Kind::sweep_aggregation: point.aggregation = static_cast<int>(value); break;
    case Kind::sweep_routes: {
      const auto curves = cfg.cycled_curves(static_cast<std::size_t>(value));
      point.c.clear();
      point.b.clear();
      point.a.clear();
      for (const auto& f : curves) {
        point.c.push_back(f.c);
        point.b.push_back(f.b);
        point.a.push_back(f.a);
      }
      break;
    }
    default: break;
  }
  return point.problem();
}

PointResult solve_problem(const mdp::ProblemConfig& problem, unsigned threads) {
  PointResult p;
  const auto start = std::chrono::steady_clock::now();
  p.model = mdp::build_model(problem, threads);
  p.solve = solver::policy_iteration(p.model);
  p.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return p;
}

bool same_policy_on_shared_states(const PointResult& lhs, const PointResult& rhs) {
  std::size_t shared = 0;
  for (std::size_t i = 0; i < lhs.model.states.size(); ++i) {
    const auto& states = rhs.model.states;
    const auto it = std::find(states.begin(), states.end(), lhs.model.states[i]);
    if (it == states.end()) continue;
    ++shared;
    const auto j = static_cast<std::size_t>(it - states.begin());
    if (lhs.model.actions[lhs.solve.policy[i]] != rhs.model.actions[rhs.solve.policy[j]]) return false;
  }
  return shared > 0;
}

std::vector<PointResult> run_sweep(const ExperimentConfig& cfg) {
  if (!is_sweep(cfg.kind)) throw ConfigError(fmt::format("kind {} is not a sweep", to_string(cfg.kind)));
  std::vector<PointResult> points(cfg.grid.size());
  parallel_for(points.size(), cfg.threads, [&](std::size_t k) {
    try {
      points[k] = solve_problem(sweep_problem(cfg, cfg.grid[k]));
    } catch (const std::exception& e) {
      throw std::runtime_error(fmt::format("{} at grid value {}: {}", to_string(cfg.kind), cfg.grid[k], e.what()));
    }
    points[k].value = cfg.grid[k];
  });
  if (cfg.kind == Kind::sweep_aggregation) {
    ExperimentConfig base = cfg;
    base.aggregation.reset();
    const double truncated = solve_problem(base.problem(), cfg.threads).solve.lambda;
    for (auto& p : points) p.truncated_lambda = truncated;
  }
  for (std::size_t k = 1; k < points.size(); ++k) {
    points[k].policy_changed = !same_policy_on_shared_states(points[k - 1], points[k]);
  }
  return points;
}

std::string verify_text(const mdp::ProblemConfig& problem, const PointResult& point, std::uint64_t seed,
                        std::uint64_t horizon) {
  const auto ex = conditions::config_extrema(problem);
  const auto in = conditions::BoundInputs::from(problem);
  const auto spec = conditions::lyapunov_spec(problem);
  const auto& model = point.model;

  std::string out = "[instance]\n";
  out += fmt::format("theta = {}\nx_max = {}\ntolls = {}\nstates = {}\nactions = {}\nlambda = {}\n", problem.theta,
                     problem.x_max, join(problem.toll_levels), model.state_count(), model.action_count(),
                     point.solve.lambda);
  out += fmt::format("k0_max = {}\nk0_min = {}\nkr_max = {}\nkr_min = {}\n\n", ex.k0_max, ex.k0_min, join(ex.kr_max),
                     join(ex.kr_min));

  const conditions::ConditionReport reports[] = {
      conditions::foster_drift_report(model, spec),
      conditions::foster_drift_report(model, point.solve.policy, spec),
      conditions::bound_assumption_G(ex, in, &model),
      conditions::bound_assumption_V(ex, in, &model),
      conditions::check_rho_condition(ex, in),
  };
  for (const auto& r : reports) out += r.to_text() + "\n";

  out += "[toll_threshold]\n# state";
  for (std::size_t r = 0; r < ex.kr_max.size(); ++r) out += fmt::format(",route_{}", r + 1);
  out += '\n';
  for (double x : model.states) out += fmt::format("{},{}\n", x, fmt::join(conditions::toll_threshold_diagnostic(ex, problem.theta, x), ","));

  const auto sim = solver::simulate_policy(model, point.solve.policy, horizon, seed);
  out += "\n[return_to_zero]\n";
  out += fmt::format("seed = {}\nhorizon = {}\nexcursions = {}\nmean_return_time = {}\nmean_return_cost = {}\n", seed,
                     horizon, sim.excursions, sim.mean_return_time, sim.mean_return_cost);
  return out;
}

std::vector<std::string> run_experiment(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.output;
  fs::create_directories(dir);
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_file(dir / name, text);
    files.push_back(name);
  };

  if (is_sweep(cfg.kind)) {
    const auto points = run_sweep(cfg);
    const bool agg = cfg.kind == Kind::sweep_aggregation;
    std::string sweep = agg ? "value,lambda,iterations,policy_changed,truncated_lambda,gap\n"
                            : "value,lambda,iterations,policy_changed\n";
    std::string timing = "value,wall_ms\n";
    for (std::size_t k = 0; k < points.size(); ++k) {
      const auto& p = points[k];
      sweep += fmt::format("{},{},{},{}", p.value, p.solve.lambda, p.solve.iterations, p.policy_changed ? 1 : 0);
      if (agg) sweep += fmt::format(",{},{}", *p.truncated_lambda, std::abs(p.solve.lambda - *p.truncated_lambda));
      sweep += '\n';
      timing += fmt::format("{},{}\n", p.value, p.wall_ms);
      const std::string sub = fmt::format("point_{:02}", k + 1);
      emit(sub + "/policy.csv", solver::policy_csv(p.model, p.solve.policy));
      emit(sub + "/summary.csv", summary_csv(p));
    }
    emit("sweep.csv", sweep);
    emit("timing.csv", timing);
  } else {
    const auto problem = cfg.problem();
    const auto point = solve_problem(problem, cfg.threads);
    emit("policy.csv", solver::policy_csv(point.model, point.solve.policy));
    emit("timing.csv", fmt::format("wall_ms,solve_ms\n{},{}\n", point.wall_ms, point.solve.wall_ms));
    if (cfg.kind == Kind::simulate) {
      const double lambda = point.solve.lambda;
      const auto sim = solver::simulate_policy(point.model, point.solve.policy, cfg.horizon, cfg.seed,
                                               std::max<std::uint64_t>(1, cfg.horizon / 1000));
      emit("summary.csv", fmt::format("lambda,average_cost,standard_error,excursions,mean_return_time,mean_return_cost,seed,"
                                      "horizon\n{},{},{},{},{},{},{},{}\n",
                                      lambda, sim.average_cost, sim.standard_error, sim.excursions,
                                      sim.mean_return_time, sim.mean_return_cost, sim.seed, sim.horizon));
      std::string trace = "step,running_average\n";
      for (const auto& [step, avg] : sim.running_average) trace += fmt::format("{},{}\n", step, avg);
      emit("simulate.csv", trace);
    } else {
      emit("summary.csv", summary_csv(point));
    }
    if (cfg.kind == Kind::verify) emit("verify.txt", verify_text(problem, point, cfg.seed, cfg.horizon));
  }

  std::string manifest = cfg.manifest();
  manifest += fmt::format("files = {}\n", fmt::join(files, ", "));
  emit("manifest.txt", manifest);
  return files;
}

}  // namespace dtoll::experiment
