#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtoll/mdp.hpp"
#include "dtoll/pwl.hpp"
#include "dtoll/solver.hpp"

namespace dtoll::experiment {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kind { solve, verify, simulate, sweep_theta, sweep_eta, sweep_xmax, sweep_aggregation, sweep_routes };

std::string to_string(Kind kind);
std::optional<Kind> parse_kind(const std::string& text);
bool is_sweep(Kind kind);

struct ExperimentConfig {
  std::string source = "<config>";
  Kind kind = Kind::solve;

  // Inline routes, one BPR curve c x^a + b each. Ignored when `network` is set.
  std::vector<double> c{1.0, 2.0};
  std::vector<double> b{0.5, 1.0};
  std::vector<double> a{4.0};  // one value for every route, or one per route
  pwl::ApproxConfig approx;
  std::optional<std::filesystem::path> network;

  double theta = 100.0;
  int x_max = 15;
  std::vector<double> toll_levels{2.0, 3.0, 4.0};
  std::optional<int> aggregation;

  std::vector<double> grid;
  std::uint64_t seed = 1;
  std::uint64_t horizon = 1'000'000;
  std::filesystem::path output = "out";
  unsigned threads = 1;

  /// Route curves after cycling `a` and checking lengths.
  std::vector<pwl::BprFunction> curves() const;
  /// The first `count` routes, cycling the configured curves.
  std::vector<pwl::BprFunction> cycled_curves(std::size_t count) const;
  mdp::ProblemConfig problem() const;
  /// Resolved settings, one "key = value" line each.
  std::string manifest() const;
};

/// Key-value text with optional [instance] and [experiment] headers; '#'
/// starts a comment. Errors name the source and line.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Default grid for each sweep kind, used when the config gives none.
std::vector<double> default_grid(Kind kind);

struct PointResult {
  double value = 0.0;
  mdp::MdpModel model;
  solver::SolveResult solve;
  bool policy_changed = false;
  double wall_ms = 0.0;  // model construction and solve
  std::optional<double> truncated_lambda;  // sweep-aggregation only
};

/// The configured problem for one grid value of a sweep.
mdp::ProblemConfig sweep_problem(const ExperimentConfig& cfg, double value);

/// Builds and solves the configured model.
PointResult solve_problem(const mdp::ProblemConfig& problem, unsigned threads = 1);

/// Runs every grid point, in parallel when threads > 1, and flags policy
/// changes against the previous point on shared states.
std::vector<PointResult> run_sweep(const ExperimentConfig& cfg);

/// Same toll vector at every state value the two models share, and at least
/// one shared state.
bool same_policy_on_shared_states(const PointResult& lhs, const PointResult& rhs);

/// Full text of the verify report for a solved point.
std::string verify_text(const mdp::ProblemConfig& problem, const PointResult& point, std::uint64_t seed,
                        std::uint64_t horizon);

/// Writes every output file for the configured kind into cfg.output and
/// returns the file names, manifest last.
std::vector<std::string> run_experiment(const ExperimentConfig& cfg);

}  // namespace dtoll::experiment
