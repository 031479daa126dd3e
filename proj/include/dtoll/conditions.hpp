#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dtoll/equilibrium.hpp"
#include "dtoll/mdp.hpp"
#include "dtoll/solver.hpp"

namespace dtoll::conditions {

using equilibrium::CoefficientExtrema;
using mdp::MdpModel;

/// Scalars shared by the bound formulas.
struct BoundInputs {
  double theta = 0.0;
  double tau_min = 0.0;
  double tau_max = 0.0;

  static BoundInputs from(const mdp::ProblemConfig& cfg) { return {cfg.theta, cfg.tau_min(), cfg.tau_max()}; }
};

/// Linear Lyapunov weights v_i = k0_max i + sum_r kr_max tau_max with the
/// finite set F = {i : i < sqrt(theta / k0_min) + 1} and drift margin
/// epsilon = k0_max (T - theta / (k0_min T)), T the threshold.
struct LyapunovSpec {
  double k0_max = 0.0;
  double k0_min = 0.0;
  double toll_term = 0.0;  // sum_r kr_max tau_max
  double theta = 0.0;
  double threshold = 0.0;
  double epsilon = 0.0;
  double tstt_origin = 0.0;  // TSTT(0, u_min), the smallest TSTT of any state and action

  double weight(double i) const { return k0_max * i + toll_term; }
  bool in_finite_set(double i) const { return i < threshold; }
  /// sum_j p_ij v_j for untruncated Poisson transitions with mean theta / tstt.
  double expected_weight(double tstt) const { return k0_max * theta / tstt + toll_term; }
};

LyapunovSpec lyapunov_spec(const CoefficientExtrema& ex, const BoundInputs& in, double tstt_origin);

/// Coefficient extrema over the TSTT functions of every action.
CoefficientExtrema config_extrema(const mdp::ProblemConfig& cfg);

/// Spec for a config, with TSTT(0, u_min) taken from its lowest toll vector.
LyapunovSpec lyapunov_spec(const mdp::ProblemConfig& cfg);

struct ConditionReport {
  std::string name;
  bool holds = false;
  double bound = 0.0;
  double attained = 0.0;
  std::optional<std::size_t> witness_state;
  std::optional<std::size_t> witness_action;
  std::vector<std::string> details;

  std::string to_text() const;
};

/// Drift check for one stationary policy: inside F the expected weight must
/// stay under k0_max theta / tstt(0, u_min) + toll_term, outside F it must
/// drop by at least epsilon. Expectations are untruncated; the gap to the
/// truncated rows is reported in the details.
ConditionReport foster_drift_report(const MdpModel& model, const solver::Policy& policy, const LyapunovSpec& spec);

/// Same check over every action at every state, which covers all
/// stationary policies at once.
ConditionReport foster_drift_report(const MdpModel& model, const LyapunovSpec& spec);

/// Closed-form bound on max_i G_i / v_i (taken at i = 0 from the two toll
/// corners) and, with a model, the largest g(i,u) / v_i found in it.
ConditionReport bound_assumption_G(const CoefficientExtrema& ex, const BoundInputs& in, const MdpModel* model = nullptr);

/// Upper envelope E'_i of V_i / v_i; decreasing in i.
double v_ratio_envelope(const CoefficientExtrema& ex, const BoundInputs& in, double i);

/// Bound E'_0 on max_i V_i / v_i and, with a model, the largest
/// max_u sum_j p_ij(u) v_j / v_i found in it.
ConditionReport bound_assumption_V(const CoefficientExtrema& ex, const BoundInputs& in, const MdpModel* model = nullptr);

/// k0_max theta / S_l <= exp(-theta / S_l) * S_m with S_l = sum kr_min tau_min
/// and S_m = sum kr_max tau_max. `bound` holds the right side, `attained`
/// the left.
ConditionReport check_rho_condition(double k0_max, double sum_kr_min, double sum_kr_max, double theta, double tau_min,
                                    double tau_max);
ConditionReport check_rho_condition(const CoefficientExtrema& ex, const BoundInputs& in);

/// sqrt(k0_max kr_min_r theta / kr_max_r) - k0_min x for every route r.
std::vector<double> toll_threshold_diagnostic(const CoefficientExtrema& ex, double theta, double x);

}  // namespace dtoll::conditions
