#include "dtoll/conditions.hpp"

#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <stdexcept>

namespace dtoll::conditions {
namespace {

constexpr double kSlack = 1e-9;

double sum_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

void check_inputs(const CoefficientExtrema& ex, const BoundInputs& in) {
  if (!(ex.k0_min > 0.0) || !(ex.k0_max >= ex.k0_min)) throw std::invalid_argument("flow coefficients must satisfy 0 < k0_min <= k0_max");
  if (!(in.theta > 0.0)) throw std::invalid_argument("theta must be > 0");
  if (!(in.tau_max >= in.tau_min)) throw std::invalid_argument("tau_max must be >= tau_min");
}

struct DriftScan {
  double worst_inside = -std::numeric_limits<double>::infinity();
  std::size_t inside_state = 0, inside_action = 0;
  double worst_margin = std::numeric_limits<double>::infinity();  // v_i - E v - epsilon outside F
  std::size_t outside_state = 0, outside_action = 0;
  std::size_t outside_count = 0;
  double truncation_gap = 0.0;

  void visit(const MdpModel& model, const LyapunovSpec& spec, std::size_t i, std::size_t a) {
    const auto ii = static_cast<Eigen::Index>(i);
    const auto aa = static_cast<Eigen::Index>(a);
    const double x = model.states[i];
    const double expected = spec.expected_weight(model.tstt(ii, aa));
    double truncated = 0.0;
    for (std::size_t j = 0; j < model.state_count(); ++j) {
      truncated += model.P[a](ii, static_cast<Eigen::Index>(j)) * spec.weight(model.states[j]);
    }
    truncation_gap = std::max(truncation_gap, std::abs(expected - truncated));
    if (spec.in_finite_set(x)) {
      if (expected > worst_inside) {
        worst_inside = expected;
        inside_state = i;
        inside_action = a;
      }
    } else {
      ++outside_count;
      const double margin = spec.weight(x) - expected - spec.epsilon;
      if (margin < worst_margin) {
        worst_margin = margin;
        outside_state = i;
        outside_action = a;
      }
    }
  }

  ConditionReport report(const LyapunovSpec& spec, std::string name) const {
    ConditionReport r;
    r.name = std::move(name);
    r.bound = spec.expected_weight(spec.tstt_origin);
    const bool inside_ok = worst_inside <= r.bound + kSlack && std::isfinite(worst_inside);
    const bool outside_ok = outside_count == 0 || worst_margin >= -kSlack;
    r.holds = inside_ok && outside_ok;
    r.attained = worst_inside;
    if (outside_count > 0 && !outside_ok) {
      r.witness_state = outside_state;
      r.witness_action = outside_action;
    } else {
      r.witness_state = inside_state;
      r.witness_action = inside_action;
    }
    r.details.push_back(fmt::format("threshold {} (states below it form F), epsilon {}", spec.threshold, spec.epsilon));
    r.details.push_back(fmt::format("inside F: largest expected weight {} at state {}, action {}; bound {}", worst_inside,
                                    inside_state, inside_action + 1, r.bound));
    if (outside_count == 0) {
      r.details.push_back("outside F: no state of the model lies beyond the threshold");
    } else {
      r.details.push_back(fmt::format("outside F: {} (state, action) pairs, smallest drift surplus {} at state {}, action {}",
                                      outside_count, worst_margin, outside_state, outside_action + 1));
    }
    r.details.push_back(fmt::format("largest gap between truncated and untruncated expected weight {}", truncation_gap));
    return r;
  }
};

}  // namespace

LyapunovSpec lyapunov_spec(const CoefficientExtrema& ex, const BoundInputs& in, double tstt_origin) {
  check_inputs(ex, in);
  LyapunovSpec s;
  s.k0_max = ex.k0_max;
  s.k0_min = ex.k0_min;
  s.toll_term = ex.sum_kr_max_times(in.tau_max);
  s.theta = in.theta;
  s.threshold = std::sqrt(in.theta / ex.k0_min) + 1.0;
  s.epsilon = ex.k0_max * (s.threshold - in.theta / (ex.k0_min * s.threshold));
  s.tstt_origin = tstt_origin;
  return s;
}

CoefficientExtrema config_extrema(const mdp::ProblemConfig& cfg) {
  cfg.validate();
  std::vector<equilibrium::TsttPwl> functions;
  for (std::size_t a = 0; a < cfg.action_count(); ++a) functions.push_back(cfg.instance.tstt_pwl(cfg.action_tolls(a)));
  return equilibrium::coefficient_extrema(functions);
}

LyapunovSpec lyapunov_spec(const mdp::ProblemConfig& cfg) {
  const auto lowest = cfg.action_tolls(0);
  return lyapunov_spec(config_extrema(cfg), BoundInputs::from(cfg), cfg.instance.tstt(0.0, lowest));
}

std::string ConditionReport::to_text() const {
  std::string out = fmt::format("[{}]\nholds = {}\nbound = {}\nattained = {}\n", name, holds ? "yes" : "no", bound, attained);
  if (witness_state) out += fmt::format("witness_state = {}\n", *witness_state);
  if (witness_action) out += fmt::format("witness_action = {}\n", *witness_action + 1);
  for (const auto& d : details) out += fmt::format("# {}\n", d);
  return out;
}

ConditionReport foster_drift_report(const MdpModel& model, const solver::Policy& policy, const LyapunovSpec& spec) {
  if (policy.size() != model.state_count()) throw std::invalid_argument("policy size does not match the model");
  DriftScan scan;
  for (std::size_t i = 0; i < model.state_count(); ++i) scan.visit(model, spec, i, policy[i]);
  return scan.report(spec, "foster_drift");
}

ConditionReport foster_drift_report(const MdpModel& model, const LyapunovSpec& spec) {
  DriftScan scan;
  for (std::size_t i = 0; i < model.state_count(); ++i) {
    for (std::size_t a = 0; a < model.action_count(); ++a) scan.visit(model, spec, i, a);
  }
  return scan.report(spec, "foster_drift_all_policies");
}

ConditionReport bound_assumption_G(const CoefficientExtrema& ex, const BoundInputs& in, const MdpModel* model) {
  check_inputs(ex, in);
  ConditionReport r;
  r.name = "assumption_G";
  const double kr_min = sum_of(ex.kr_min);
  const double kr_max = sum_of(ex.kr_max);
  const double v0 = kr_max * in.tau_max;
  if (!(in.tau_min > 0.0) || !(kr_min > 0.0)) {
    r.bound = std::numeric_limits<double>::infinity();
    r.details.push_back("tau_min and every toll coefficient must be > 0 for a finite bound");
    return r;
  }
  const double high = ex.k0_max * in.theta / (kr_min * in.tau_max) + kr_max * in.tau_max;
  const double low = ex.k0_max * in.theta / (kr_min * in.tau_min) + kr_max * in.tau_min;
  r.bound = std::max(high, low) / v0;
  r.details.push_back(in.tau_min == in.tau_max
                          ? fmt::format("single toll level: one corner value {}", high)
                          : fmt::format("corner at tau_max {}, corner at tau_min {}", high, low));
  r.holds = std::isfinite(r.bound);
  if (model) {
    r.attained = 0.0;
    const double k0 = ex.k0_max, toll = kr_max * in.tau_max;
    for (std::size_t i = 0; i < model->state_count(); ++i) {
      for (std::size_t a = 0; a < model->action_count(); ++a) {
        const double ratio =
            std::abs(model->g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a))) / (k0 * model->states[i] + toll);
        if (ratio > r.attained) {
          r.attained = ratio;
          r.witness_state = i;
          r.witness_action = a;
        }
      }
    }
    r.holds = r.holds && r.attained <= r.bound + kSlack;
    r.details.push_back(fmt::format("largest g(i,u)/v_i in the model {}", r.attained));
  }
  return r;
}

double v_ratio_envelope(const CoefficientExtrema& ex, const BoundInputs& in, double i) {
  const double kr_min = sum_of(ex.kr_min);
  const double toll = sum_of(ex.kr_max) * in.tau_max;
  return (ex.k0_max * in.theta / (ex.k0_min * i + kr_min * in.tau_min) + toll) / (ex.k0_max * i + toll);
}

ConditionReport bound_assumption_V(const CoefficientExtrema& ex, const BoundInputs& in, const MdpModel* model) {
  check_inputs(ex, in);
  ConditionReport r;
  r.name = "assumption_V";
  if (!(in.tau_min > 0.0) || !(sum_of(ex.kr_min) > 0.0)) {
    r.bound = std::numeric_limits<double>::infinity();
    r.details.push_back("tau_min and every toll coefficient must be > 0 for a finite bound");
    return r;
  }
  r.bound = v_ratio_envelope(ex, in, 0.0);
  r.holds = std::isfinite(r.bound);
  r.details.push_back(fmt::format("envelope at i = 0, 1, 5: {}, {}, {}", r.bound, v_ratio_envelope(ex, in, 1.0),
                                  v_ratio_envelope(ex, in, 5.0)));
  if (model) {
    const double k0 = ex.k0_max, toll = sum_of(ex.kr_max) * in.tau_max;
    r.attained = 0.0;
    for (std::size_t i = 0; i < model->state_count(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      for (std::size_t a = 0; a < model->action_count(); ++a) {
        double expected = 0.0;
        for (std::size_t j = 0; j < model->state_count(); ++j) {
          expected += model->P[a](ii, static_cast<Eigen::Index>(j)) * (k0 * model->states[j] + toll);
        }
        const double ratio = expected / (k0 * model->states[i] + toll);
        if (ratio > r.attained) {
          r.attained = ratio;
          r.witness_state = i;
          r.witness_action = a;
        }
      }
    }
    r.holds = r.holds && r.attained <= r.bound + kSlack;
    r.details.push_back(fmt::format("largest V_i/v_i in the model {}", r.attained));
  }
  return r;
}

ConditionReport check_rho_condition(double k0_max, double sum_kr_min, double sum_kr_max, double theta, double tau_min,
                                    double tau_max) {
  ConditionReport r;
  r.name = "rho_condition";
  const double scale = sum_kr_min * tau_min;
  r.attained = k0_max * theta / scale;
  r.bound = std::exp(-theta / scale) * sum_kr_max * tau_max;
  r.holds = r.attained <= r.bound;
  r.details.push_back(fmt::format("left side {}, right side {}, margin {}", r.attained, r.bound, r.bound - r.attained));
  return r;
}

ConditionReport check_rho_condition(const CoefficientExtrema& ex, const BoundInputs& in) {
  return check_rho_condition(ex.k0_max, sum_of(ex.kr_min), sum_of(ex.kr_max), in.theta, in.tau_min, in.tau_max);
}

std::vector<double> toll_threshold_diagnostic(const CoefficientExtrema& ex, double theta, double x) {
  std::vector<double> out;
  for (std::size_t r = 0; r < ex.kr_max.size(); ++r) {
    out.push_back(std::sqrt(ex.k0_max * ex.kr_min[r] * theta / ex.kr_max[r]) - ex.k0_min * x);
  }
  return out;
}

}  // namespace dtoll::conditions
