#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "dtoll/pwl.hpp"

namespace dtoll::equilibrium {

using pwl::PwlFunction;

class EquilibriumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wardrop assignment of one demand value across parallel routes.
struct EquilibriumSolution {
  std::vector<double> flows;
  std::vector<bool> used;
  std::vector<std::size_t> unused;       // indices of routes carrying no flow
  std::vector<std::size_t> active_segment;  // segment of each route's cost at its flow
  double w = 0.0;                        // common generalized cost of used routes
  double tstt = 0.0;

  std::size_t unused_count() const { return unused.size(); }
};

/// Solves the complementarity system for parallel routes with per-route tolls.
///
/// The aggregate flow sum_r max(0, route_r^-1(w - u_r)) is piecewise linear
/// and nondecreasing in w; it is assembled on its breakpoints and inverted at
/// the demand, so the result is exact up to rounding. Tolls must be finite
/// and nonnegative.
EquilibriumSolution solve_equilibrium(std::span<const PwlFunction> routes, double demand,
                                      std::span<const double> tolls);

/// Total system travel time: free-flow time plus toll on every unused route,
/// plus the equilibrium cost w once per used route.
double tstt(std::span<const PwlFunction> routes, double demand, std::span<const double> tolls);

/// One linear piece of a function of flow that is also linear in tolls:
/// value = k0 * x + sum_s kr[s] * u[s] + kc on [x_start, next x_start).
struct TsttPiece {
  double x_start = 0.0;
  double k0 = 0.0;
  std::vector<double> kr;
  double kc = 0.0;
};

/// Piecewise-linear TSTT in demand for one fixed toll vector.
///
/// The same representation also describes a route of a reduced network: its
/// cost is piecewise linear in its own flow and linear in the link tolls.
class TsttPwl {
 public:
  TsttPwl(std::vector<TsttPiece> pieces, std::vector<double> tolls);

  /// A single link with cost `cost` and its toll in `slot` of `slot_count`.
  static TsttPwl link(const PwlFunction& cost, std::size_t slot, std::size_t slot_count,
                      std::span<const double> tolls);

  double operator()(double x) const;
  double eval(double x) const { return (*this)(x); }
  std::size_t piece_index(double x) const;

  std::span<const TsttPiece> pieces() const { return pieces_; }
  std::span<const double> tolls() const { return tolls_; }
  std::size_t slot_count() const { return tolls_.size(); }

  /// The function of flow with tolls substituted.
  PwlFunction as_pwl() const;

  /// True when every k0 and every kr entry is strictly positive.
  bool strictly_positive() const;

  /// "x_start,k0,kr_1..kr_S,kc" table with a header row.
  std::string to_csv() const;

 private:
  std::vector<TsttPiece> pieces_;
  std::vector<double> tolls_;
};

/// Pointwise sum of two functions sharing a toll vector (series composition).
TsttPwl add(const TsttPwl& f, const TsttPwl& g);

/// x -> f(factor * x).
TsttPwl scale_argument(const TsttPwl& f, double factor);

/// Exact piecewise form of TSTT for parallel routes under fixed tolls.
///
/// On every demand interval the used set and the active segments are fixed,
/// so w = x/S + sum_used (u_r + alpha_r) / (c_r S) with S = sum_used 1/c_r.
/// A used route contributes (R - iota)/(c_r S) to its toll coefficient, an
/// unused one contributes 1.
TsttPwl extract_tstt_pwl(std::span<const PwlFunction> routes, std::span<const double> tolls);

/// Same for routes that are themselves piecewise in flow and linear in toll
/// slots; the coefficients follow by the chain rule. Throws if any resulting
/// coefficient is not strictly positive.
TsttPwl extract_tstt_pwl(std::span<const TsttPwl> routes);

/// Variant without the positivity check, for inner reductions where a slot
/// may not be reachable from this block.
TsttPwl combine_parallel(std::span<const TsttPwl> routes);

struct CoefficientExtrema {
  double k0_max = 0.0;
  double k0_min = 0.0;
  std::vector<double> kr_max;
  std::vector<double> kr_min;

  double sum_kr_max_times(double toll) const;
  double sum_kr_min_times(double toll) const;
};

/// Element-wise extrema of k0 and kr over every piece of every function.
CoefficientExtrema coefficient_extrema(std::span<const TsttPwl> functions);

}  // namespace dtoll::equilibrium
