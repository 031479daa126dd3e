#include "dtoll/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>

namespace dtoll::equilibrium {
namespace {

bool near_equal(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

void check_inputs(std::span<const PwlFunction> routes, std::span<const double> tolls) {
  if (routes.empty()) throw EquilibriumError("at least one route is required");
  if (tolls.size() != routes.size()) {
    throw EquilibriumError(fmt::format("expected {} tolls, got {}", routes.size(), tolls.size()));
  }
  for (double u : tolls) {
    if (!std::isfinite(u) || u < 0.0) throw EquilibriumError(fmt::format("toll must be finite and >= 0, got {}", u));
  }
}

double free_cost(const PwlFunction& route, double toll) { return route(0.0) + toll; }

// Flow a route attracts when the common cost is w.
double supply(const PwlFunction& route, double toll, double w) {
  if (w <= free_cost(route, toll)) return 0.0;
  return route.invert(std::max(w - toll, route(0.0)));
}

// Sorted costs at which some route starts a new segment or becomes used.
std::vector<double> cost_breakpoints(std::span<const PwlFunction> routes, std::span<const double> tolls) {
  std::vector<double> ws;
  for (std::size_t r = 0; r < routes.size(); ++r) {
    for (const auto& s : routes[r].segments()) ws.push_back(s(s.x_start) + tolls[r]);
  }
  std::sort(ws.begin(), ws.end());
  ws.erase(std::unique(ws.begin(), ws.end()), ws.end());
  return ws;
}

double total_supply(std::span<const PwlFunction> routes, std::span<const double> tolls, double w) {
  double total = 0.0;
  for (std::size_t r = 0; r < routes.size(); ++r) total += supply(routes[r], tolls[r], w);
  return total;
}

// d(total supply)/dw just above w.
double supply_slope_above(std::span<const PwlFunction> routes, std::span<const double> tolls, double w) {
  double slope = 0.0;
  for (std::size_t r = 0; r < routes.size(); ++r) {
    if (w < free_cost(routes[r], tolls[r])) continue;
    // Same expression as cost_breakpoints, so a breakpoint w selects the
    // segment to its right.
    std::size_t k = 0;
    while (k + 1 < routes[r].size()) {
      const auto& next = routes[r][k + 1];
      if (next(next.x_start) + tolls[r] > w) break;
      ++k;
    }
    slope += 1.0 / routes[r][k].slope;
  }
  return slope;
}

}  // namespace

EquilibriumSolution solve_equilibrium(std::span<const PwlFunction> routes, double demand,
                                      std::span<const double> tolls) {
  check_inputs(routes, tolls);
  if (!std::isfinite(demand) || demand < 0.0) {
    throw EquilibriumError(fmt::format("demand must be finite and >= 0, got {}", demand));
  }
  const std::size_t R = routes.size();
  EquilibriumSolution sol;
  sol.flows.assign(R, 0.0);
  sol.used.assign(R, false);
  sol.active_segment.assign(R, 0);

  double w = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < R; ++r) w = std::min(w, free_cost(routes[r], tolls[r]));

  if (demand > 0.0) {
    const auto ws = cost_breakpoints(routes, tolls);
    // Supply is linear between consecutive cost breakpoints.
    double base = ws.front();
    for (std::size_t b = 1; b <= ws.size(); ++b) {
      if (b < ws.size() && total_supply(routes, tolls, ws[b]) < demand) {
        base = ws[b];
        continue;
      }
      const double slope = supply_slope_above(routes, tolls, base);
      w = base + (demand - total_supply(routes, tolls, base)) / slope;
      if (b < ws.size()) w = std::min(w, ws[b]);
      break;
    }
  }
  sol.w = w;

  double tstt_value = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    const double x = demand > 0.0 ? supply(routes[r], tolls[r], w) : 0.0;
    sol.flows[r] = x;
    sol.used[r] = x > 0.0;
    sol.active_segment[r] = routes[r].segment_index(x);
    if (sol.used[r]) {
      tstt_value += w;
    } else {
      sol.unused.push_back(r);
      tstt_value += free_cost(routes[r], tolls[r]);
    }
  }
  sol.tstt = tstt_value;
  return sol;
}

double tstt(std::span<const PwlFunction> routes, double demand, std::span<const double> tolls) {
  return solve_equilibrium(routes, demand, tolls).tstt;
}

// --- TsttPwl ----------------------------------------------------------------

TsttPwl::TsttPwl(std::vector<TsttPiece> pieces, std::vector<double> tolls)
    : pieces_(std::move(pieces)), tolls_(std::move(tolls)) {
  if (pieces_.empty()) throw EquilibriumError("TSTT function needs at least one piece");
  if (pieces_.front().x_start != 0.0) throw EquilibriumError("first TSTT piece must start at x = 0");
  for (std::size_t k = 0; k < pieces_.size(); ++k) {
    const auto& p = pieces_[k];
    if (p.kr.size() != tolls_.size()) {
      throw EquilibriumError(fmt::format("piece {} has {} toll coefficients, expected {}", k, p.kr.size(), tolls_.size()));
    }
    if (!(p.k0 > 0.0)) throw EquilibriumError(fmt::format("piece {} has non-positive flow coefficient {}", k, p.k0));
    for (double c : p.kr) {
      if (!(c >= 0.0)) throw EquilibriumError(fmt::format("piece {} has a negative toll coefficient", k));
    }
    if (k > 0) {
      if (!(p.x_start > pieces_[k - 1].x_start)) throw EquilibriumError("TSTT piece starts must increase");
      auto value = [&](const TsttPiece& q) {
        return q.k0 * p.x_start + std::inner_product(q.kr.begin(), q.kr.end(), tolls_.begin(), 0.0) + q.kc;
      };
      const double left = value(pieces_[k - 1]);
      const double right = value(p);
      if (!near_equal(left, right, 1e-9)) {
        throw EquilibriumError(fmt::format("TSTT discontinuity at x = {}: {} vs {}", p.x_start, left, right));
      }
    }
  }
}

TsttPwl TsttPwl::link(const PwlFunction& cost, std::size_t slot, std::size_t slot_count,
                      std::span<const double> tolls) {
  if (slot >= slot_count) throw EquilibriumError("toll slot out of range");
  std::vector<TsttPiece> pieces;
  for (const auto& s : cost.segments()) {
    TsttPiece p{s.x_start, s.slope, std::vector<double>(slot_count, 0.0), s.intercept};
    p.kr[slot] = 1.0;
    pieces.push_back(std::move(p));
  }
  return TsttPwl(std::move(pieces), std::vector<double>(tolls.begin(), tolls.end()));
}

std::size_t TsttPwl::piece_index(double x) const {
  auto it = std::upper_bound(pieces_.begin(), pieces_.end(), x,
                             [](double v, const TsttPiece& p) { return v < p.x_start; });
  return static_cast<std::size_t>(it - pieces_.begin()) - 1;
}

double TsttPwl::operator()(double x) const {
  if (!std::isfinite(x) || x < 0.0) throw EquilibriumError(fmt::format("demand must be finite and >= 0, got {}", x));
  const auto& p = pieces_[piece_index(x)];
  return p.k0 * x + std::inner_product(p.kr.begin(), p.kr.end(), tolls_.begin(), 0.0) + p.kc;
}

PwlFunction TsttPwl::as_pwl() const {
  std::vector<pwl::Segment> segs;
  segs.reserve(pieces_.size());
  for (const auto& p : pieces_) {
    segs.push_back({p.x_start, p.k0, std::inner_product(p.kr.begin(), p.kr.end(), tolls_.begin(), 0.0) + p.kc});
  }
  // Continuity here is only as tight as the piece arithmetic; snap intercepts.
  for (std::size_t k = 1; k < segs.size(); ++k) {
    const double x = segs[k].x_start;
    segs[k].intercept = segs[k - 1](x) - segs[k].slope * x;
  }
  return PwlFunction(std::move(segs));
}

bool TsttPwl::strictly_positive() const {
  return std::all_of(pieces_.begin(), pieces_.end(), [](const TsttPiece& p) {
    return p.k0 > 0.0 && std::all_of(p.kr.begin(), p.kr.end(), [](double c) { return c > 0.0; });
  });
}

std::string TsttPwl::to_csv() const {
  std::string out = "x_start,k0";
  for (std::size_t s = 0; s < tolls_.size(); ++s) out += fmt::format(",kr_{}", s + 1);
  out += ",kc\n";
  for (const auto& p : pieces_) {
    out += fmt::format("{},{}", p.x_start, p.k0);
    for (double c : p.kr) out += fmt::format(",{}", c);
    out += fmt::format(",{}\n", p.kc);
  }
  return out;
}

TsttPwl add(const TsttPwl& f, const TsttPwl& g) {
  if (f.slot_count() != g.slot_count() || !std::equal(f.tolls().begin(), f.tolls().end(), g.tolls().begin())) {
    throw EquilibriumError("series composition needs a common toll vector");
  }
  std::vector<double> xs;
  for (const auto& p : f.pieces()) xs.push_back(p.x_start);
  for (const auto& p : g.pieces()) xs.push_back(p.x_start);
  std::sort(xs.begin(), xs.end());
  std::vector<TsttPiece> pieces;
  for (double x : xs) {
    if (!pieces.empty() && near_equal(pieces.back().x_start, x, pwl::kBreakpointTolerance)) continue;
    const auto& a = f.pieces()[f.piece_index(x)];
    const auto& b = g.pieces()[g.piece_index(x)];
    TsttPiece p{x, a.k0 + b.k0, a.kr, a.kc + b.kc};
    for (std::size_t s = 0; s < p.kr.size(); ++s) p.kr[s] += b.kr[s];
    pieces.push_back(std::move(p));
  }
  return TsttPwl(std::move(pieces), std::vector<double>(f.tolls().begin(), f.tolls().end()));
}

TsttPwl scale_argument(const TsttPwl& f, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw EquilibriumError("argument scale must be finite and > 0");
  std::vector<TsttPiece> pieces(f.pieces().begin(), f.pieces().end());
  for (auto& p : pieces) {
    p.x_start /= factor;
    p.k0 *= factor;
  }
  return TsttPwl(std::move(pieces), std::vector<double>(f.tolls().begin(), f.tolls().end()));
}

TsttPwl combine_parallel(std::span<const TsttPwl> routes) {
  if (routes.empty()) throw EquilibriumError("at least one route is required");
  const std::size_t R = routes.size();
  const std::size_t slots = routes.front().slot_count();
  std::vector<PwlFunction> costs;
  costs.reserve(R);
  for (const auto& r : routes) {
    if (r.slot_count() != slots) throw EquilibriumError("routes disagree on the number of toll slots");
    costs.push_back(r.as_pwl());
  }
  const std::vector<double> zero(R, 0.0);

  // Demand breakpoints are the images of the cost breakpoints.
  std::vector<double> xs{0.0};
  for (double w : cost_breakpoints(costs, zero)) {
    const double x = total_supply(costs, zero, w);
    if (x > 0.0 && !near_equal(x, xs.back(), pwl::kBreakpointTolerance)) xs.push_back(x);
  }

  std::vector<TsttPiece> pieces;
  for (std::size_t b = 0; b < xs.size(); ++b) {
    const double lo = xs[b];
    const double probe = b + 1 < xs.size() ? 0.5 * (lo + xs[b + 1]) : lo + std::max(1.0, lo);
    const auto sol = solve_equilibrium(costs, probe, zero);
    double inv_sum = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      if (sol.used[r]) inv_sum += 1.0 / routes[r].pieces()[sol.active_segment[r]].k0;
    }
    const double n_used = static_cast<double>(R - sol.unused_count());
    TsttPiece piece{lo, n_used / inv_sum, std::vector<double>(slots, 0.0), 0.0};
    for (std::size_t r = 0; r < R; ++r) {
      const auto& src = sol.used[r] ? routes[r].pieces()[sol.active_segment[r]] : routes[r].pieces().front();
      const double weight = sol.used[r] ? n_used / (inv_sum * src.k0) : 1.0;
      for (std::size_t s = 0; s < slots; ++s) piece.kr[s] += weight * src.kr[s];
      piece.kc += weight * src.kc;
    }
    pieces.push_back(std::move(piece));
  }
  return TsttPwl(std::move(pieces), std::vector<double>(routes.front().tolls().begin(), routes.front().tolls().end()));
}

TsttPwl extract_tstt_pwl(std::span<const TsttPwl> routes) {
  TsttPwl out = combine_parallel(routes);
  for (std::size_t k = 0; k < out.pieces().size(); ++k) {
    const auto& p = out.pieces()[k];
    for (std::size_t s = 0; s < p.kr.size(); ++s) {
      if (!(p.kr[s] > 0.0)) {
        throw EquilibriumError(fmt::format("toll coefficient {} on piece {} is not positive ({})", s + 1, k, p.kr[s]));
      }
    }
  }
  return out;
}

TsttPwl extract_tstt_pwl(std::span<const PwlFunction> routes, std::span<const double> tolls) {
  check_inputs(routes, tolls);
  std::vector<TsttPwl> links;
  links.reserve(routes.size());
  for (std::size_t r = 0; r < routes.size(); ++r) links.push_back(TsttPwl::link(routes[r], r, routes.size(), tolls));
  return extract_tstt_pwl(std::span<const TsttPwl>(links));
}

double CoefficientExtrema::sum_kr_max_times(double toll) const {
  return toll * std::accumulate(kr_max.begin(), kr_max.end(), 0.0);
}

double CoefficientExtrema::sum_kr_min_times(double toll) const {
  return toll * std::accumulate(kr_min.begin(), kr_min.end(), 0.0);
}

CoefficientExtrema coefficient_extrema(std::span<const TsttPwl> functions) {
  if (functions.empty()) throw EquilibriumError("coefficient extrema need at least one function");
  const std::size_t slots = functions.front().slot_count();
  CoefficientExtrema ex;
  ex.k0_max = -std::numeric_limits<double>::infinity();
  ex.k0_min = std::numeric_limits<double>::infinity();
  ex.kr_max.assign(slots, -std::numeric_limits<double>::infinity());
  ex.kr_min.assign(slots, std::numeric_limits<double>::infinity());
  for (const auto& f : functions) {
    if (f.slot_count() != slots) throw EquilibriumError("functions disagree on the number of toll slots");
    for (const auto& p : f.pieces()) {
      ex.k0_max = std::max(ex.k0_max, p.k0);
      ex.k0_min = std::min(ex.k0_min, p.k0);
      for (std::size_t s = 0; s < slots; ++s) {
        ex.kr_max[s] = std::max(ex.kr_max[s], p.kr[s]);
        ex.kr_min[s] = std::min(ex.kr_min[s], p.kr[s]);
      }
    }
  }
  return ex;
}

}  // namespace dtoll::equilibrium
