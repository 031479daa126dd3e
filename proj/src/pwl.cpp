#include "dtoll/pwl.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <sstream>

namespace dtoll::pwl {
namespace {

bool near_equal(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

// Root of a function that is positive at `lo` and strictly decreasing past
// it. The bracket is grown by doubling until the sign changes, then refined
// by Newton steps that fall back to bisection when they leave the bracket.
template <typename F, typename DF, typename Scale>
double decreasing_root(F fn, DF dfn, Scale scale, double lo, double limit, const char* what) {
  double step = std::max(1.0, std::abs(lo));
  double hi = lo + step;
  while (fn(hi) >= 0.0) {
    step *= 2.0;
    hi = lo + step;
    if (!(hi <= limit)) {
      throw PwlError(fmt::format("{}: no sign change below search limit {}", what, limit));
    }
  }
  double t = hi;
  for (int iter = 0; iter < 500; ++iter) {
    const double v = fn(t);
    if (std::abs(v) <= 1e-10 * scale(t)) return t;
    if (v > 0.0) {
      lo = t;
    } else {
      hi = t;
    }
    const double d = dfn(t);
    double next = (d != 0.0 && std::isfinite(d)) ? t - v / d : lo;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == t || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(hi)) {
      if (std::abs(fn(next)) <= 1e-8 * scale(next)) return next;
      break;
    }
    t = next;
  }
  throw PwlError(fmt::format("{}: root search did not converge", what));
}

}  // namespace

void BprFunction::validate() const {
  if (!(c > 0.0) || !std::isfinite(c)) throw PwlError(fmt::format("BPR coefficient c must be > 0, got {}", c));
  if (!(a >= 1.0) || !std::isfinite(a)) throw PwlError(fmt::format("BPR exponent a must be >= 1, got {}", a));
  if (!(b >= 0.0) || !std::isfinite(b)) throw PwlError(fmt::format("BPR free-flow time b must be >= 0, got {}", b));
}

double BprFunction::operator()(double x) const { return c * std::pow(x, a) + b; }

double BprFunction::derivative(double x) const { return c * a * std::pow(x, a - 1.0); }

double BprFunction::second_derivative(double x) const {
  if (a == 1.0) return 0.0;
  return c * a * (a - 1.0) * std::pow(x, a - 2.0);
}

void ApproxConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw PwlError(fmt::format("epsilon must be > 0, got {}", epsilon));
  if (eta < 1) throw PwlError(fmt::format("eta must be >= 1, got {}", eta));
  if (!(search_limit > 0.0)) throw PwlError("search_limit must be > 0");
}

PwlFunction::PwlFunction(std::vector<Segment> segments) : segments_(std::move(segments)) {
  if (segments_.empty()) throw PwlError("piecewise-linear function needs at least one segment");
  if (segments_.front().x_start != 0.0) throw PwlError("first segment must start at x = 0");
  for (std::size_t k = 0; k < segments_.size(); ++k) {
    const Segment& s = segments_[k];
    if (!std::isfinite(s.x_start) || !std::isfinite(s.slope) || !std::isfinite(s.intercept)) {
      throw PwlError(fmt::format("segment {} has non-finite data", k));
    }
    if (!(s.slope > 0.0)) throw PwlError(fmt::format("segment {} slope must be > 0, got {}", k, s.slope));
    if (k == 0) continue;
    const Segment& prev = segments_[k - 1];
    if (!(s.x_start > prev.x_start)) throw PwlError(fmt::format("segment {} start is not increasing", k));
    const double left = prev(s.x_start);
    const double right = s(s.x_start);
    if (!near_equal(left, right, 1e-12)) {
      throw PwlError(fmt::format("discontinuity at x = {}: {} vs {}", s.x_start, left, right));
    }
  }
}

PwlFunction PwlFunction::line(double slope, double intercept) {
  return PwlFunction({Segment{0.0, slope, intercept}});
}

std::size_t PwlFunction::segment_index(double x) const {
  auto it = std::upper_bound(segments_.begin(), segments_.end(), x,
                             [](double v, const Segment& s) { return v < s.x_start; });
  return static_cast<std::size_t>(it - segments_.begin()) - 1;
}

double PwlFunction::operator()(double x) const {
  if (!std::isfinite(x) || x < 0.0) throw PwlError(fmt::format("flow must be finite and >= 0, got {}", x));
  return segments_[segment_index(x)](x);
}

double PwlFunction::invert(double y) const {
  if (!std::isfinite(y)) throw PwlError("cannot invert a non-finite value");
  const double y0 = segments_.front()(0.0);
  if (y < y0) {
    if (near_equal(y, y0, 1e-12)) return 0.0;
    throw PwlError(fmt::format("value {} is below f(0) = {}", y, y0));
  }
  // Values at breakpoints are increasing, so search on them.
  std::size_t k = 0;
  while (k + 1 < segments_.size() && segments_[k + 1](segments_[k + 1].x_start) <= y) ++k;
  const Segment& s = segments_[k];
  return std::max(s.x_start, (y - s.intercept) / s.slope);
}

std::vector<double> PwlFunction::breakpoints() const {
  std::vector<double> out;
  out.reserve(segments_.size());
  for (const auto& s : segments_) out.push_back(s.x_start);
  return out;
}

std::string PwlFunction::to_csv() const {
  std::string out = "x_start,slope,intercept\n";
  for (const auto& s : segments_) out += fmt::format("{},{},{}\n", s.x_start, s.slope, s.intercept);
  return out;
}

PwlFunction PwlFunction::from_csv(std::string_view text) {
  std::vector<Segment> segs;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.rfind("x_start", 0) == 0) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    Segment s{};
    if (!(row >> s.x_start >> s.slope >> s.intercept)) {
      throw PwlError(fmt::format("line {}: expected x_start,slope,intercept", lineno));
    }
    segs.push_back(s);
  }
  return PwlFunction(std::move(segs));
}

PwlFunction add(const PwlFunction& f, const PwlFunction& g) {
  std::vector<double> xs = f.breakpoints();
  const auto gx = g.breakpoints();
  xs.insert(xs.end(), gx.begin(), gx.end());
  std::sort(xs.begin(), xs.end());
  std::vector<double> merged;
  for (double x : xs) {
    if (merged.empty() || !near_equal(merged.back(), x, kBreakpointTolerance)) merged.push_back(x);
  }
  std::vector<Segment> segs;
  segs.reserve(merged.size());
  for (double x : merged) {
    const Segment& a = f[f.segment_index(x)];
    const Segment& b = g[g.segment_index(x)];
    segs.push_back({x, a.slope + b.slope, a.intercept + b.intercept});
  }
  return PwlFunction(std::move(segs));
}

PwlFunction scale_argument(const PwlFunction& f, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw PwlError("argument scale must be finite and > 0");
  std::vector<Segment> segs;
  for (const auto& s : f.segments()) segs.push_back({s.x_start / factor, s.slope * factor, s.intercept});
  return PwlFunction(std::move(segs));
}

PwlFunction shift_value(const PwlFunction& f, double shift) {
  std::vector<Segment> segs;
  for (const auto& s : f.segments()) segs.push_back({s.x_start, s.slope, s.intercept + shift});
  return PwlFunction(std::move(segs));
}

double tangent_slope_from(const BprFunction& bpr, double x0, double y0, double search_limit) {
  if (!(y0 < bpr(x0))) throw PwlError("tangent origin must lie below the curve");
  // Residual of the tangency condition at touch point t.
  auto residual = [&](double t) { return bpr(t) - y0 - bpr.derivative(t) * (t - x0); };
  auto slope = [&](double t) { return -bpr.second_derivative(t) * (t - x0); };
  auto scale = [&](double t) { return std::max({1.0, bpr(t), std::abs(y0)}); };
  const double t = decreasing_root(residual, slope, scale, x0, search_limit, "tangency search");
  return bpr.derivative(t);
}

PwlFunction approximate_bpr(const BprFunction& bpr, const ApproxConfig& cfg) {
  bpr.validate();
  cfg.validate();
  const double eps = cfg.epsilon;
  std::vector<Segment> segs;
  double x = 0.0;
  double y = bpr.b;
  for (int j = 1; j < cfg.eta; ++j) {
    const double s = tangent_slope_from(bpr, x, y - eps, cfg.search_limit);
    const double upper = y + eps;
    auto gap = [&](double z) { return upper + s * (z - x) - bpr(z); };
    auto dgap = [&](double z) { return s - bpr.derivative(z); };
    auto scale = [&](double z) { return std::max(1.0, bpr(z)); };
    // The upper line stays above the curve at least up to the tangency point.
    const double z = decreasing_root(gap, dgap, scale, x, cfg.search_limit, "band intersection");
    segs.push_back({x, s, y - s * x});
    y = segs.back()(z);
    x = z;
  }
  const double s = tangent_slope_from(bpr, x, y - eps, cfg.search_limit);
  segs.push_back({x, s, y - s * x});
  return PwlFunction(std::move(segs));
}

}  // namespace dtoll::pwl
