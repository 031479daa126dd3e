#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dtoll::pwl {

class PwlError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// BPR travel-time curve t(x) = c * x^a + b.
struct BprFunction {
  double c = 1.0;
  double a = 4.0;
  double b = 0.0;

  void validate() const;
  double operator()(double x) const;
  double derivative(double x) const;
  double second_derivative(double x) const;
};

/// Settings of the tangent-band approximation.
///
/// `epsilon` is the half-width of the band and `eta` the number of segments.
/// `search_limit` bounds the flow range explored while looking for tangency
/// and intersection points; a construction that would need to go past it fails.
struct ApproxConfig {
  double epsilon = 1.0;
  int eta = 4;
  double search_limit = 1e6;

  void validate() const;
};

struct Segment {
  double x_start;
  double slope;
  double intercept;

  double operator()(double x) const { return slope * x + intercept; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Continuous, strictly increasing piecewise-linear function on [0, inf).
///
/// Segment k covers [x_start_k, x_start_{k+1}); the last one extends to +inf.
/// The constructor checks every invariant, so a PwlFunction that exists is
/// always valid.
class PwlFunction {
 public:
  explicit PwlFunction(std::vector<Segment> segments);

  static PwlFunction line(double slope, double intercept);

  /// Value at x >= 0.
  double operator()(double x) const;
  double eval(double x) const { return (*this)(x); }

  /// Unique x with f(x) = y. Requires y >= f(0).
  double invert(double y) const;

  /// Index of the segment whose half-open interval contains x.
  std::size_t segment_index(double x) const;

  std::span<const Segment> segments() const { return segments_; }
  std::size_t size() const { return segments_.size(); }
  const Segment& operator[](std::size_t i) const { return segments_[i]; }

  /// Start of the unbounded final segment.
  double last_breakpoint() const { return segments_.back().x_start; }

  /// Breakpoint list (x_start of every segment).
  std::vector<double> breakpoints() const;

  /// "x_start,slope,intercept" table with a header row.
  std::string to_csv() const;
  static PwlFunction from_csv(std::string_view text);

  friend bool operator==(const PwlFunction&, const PwlFunction&) = default;

 private:
  std::vector<Segment> segments_;
};

/// Pointwise sum; breakpoints are merged, near-duplicates collapsed.
PwlFunction add(const PwlFunction& f, const PwlFunction& g);
inline PwlFunction operator+(const PwlFunction& f, const PwlFunction& g) { return add(f, g); }

/// x -> f(factor * x) for factor > 0.
PwlFunction scale_argument(const PwlFunction& f, double factor);

/// x -> f(x) + shift.
PwlFunction shift_value(const PwlFunction& f, double shift);

/// Tangent-band approximation of a BPR curve with `cfg.eta` segments.
///
/// Starting from d = (0, b), each step draws the tangent to the curve from
/// the point epsilon below d and the parallel line from the point epsilon
/// above d. The segment runs through d with that slope until the upper line
/// meets the curve again, where the next segment starts epsilon below the
/// curve. The final segment is a ray and has no error guarantee.
PwlFunction approximate_bpr(const BprFunction& bpr, const ApproxConfig& cfg);

/// Slope of the tangent to `bpr` drawn from (x0, y0), a point strictly
/// below the curve. Throws PwlError if no tangency is found.
double tangent_slope_from(const BprFunction& bpr, double x0, double y0, double search_limit);

/// Relative merge tolerance used for breakpoints.
inline constexpr double kBreakpointTolerance = 1e-12;

}  // namespace dtoll::pwl
