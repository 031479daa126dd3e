#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dtoll/mdp.hpp"
#include "dtoll/pwl.hpp"
#include "dtoll/solver.hpp"

namespace oracle {

using dtoll::mdp::MdpModel;
using dtoll::pwl::PwlFunction;
using dtoll::pwl::Segment;
using dtoll::solver::Policy;

inline PwlFunction random_convex(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> slope(0.2, 3.0);
  std::uniform_real_distribution<double> gap(0.2, 2.0);
  std::uniform_real_distribution<double> base(0.0, 3.0);
  std::uniform_int_distribution<int> count(1, 4);
  const int n = count(rng);
  std::vector<Segment> segs;
  double x = 0.0, y = base(rng), s = slope(rng);
  for (int k = 0; k < n; ++k) {
    segs.push_back({x, s, y - s * x});
    const double nx = x + gap(rng);
    y += s * (nx - x);
    x = nx;
    s += slope(rng);
  }
  return PwlFunction(std::move(segs));
}

// Beckmann potential term: integral of f over [0, x], segment by segment.
inline double integral(const PwlFunction& f, double x) {
  double total = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    const double lo = f[k].x_start;
    if (lo >= x) break;
    const double hi = k + 1 < f.size() ? std::min(x, f[k + 1].x_start) : x;
    total += 0.5 * f[k].slope * (hi * hi - lo * lo) + f[k].intercept * (hi - lo);
  }
  return total;
}

// Independent two-route oracle: minimize the Beckmann objective over the
// split by a grid scan followed by ternary refinement (the objective is convex).
inline double beckmann_tstt(const std::vector<PwlFunction>& r, double x, const std::vector<double>& u) {
  auto objective = [&](double x1) {
    return integral(r[0], x1) + u[0] * x1 + integral(r[1], x - x1) + u[1] * (x - x1);
  };
  const int grid = 20000;
  int best = 0;
  for (int i = 1; i <= grid; ++i) {
    if (objective(x * i / grid) < objective(x * best / grid)) best = i;
  }
  double lo = x * std::max(0, best - 1) / grid;
  double hi = x * std::min(grid, best + 1) / grid;
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    (objective(m1) < objective(m2) ? hi : lo) = (objective(m1) < objective(m2) ? m2 : m1);
  }
  const double x1 = 0.5 * (lo + hi);
  const double flows[2] = {x1, x - x1};
  double total = 0.0;
  for (int k = 0; k < 2; ++k) total += r[k](flows[k]) + u[k];
  return total;
}

inline MdpModel make_model(std::vector<Eigen::MatrixXd> P, Eigen::MatrixXd g) {
  MdpModel m;
  const auto S = g.rows();
  for (Eigen::Index i = 0; i < S; ++i) m.states.push_back(static_cast<double>(i));
  for (Eigen::Index a = 0; a < g.cols(); ++a) m.actions.push_back({static_cast<double>(a + 1)});
  m.P = std::move(P);
  m.g = std::move(g);
  m.tstt = m.g;
  m.validate();
  return m;
}

inline MdpModel random_model(std::mt19937_64& rng, int S, int A) {
  std::uniform_real_distribution<double> unit(0.05, 1.0), cost(0.5, 10.0);
  std::vector<Eigen::MatrixXd> P;
  Eigen::MatrixXd g(S, A);
  for (int a = 0; a < A; ++a) {
    Eigen::MatrixXd m(S, S);
    for (int i = 0; i < S; ++i) {
      for (int j = 0; j < S; ++j) m(i, j) = unit(rng);
      m.row(i) /= m.row(i).sum();
      g(i, a) = cost(rng);
    }
    P.push_back(m);
  }
  return make_model(std::move(P), g);
}

// Stationary distribution from the eigenvector of P^T for eigenvalue 1.
inline double stationary_average(const MdpModel& m, const Policy& policy) {
  const auto S = static_cast<Eigen::Index>(m.state_count());
  Eigen::MatrixXd Pm(S, S);
  Eigen::VectorXd g(S);
  for (Eigen::Index i = 0; i < S; ++i) {
    Pm.row(i) = m.P[policy[static_cast<std::size_t>(i)]].row(i);
    g(i) = m.g(i, static_cast<Eigen::Index>(policy[static_cast<std::size_t>(i)]));
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(Pm.transpose());
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < S; ++k) {
    if (std::abs(es.eigenvalues()(k) - 1.0) < std::abs(es.eigenvalues()(best) - 1.0)) best = k;
  }
  Eigen::VectorXd pi = es.eigenvectors().col(best).real();
  pi /= pi.sum();
  return pi.dot(g);
}

inline std::vector<Policy> all_policies(std::size_t S, std::size_t A) {
  std::vector<Policy> out{Policy(S, 0)};
  while (true) {
    Policy p = out.back();
    std::size_t i = 0;
    while (i < S && ++p[i] == A) p[i++] = 0;
    if (i == S) return out;
    out.push_back(p);
  }
}

}  // namespace oracle
