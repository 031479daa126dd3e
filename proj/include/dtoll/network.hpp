#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dtoll/equilibrium.hpp"
#include "dtoll/pwl.hpp"

namespace dtoll::network {

using equilibrium::TsttPwl;
using pwl::PwlFunction;

class NetworkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Link {
  std::string tail;
  std::string head;
  PwlFunction cost;
  std::size_t toll_slot = 0;
};

struct OdPair {
  std::string origin;
  std::string destination;
};

struct Network {
  std::vector<std::string> nodes;
  std::vector<Link> links;
  std::vector<OdPair> od_pairs;

  /// Number of toll slots (one per link).
  std::size_t slot_count() const { return links.size(); }
};

/// Split fractions of a series-activity chain. With destinations D_1..D_n
/// listed in order in the network's OD pairs, rho[i] is the share of the
/// flow reaching D_{i+1} that stops there; the last destination takes the
/// remainder, so rho has n - 1 entries.
struct MultiOdSpec {
  std::vector<double> rho;
};

struct Diagnostics {
  bool connected = true;
  bool slots_unique = true;
  bool series_parallel = true;
  std::vector<std::string> messages;

  bool valid() const { return connected && slots_unique && series_parallel; }
};

Diagnostics validate(const Network& net);

/// Series-parallel decomposition tree between one origin and destination.
struct SpNode {
  enum class Kind { link, series, parallel };
  Kind kind = Kind::link;
  std::size_t link = 0;  // for Kind::link
  std::vector<SpNode> children;

  /// Smallest link index in the subtree; used for deterministic ordering.
  std::size_t min_link() const;
  std::string to_string() const;
};

/// Decomposes the links lying on origin-destination paths. Throws
/// NetworkError naming a node that blocks the reduction.
SpNode decompose(const Network& net, std::string_view origin, std::string_view destination);

/// A reduced route: cost piecewise linear in its own flow and linear in the
/// link tolls, with coefficients that may change from piece to piece.
using ReducedRoute = TsttPwl;

/// Top-level parallel alternatives of the single OD pair, each reduced to one
/// link. Series steps add, inner parallel blocks collapse to their TSTT.
std::vector<ReducedRoute> reduce_series_parallel(const Network& net, std::span<const double> tolls);

/// Single link equivalent of a series-activity chain as a function of the
/// total demand. Segment i carries the fraction prod_{j<i}(1 - rho_j) of the
/// total, so each segment's link is composed by argument scaling.
ReducedRoute reduce_multi_od(const Network& net, const MultiOdSpec& spec, std::span<const double> tolls);

/// TSTT of the reduced network at demand x.
double reduced_tstt(std::span<const ReducedRoute> routes, double x);

/// Reads the sectioned text format:
///
///   [pwl]    name = bpr c=<c> a=<a> b=<b> [eps=<e>] [eta=<n>] [limit=<L>]
///            name = table <x_start>:<slope>:<intercept> ...
///   [nodes]  one id per line
///   [links]  tail,head,pwl-name,toll_slot
///   [od]     origin,destination
///   [splits] rho values, comma separated
///
/// Blank lines and text after '#' are ignored. Errors carry `source:line`.
struct NetworkFile {
  Network network;
  MultiOdSpec splits;
};

NetworkFile parse_network(std::string_view text, std::string_view source = "<input>");
NetworkFile load_network(const std::string& path);

/// Two parallel links between O and D (the single-OD example network).
Network two_route_network(const PwlFunction& first, const PwlFunction& second);

/// Links 1 A->B, 2 B->C, 3 A->C, 4 C->D with OD pair A-D.
Network overlapping_network(std::span<const PwlFunction> costs);

}  // namespace dtoll::network
