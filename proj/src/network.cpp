#include "dtoll/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

namespace dtoll::network {
namespace {

using Kind = SpNode::Kind;

std::set<std::string> reachable(const Network& net, std::string_view start, bool forward) {
  std::set<std::string> seen{std::string(start)};
  std::vector<std::string> stack{std::string(start)};
  while (!stack.empty()) {
    const std::string v = std::move(stack.back());
    stack.pop_back();
    for (const auto& l : net.links) {
      const std::string& from = forward ? l.tail : l.head;
      const std::string& to = forward ? l.head : l.tail;
      if (from == v && seen.insert(to).second) stack.push_back(to);
    }
  }
  return seen;
}

// Links lying on some path from origin to destination.
std::vector<std::size_t> links_between(const Network& net, std::string_view origin, std::string_view destination) {
  const auto from_origin = reachable(net, origin, true);
  const auto to_destination = reachable(net, destination, false);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < net.links.size(); ++i) {
    const auto& l = net.links[i];
    if (from_origin.contains(l.tail) && to_destination.contains(l.head)) out.push_back(i);
  }
  return out;
}

void absorb(SpNode& parent, SpNode child) {
  if (child.kind == parent.kind) {
    for (auto& c : child.children) parent.children.push_back(std::move(c));
  } else {
    parent.children.push_back(std::move(child));
  }
}

struct Edge {
  std::string tail;
  std::string head;
  SpNode node;
};

bool merge_parallel(std::vector<Edge>& edges) {
  for (std::size_t i = 0; i < edges.size(); ++i) {
    for (std::size_t j = i + 1; j < edges.size(); ++j) {
      if (edges[i].tail != edges[j].tail || edges[i].head != edges[j].head) continue;
      SpNode p;
      p.kind = Kind::parallel;
      absorb(p, std::move(edges[i].node));
      absorb(p, std::move(edges[j].node));
      std::sort(p.children.begin(), p.children.end(),
                [](const SpNode& a, const SpNode& b) { return a.min_link() < b.min_link(); });
      edges[i].node = std::move(p);
      edges.erase(edges.begin() + static_cast<std::ptrdiff_t>(j));
      return true;
    }
  }
  return false;
}

bool contract_series(std::vector<Edge>& edges, std::string_view origin, std::string_view destination) {
  std::set<std::string> nodes;
  for (const auto& e : edges) {
    nodes.insert(e.tail);
    nodes.insert(e.head);
  }
  for (const auto& v : nodes) {
    if (v == origin || v == destination) continue;
    std::vector<std::size_t> in, out;
    for (std::size_t i = 0; i < edges.size(); ++i) {
      if (edges[i].head == v) in.push_back(i);
      if (edges[i].tail == v) out.push_back(i);
    }
    if (in.size() != 1 || out.size() != 1 || in[0] == out[0]) continue;
    SpNode s;
    s.kind = Kind::series;
    absorb(s, std::move(edges[in[0]].node));
    absorb(s, std::move(edges[out[0]].node));
    edges[in[0]].head = edges[out[0]].head;
    edges[in[0]].node = std::move(s);
    edges.erase(edges.begin() + static_cast<std::ptrdiff_t>(out[0]));
    return true;
  }
  return false;
}

TsttPwl to_route(const Network& net, const SpNode& node, std::span<const double> tolls) {
  switch (node.kind) {
    case Kind::link: {
      const auto& l = net.links[node.link];
      return TsttPwl::link(l.cost, l.toll_slot, net.slot_count(), tolls);
    }
    case Kind::series: {
      TsttPwl acc = to_route(net, node.children.front(), tolls);
      for (std::size_t i = 1; i < node.children.size(); ++i) acc = add(acc, to_route(net, node.children[i], tolls));
      return acc;
    }
    case Kind::parallel: {
      std::vector<TsttPwl> parts;
      for (const auto& c : node.children) parts.push_back(to_route(net, c, tolls));
      return equilibrium::combine_parallel(parts);
    }
  }
  throw NetworkError("unknown decomposition node");
}

void check_tolls(const Network& net, std::span<const double> tolls) {
  if (tolls.size() != net.slot_count()) {
    throw NetworkError(fmt::format("expected {} tolls, got {}", net.slot_count(), tolls.size()));
  }
  const auto diag = validate(net);
  if (!diag.connected || !diag.slots_unique) {
    throw NetworkError(fmt::format("invalid network: {}", diag.messages.empty() ? "" : diag.messages.front()));
  }
}

// Consecutive chain segments (D_{i-1}, D_i) with D_0 the common origin.
std::vector<OdPair> chain_segments(const Network& net) {
  if (net.od_pairs.empty()) throw NetworkError("network has no OD pair");
  const std::string& origin = net.od_pairs.front().origin;
  std::vector<OdPair> segments;
  std::string from = origin;
  for (const auto& od : net.od_pairs) {
    if (od.origin != origin) {
      throw NetworkError(fmt::format("not a chain of nested OD pairs: origins '{}' and '{}' differ", origin, od.origin));
    }
    segments.push_back({from, od.destination});
    from = od.destination;
  }
  std::set<std::string> terminals{origin};
  for (const auto& od : net.od_pairs) terminals.insert(od.destination);

  std::vector<int> owner(net.links.size(), -1);
  std::set<std::string> inner_seen;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto links = links_between(net, segments[k].origin, segments[k].destination);
    if (links.empty()) {
      throw NetworkError(fmt::format("not a chain of nested OD pairs: no route from '{}' to '{}'",
                                     segments[k].origin, segments[k].destination));
    }
    std::set<std::string> inner;
    for (std::size_t i : links) {
      if (owner[i] >= 0) {
        throw NetworkError(fmt::format("not a chain of nested OD pairs: link {} serves destinations '{}' and '{}'", i + 1,
                                       segments[static_cast<std::size_t>(owner[i])].destination, segments[k].destination));
      }
      owner[i] = static_cast<int>(k);
      for (const auto* v : {&net.links[i].tail, &net.links[i].head}) {
        if (*v == segments[k].origin || *v == segments[k].destination) continue;
        if (terminals.contains(*v)) {
          throw NetworkError(fmt::format("not a chain of nested OD pairs: route to '{}' passes through '{}'",
                                         segments[k].destination, *v));
        }
        inner.insert(*v);
      }
    }
    for (const auto& v : inner) {
      if (!inner_seen.insert(v).second) {
        throw NetworkError(fmt::format("not a chain of nested OD pairs: node '{}' is shared between segments", v));
      }
    }
  }
  for (std::size_t i = 0; i < net.links.size(); ++i) {
    if (owner[i] < 0) throw NetworkError(fmt::format("not a chain of nested OD pairs: link {} is on no segment", i + 1));
  }
  return segments;
}

}  // namespace

std::size_t SpNode::min_link() const {
  if (kind == Kind::link) return link;
  std::size_t m = static_cast<std::size_t>(-1);
  for (const auto& c : children) m = std::min(m, c.min_link());
  return m;
}

std::string SpNode::to_string() const {
  if (kind == Kind::link) return fmt::format("{}", link + 1);
  std::string out = kind == Kind::series ? "S(" : "P(";
  for (std::size_t i = 0; i < children.size(); ++i) {
    if (i > 0) out += ",";
    out += children[i].to_string();
  }
  return out + ")";
}

SpNode decompose(const Network& net, std::string_view origin, std::string_view destination) {
  if (origin == destination) throw NetworkError(fmt::format("origin and destination are both '{}'", origin));
  std::vector<Edge> edges;
  for (std::size_t i : links_between(net, origin, destination)) {
    const auto& l = net.links[i];
    if (l.tail == l.head) throw NetworkError(fmt::format("link {} is a self-loop at node '{}'", i + 1, l.tail));
    SpNode leaf;
    leaf.link = i;
    edges.push_back({l.tail, l.head, std::move(leaf)});
  }
  if (edges.empty()) throw NetworkError(fmt::format("no route from '{}' to '{}'", origin, destination));

  while (merge_parallel(edges) || contract_series(edges, origin, destination)) {
  }
  if (edges.size() == 1 && edges[0].tail == origin && edges[0].head == destination) return std::move(edges[0].node);

  std::set<std::string> blocking;
  for (const auto& e : edges) {
    for (const auto* v : {&e.tail, &e.head}) {
      if (*v != origin && *v != destination) blocking.insert(*v);
    }
  }
  const std::string culprit = blocking.empty() ? std::string(origin) : *blocking.begin();
  throw NetworkError(fmt::format("network is not series-parallel between '{}' and '{}': node '{}' cannot be reduced",
                                 origin, destination, culprit));
}

Diagnostics validate(const Network& net) {
  Diagnostics d;
  const std::set<std::string> known(net.nodes.begin(), net.nodes.end());
  auto fail = [&](bool& flag, std::string msg) {
    flag = false;
    d.messages.push_back(std::move(msg));
  };

  if (net.od_pairs.empty()) fail(d.connected, "network has no OD pair");
  for (std::size_t i = 0; i < net.links.size(); ++i) {
    const auto& l = net.links[i];
    for (const auto* v : {&l.tail, &l.head}) {
      if (!known.contains(*v)) fail(d.connected, fmt::format("link {} uses unknown node '{}'", i + 1, *v));
    }
    if (l.tail == l.head) fail(d.series_parallel, fmt::format("link {} is a self-loop at node '{}'", i + 1, l.tail));
  }

  std::vector<int> slot_owner(net.slot_count(), -1);
  for (std::size_t i = 0; i < net.links.size(); ++i) {
    const std::size_t s = net.links[i].toll_slot;
    if (s >= slot_owner.size()) {
      fail(d.slots_unique, fmt::format("link {} has toll slot {} outside 1..{}", i + 1, s + 1, slot_owner.size()));
    } else if (slot_owner[s] >= 0) {
      fail(d.slots_unique, fmt::format("toll slot {} is shared by links {} and {}", s + 1, slot_owner[s] + 1, i + 1));
    } else {
      slot_owner[s] = static_cast<int>(i);
    }
  }
  for (std::size_t s = 0; s < slot_owner.size(); ++s) {
    if (slot_owner[s] < 0) fail(d.slots_unique, fmt::format("toll slot {} is not assigned to any link", s + 1));
  }

  std::vector<bool> on_path(net.links.size(), false);
  for (const auto& od : net.od_pairs) {
    for (const auto* v : {&od.origin, &od.destination}) {
      if (!known.contains(*v)) fail(d.connected, fmt::format("OD pair uses unknown node '{}'", *v));
    }
    const auto links = links_between(net, od.origin, od.destination);
    if (links.empty()) {
      fail(d.connected, fmt::format("no route from '{}' to '{}'", od.origin, od.destination));
      continue;
    }
    for (std::size_t i : links) on_path[i] = true;
    try {
      decompose(net, od.origin, od.destination);
    } catch (const NetworkError& e) {
      fail(d.series_parallel, e.what());
    }
  }
  for (std::size_t i = 0; i < net.links.size(); ++i) {
    if (!on_path[i]) {
      fail(d.connected, fmt::format("link {} ({} -> {}) is not on any OD route", i + 1, net.links[i].tail, net.links[i].head));
    }
  }
  if (net.od_pairs.size() > 1 && d.connected) {
    try {
      chain_segments(net);
    } catch (const NetworkError& e) {
      fail(d.series_parallel, e.what());
    }
  }
  return d;
}

std::vector<ReducedRoute> reduce_series_parallel(const Network& net, std::span<const double> tolls) {
  if (net.od_pairs.size() != 1) {
    throw NetworkError(fmt::format("series-parallel reduction needs exactly one OD pair, got {}", net.od_pairs.size()));
  }
  check_tolls(net, tolls);
  const auto& od = net.od_pairs.front();
  const SpNode root = decompose(net, od.origin, od.destination);
  std::vector<ReducedRoute> routes;
  if (root.kind == Kind::parallel) {
    for (const auto& c : root.children) routes.push_back(to_route(net, c, tolls));
  } else {
    routes.push_back(to_route(net, root, tolls));
  }
  return routes;
}

ReducedRoute reduce_multi_od(const Network& net, const MultiOdSpec& spec, std::span<const double> tolls) {
  check_tolls(net, tolls);
  const auto segments = chain_segments(net);
  if (spec.rho.size() + 1 != segments.size()) {
    throw NetworkError(fmt::format("{} destinations need {} split fractions, got {}", segments.size(),
                                   segments.size() - 1, spec.rho.size()));
  }
  for (double r : spec.rho) {
    if (!(r >= 0.0 && r < 1.0)) throw NetworkError(fmt::format("split fraction must lie in [0, 1), got {}", r));
  }
  double share = 1.0;
  std::optional<ReducedRoute> total;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const SpNode tree = decompose(net, segments[k].origin, segments[k].destination);
    ReducedRoute link = to_route(net, tree, tolls);
    if (share != 1.0) link = equilibrium::scale_argument(link, share);
    total = total ? add(*total, link) : std::move(link);
    if (k < spec.rho.size()) share *= 1.0 - spec.rho[k];
  }
  return std::move(*total);
}

double reduced_tstt(std::span<const ReducedRoute> routes, double x) {
  if (routes.empty()) throw NetworkError("no reduced routes");
  std::vector<PwlFunction> costs;
  for (const auto& r : routes) costs.push_back(r.as_pwl());
  const std::vector<double> zero(costs.size(), 0.0);
  return equilibrium::tstt(costs, x, zero);
}

// --- text format -------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

struct Reader {
  std::string_view source;
  std::size_t line = 0;

  [[noreturn]] void error(const std::string& msg) const {
    throw NetworkError(fmt::format("{}:{}: {}", source, line, msg));
  }

  double number(std::string_view s) const {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) error(fmt::format("bad number '{}'", s));
    return v;
  }

  std::size_t index(std::string_view s) const {
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) error(fmt::format("bad integer '{}'", s));
    return v;
  }
};

PwlFunction parse_pwl(const Reader& rd, std::string_view spec) {
  const auto w = words(spec);
  if (w.empty()) rd.error("empty cost definition");
  try {
    if (w[0] == "bpr") {
      pwl::BprFunction bpr;
      pwl::ApproxConfig cfg;
      for (std::size_t i = 1; i < w.size(); ++i) {
        const auto eq = w[i].find('=');
        if (eq == std::string_view::npos) rd.error(fmt::format("expected key=value, got '{}'", w[i]));
        const auto key = w[i].substr(0, eq);
        const double v = rd.number(w[i].substr(eq + 1));
        if (key == "c") bpr.c = v;
        else if (key == "a") bpr.a = v;
        else if (key == "b") bpr.b = v;
        else if (key == "eps") cfg.epsilon = v;
        else if (key == "eta") cfg.eta = static_cast<int>(v);
        else if (key == "limit") cfg.search_limit = v;
        else rd.error(fmt::format("unknown bpr parameter '{}'", key));
      }
      return pwl::approximate_bpr(bpr, cfg);
    }
    if (w[0] == "table") {
      std::vector<pwl::Segment> segs;
      for (std::size_t i = 1; i < w.size(); ++i) {
        const auto parts = split(w[i], ':');
        if (parts.size() != 3) rd.error(fmt::format("expected x_start:slope:intercept, got '{}'", w[i]));
        segs.push_back({rd.number(parts[0]), rd.number(parts[1]), rd.number(parts[2])});
      }
      return PwlFunction(std::move(segs));
    }
  } catch (const pwl::PwlError& e) {
    rd.error(e.what());
  }
  rd.error(fmt::format("unknown cost kind '{}'", w[0]));
}

}  // namespace

NetworkFile parse_network(std::string_view text, std::string_view source) {
  Reader rd{source};
  NetworkFile out;
  Network& net = out.network;
  std::map<std::string, PwlFunction, std::less<>> costs;
  std::set<std::size_t> slots_given;
  std::string section;

  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++rd.line;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') rd.error(fmt::format("malformed section header '{}'", line));
      section = std::string(line.substr(1, line.size() - 2));
      if (section != "pwl" && section != "nodes" && section != "links" && section != "od" && section != "splits") {
        rd.error(fmt::format("unknown section '{}'", section));
      }
      continue;
    }
    if (section.empty()) rd.error("content before the first section header");

    if (section == "pwl") {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) rd.error("expected name = definition");
      const std::string name(trim(line.substr(0, eq)));
      if (name.empty()) rd.error("cost name is empty");
      if (costs.contains(name)) rd.error(fmt::format("cost '{}' is defined twice", name));
      costs.emplace(name, parse_pwl(rd, trim(line.substr(eq + 1))));
    } else if (section == "nodes") {
      for (auto id : split(line, ',')) {
        if (id.empty()) rd.error("empty node id");
        if (std::find(net.nodes.begin(), net.nodes.end(), id) != net.nodes.end()) {
          rd.error(fmt::format("node '{}' is listed twice", id));
        }
        net.nodes.emplace_back(id);
      }
    } else if (section == "links") {
      const auto f = split(line, ',');
      if (f.size() != 4) rd.error("expected tail,head,cost,toll_slot");
      const auto it = costs.find(f[2]);
      if (it == costs.end()) rd.error(fmt::format("unknown cost '{}'", f[2]));
      const std::size_t slot = rd.index(f[3]);
      if (slot == 0) rd.error("toll slots are numbered from 1");
      net.links.push_back({std::string(f[0]), std::string(f[1]), it->second, slot - 1});
    } else if (section == "od") {
      const auto f = split(line, ',');
      if (f.size() != 2) rd.error("expected origin,destination");
      net.od_pairs.push_back({std::string(f[0]), std::string(f[1])});
    } else {
      for (auto v : split(line, ',')) out.splits.rho.push_back(rd.number(v));
    }
  }

  if (net.nodes.empty()) {
    for (const auto& l : net.links) {
      for (const auto* v : {&l.tail, &l.head}) {
        if (std::find(net.nodes.begin(), net.nodes.end(), *v) == net.nodes.end()) net.nodes.push_back(*v);
      }
    }
  }
  if (net.links.empty()) throw NetworkError(fmt::format("{}: no links", source));
  if (net.od_pairs.empty()) throw NetworkError(fmt::format("{}: no OD pair", source));
  return out;
}

NetworkFile load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NetworkError(fmt::format("cannot open network file '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_network(ss.str(), path);
}

Network two_route_network(const PwlFunction& first, const PwlFunction& second) {
  Network net;
  net.nodes = {"O", "D"};
  net.links = {{"O", "D", first, 0}, {"O", "D", second, 1}};
  net.od_pairs = {{"O", "D"}};
  return net;
}

Network overlapping_network(std::span<const PwlFunction> costs) {
  if (costs.size() != 4) throw NetworkError("the overlapping-route network has four links");
  Network net;
  net.nodes = {"A", "B", "C", "D"};
  net.links = {{"A", "B", costs[0], 0}, {"B", "C", costs[1], 1}, {"A", "C", costs[2], 2}, {"C", "D", costs[3], 3}};
  net.od_pairs = {{"A", "D"}};
  return net;
}

}  // namespace dtoll::network
