#include "babywalk/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <queue>

#include "babywalk/error.hpp"
#include "babywalk/io.hpp"
#include "babywalk/rng.hpp"

namespace babywalk {

namespace {

constexpr double kMinSeparation = 1.0;
constexpr double kNodeSpacing = 2.2;
constexpr double kBoxHeight = 1.5;
constexpr int kMaxLandmarksPerNode = 3;

double euclid(const Position& a, const Position& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

bool near_equal(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

// Dijkstra from `source` over edge lengths.
std::vector<double> distances_from(const WorldGraph& world, NodeId source) {
  std::vector<double> dist(world.size(), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> frontier;
  dist[source] = 0.0;
  frontier.emplace(0.0, source);
  while (!frontier.empty()) {
    auto [d, u] = frontier.top();
    frontier.pop();
    if (d > dist[u]) continue;
    for (NodeId v : world.neighbors(u)) {
      const double nd = d + world.distance(u, v);
      if (nd < dist[v]) {
        dist[v] = nd;
        frontier.emplace(nd, v);
      }
    }
  }
  return dist;
}

// Smallest-id neighbour of `from` lying on a shortest path, given distances
// to the target.
NodeId greedy_next(const WorldGraph& world, NodeId from, const std::vector<double>& to_target) {
  for (NodeId v : world.neighbors(from)) {  // ascending ids
    if (near_equal(to_target[from], world.distance(from, v) + to_target[v])) return v;
  }
  throw Error(ErrorCode::unreachable, "no shortest-path successor from node " + std::to_string(from));
}

}  // namespace

std::span<const std::string> default_landmark_names() {
  static const std::vector<std::string> names = {
      "sofa",     "table",     "chair",      "bed",        "lamp",      "piano",
      "fireplace", "staircase", "kitchen",   "bathroom",   "bedroom",   "painting",
      "mirror",   "plant",     "rug",        "door",       "window",    "counter",
      "sink",     "fridge",    "oven",       "desk",       "bookshelf", "cabinet",
      "couch",    "toilet",    "shower",     "bathtub",    "dresser",   "television",
      "statue",   "vase",      "clock",      "fountain",   "pillar",    "railing",
      "archway",  "balcony",   "closet",     "pool",       "bench",     "tree",
      "curtain",  "ottoman",   "stool",      "wardrobe",   "sculpture", "chandelier",
      "microwave", "armchair", "patio",      "garage",     "pantry",    "porch",
      "fence",    "gate",      "bar",        "basket",
  };
  return names;
}

WorldGraph::WorldGraph(std::string world_id, std::vector<Node> nodes,
                       std::vector<std::pair<NodeId, NodeId>> edges,
                       std::vector<std::string> landmark_vocab, double visibility_radius)
    : world_id_(std::move(world_id)),
      nodes_(std::move(nodes)),
      edges_(std::move(edges)),
      landmark_vocab_(std::move(landmark_vocab)),
      visibility_radius_(visibility_radius) {
  if (nodes_.empty()) throw Error(ErrorCode::invalid_argument, "world has no nodes");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id != static_cast<NodeId>(i)) {
      throw Error(ErrorCode::invalid_argument,
                  "node ids must be dense and ordered; found id " + std::to_string(nodes_[i].id) +
                      " at index " + std::to_string(i));
    }
  }
  adjacency_.resize(nodes_.size());
  for (auto [a, b] : edges_) {
    if (!contains(a) || !contains(b) || a == b) {
      throw Error(ErrorCode::invalid_argument,
                  "bad edge (" + std::to_string(a) + ", " + std::to_string(b) + ")");
    }
    if (!(euclid(nodes_[a].position, nodes_[b].position) > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "zero-length edge between coincident nodes");
    }
    adjacency_[a].push_back(b);
    adjacency_[b].push_back(a);
  }
  for (auto& adj : adjacency_) {
    std::sort(adj.begin(), adj.end());
    adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
  }

  node_landmarks_.resize(nodes_.size());
  for (const auto& node : nodes_) {
    for (const auto& name : node.landmarks) {
      auto idx = landmark_index(name);
      if (!idx) {
        throw Error(ErrorCode::invalid_argument,
                    "landmark '" + name + "' at node " + std::to_string(node.id) +
                        " is not in the vocabulary");
      }
      node_landmarks_[node.id].push_back(*idx);
    }
    auto& l = node_landmarks_[node.id];
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }

  // connectivity
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<NodeId> stack{0};
  seen[0] = true;
  std::size_t reached = 1;
  while (!stack.empty()) {
    NodeId u = stack.back();
    stack.pop_back();
    for (NodeId v : adjacency_[u]) {
      if (!seen[v]) {
        seen[v] = true;
        ++reached;
        stack.push_back(v);
      }
    }
  }
  if (reached != nodes_.size()) throw Error(ErrorCode::invalid_argument, "world graph is not connected");
}

const Node& WorldGraph::node(NodeId id) const {
  if (!contains(id)) throw Error(ErrorCode::invalid_state, "unknown node " + std::to_string(id));
  return nodes_[id];
}

std::span<const NodeId> WorldGraph::neighbors(NodeId id) const {
  if (!contains(id)) throw Error(ErrorCode::invalid_state, "unknown node " + std::to_string(id));
  return adjacency_[id];
}

bool WorldGraph::adjacent(NodeId a, NodeId b) const {
  auto adj = neighbors(a);
  return std::binary_search(adj.begin(), adj.end(), b);
}

double WorldGraph::distance(NodeId a, NodeId b) const {
  return euclid(node(a).position, node(b).position);
}

Direction WorldGraph::direction(NodeId from, NodeId to) const {
  const auto& p = node(from).position;
  const auto& q = node(to).position;
  const double dx = q[0] - p[0], dy = q[1] - p[1], dz = q[2] - p[2];
  const double step = 2.0 * std::numbers::pi / kHeadingBins;
  // Azimuth measured clockwise from +y (north).
  double azimuth = std::atan2(dx, dy);
  if (azimuth < 0) azimuth += 2.0 * std::numbers::pi;
  const int heading = static_cast<int>(std::lround(azimuth / step)) % kHeadingBins;
  const double pitch = std::atan2(dz, std::hypot(dx, dy));
  const double half = step / 2.0;
  const int elevation = pitch < -half ? 0 : (pitch > half ? 2 : kLevelElevation);
  return {heading, elevation};
}

std::optional<int> WorldGraph::landmark_index(const std::string& name) const {
  auto it = std::find(landmark_vocab_.begin(), landmark_vocab_.end(), name);
  if (it == landmark_vocab_.end()) return std::nullopt;
  return static_cast<int>(it - landmark_vocab_.begin());
}

double WorldGraph::mean_degree() const {
  return 2.0 * static_cast<double>(edges_.size()) / static_cast<double>(nodes_.size());
}

bool operator==(const WorldGraph& a, const WorldGraph& b) {
  if (a.world_id_ != b.world_id_ || a.edges_ != b.edges_ || a.landmark_vocab_ != b.landmark_vocab_ ||
      a.visibility_radius_ != b.visibility_radius_ || a.nodes_.size() != b.nodes_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.nodes_.size(); ++i) {
    if (a.nodes_[i].position != b.nodes_[i].position || a.nodes_[i].landmarks != b.nodes_[i].landmarks) {
      return false;
    }
  }
  return true;
}

WorldGraph generate_world(std::uint64_t seed, int n_nodes, int n_landmarks, double connectivity) {
  if (n_nodes < 2) {
    throw Error(ErrorCode::invalid_argument, "n_nodes must be at least 2 for a connected world");
  }
  const auto names = default_landmark_names();
  if (n_landmarks < 1 || static_cast<std::size_t>(n_landmarks) > names.size()) {
    throw Error(ErrorCode::invalid_argument,
                "n_landmarks must be in [1, " + std::to_string(names.size()) + "]");
  }
  if (!(connectivity >= 1.0)) throw Error(ErrorCode::invalid_argument, "connectivity must be >= 1");

  CounterRng rng(seed, 0x776f726c64ULL);
  const double side = kNodeSpacing * std::sqrt(static_cast<double>(n_nodes));

  std::vector<Node> nodes;
  nodes.reserve(n_nodes);
  double separation = kMinSeparation;
  int failures = 0;
  while (static_cast<int>(nodes.size()) < n_nodes) {
    Position p{rng.uniform(0.0, side), rng.uniform(0.0, side), rng.uniform(0.0, kBoxHeight)};
    bool ok = std::all_of(nodes.begin(), nodes.end(),
                          [&](const Node& n) { return euclid(n.position, p) >= separation; });
    if (!ok) {
      if (++failures > 1000) {
        separation *= 0.5;  // overly dense request; accept closer nodes
        failures = 0;
      }
      continue;
    }
    nodes.push_back(Node{static_cast<NodeId>(nodes.size()), p, {}});
  }

  std::vector<std::string> vocab(names.begin(), names.begin() + n_landmarks);
  for (auto& node : nodes) {
    const int count = rng.uniform_int(0, std::min(kMaxLandmarksPerNode, n_landmarks));
    std::vector<int> picked;
    while (static_cast<int>(picked.size()) < count) {
      int idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_landmarks)));
      if (std::find(picked.begin(), picked.end(), idx) == picked.end()) picked.push_back(idx);
    }
    std::sort(picked.begin(), picked.end());
    for (int idx : picked) node.landmarks.push_back(vocab[idx]);
  }

  // Random geometric graph: shortest pairs first up to the degree budget,
  // then join leftover components with their shortest bridging pairs.
  struct Pair {
    double length;
    NodeId a, b;
  };
  std::vector<Pair> pairs;
  for (NodeId a = 0; a < n_nodes; ++a) {
    for (NodeId b = a + 1; b < n_nodes; ++b) pairs.push_back({euclid(nodes[a].position, nodes[b].position), a, b});
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    return std::tie(x.length, x.a, x.b) < std::tie(y.length, y.a, y.b);
  });

  const auto budget = static_cast<std::size_t>(std::lround(n_nodes * connectivity / 2.0));
  std::vector<NodeId> parent(n_nodes);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](NodeId x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<std::pair<NodeId, NodeId>> edges;
  std::vector<bool> used(pairs.size(), false);
  for (std::size_t i = 0; i < pairs.size() && edges.size() < budget; ++i) {
    edges.emplace_back(pairs[i].a, pairs[i].b);
    used[i] = true;
    parent[find(pairs[i].a)] = find(pairs[i].b);
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (used[i]) continue;
    NodeId ra = find(pairs[i].a), rb = find(pairs[i].b);
    if (ra != rb) {
      edges.emplace_back(pairs[i].a, pairs[i].b);
      parent[ra] = rb;
    }
  }
  std::sort(edges.begin(), edges.end());

  return WorldGraph("w" + std::to_string(seed), std::move(nodes), std::move(edges), std::move(vocab));
}

State step(const WorldGraph& world, const State& s, const NavAction& a) {
  if (!world.contains(s.node)) throw Error(ErrorCode::invalid_state, "unknown node " + std::to_string(s.node));
  if (a.is_stop()) return s;
  if (!world.contains(a.target) || !world.adjacent(s.node, a.target)) {
    throw Error(ErrorCode::invalid_action, "node " + std::to_string(a.target) +
                                               " is not adjacent to " + std::to_string(s.node));
  }
  const Direction d = world.direction(s.node, a.target);
  return State{a.target, d.heading, d.elevation};
}

Observation observe(const WorldGraph& world, const State& s) {
  if (!world.contains(s.node)) throw Error(ErrorCode::invalid_state, "unknown node " + std::to_string(s.node));
  const int vocab = static_cast<int>(world.landmark_vocab().size());
  Observation obs;
  obs.vocab_size = vocab;
  obs.directional.assign(static_cast<std::size_t>(kDirectionBins * vocab), 0);
  obs.local.assign(static_cast<std::size_t>(vocab), 0);
  for (int l : world.landmark_indices(s.node)) obs.local[l] = 1;
  for (const auto& other : world.nodes()) {
    if (other.id == s.node) continue;
    if (world.distance(s.node, other.id) > world.visibility_radius()) continue;
    const int bin = world.direction(s.node, other.id).bin();
    for (int l : world.landmark_indices(other.id)) obs.directional[static_cast<std::size_t>(bin * vocab + l)] = 1;
  }
  for (NodeId v : world.neighbors(s.node)) obs.neighbor_directions.emplace(v, world.direction(s.node, v));
  return obs;
}

std::vector<NavAction> navigable_actions(const WorldGraph& world, const State& s) {
  std::vector<NavAction> actions{NavAction::stop()};
  for (NodeId v : world.neighbors(s.node)) actions.push_back(NavAction::move_to(v));
  return actions;
}

std::vector<NodeId> shortest_path(const WorldGraph& world, NodeId a, NodeId b) {
  if (!world.contains(a) || !world.contains(b)) throw Error(ErrorCode::invalid_state, "unknown endpoint");
  const auto to_b = distances_from(world, b);
  if (!std::isfinite(to_b[a])) {
    throw Error(ErrorCode::unreachable, "node " + std::to_string(b) + " unreachable from " + std::to_string(a));
  }
  std::vector<NodeId> path{a};
  while (path.back() != b) path.push_back(greedy_next(world, path.back(), to_b));
  return path;
}

double path_metres(const WorldGraph& world, std::span<const NodeId> path) {
  double total = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) total += world.distance(path[i - 1], path[i]);
  return total;
}

std::vector<State> states_along(const WorldGraph& world, std::span<const NodeId> path) {
  std::vector<State> states;
  states.reserve(path.size());
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (!world.contains(path[i])) throw Error(ErrorCode::invalid_state, "unknown node " + std::to_string(path[i]));
    State s{path[i], 0, kLevelElevation};
    if (path.size() > 1) {
      const Direction d = i == 0 ? world.direction(path[0], path[1]) : world.direction(path[i - 1], path[i]);
      s.heading = d.heading;
      s.elevation = d.elevation;
    }
    states.push_back(s);
  }
  return states;
}

GeodesicTable::GeodesicTable(const WorldGraph& world) : world_(&world), n_(world.size()) {
  dist_.resize(n_ * n_);
  for (NodeId s = 0; s < static_cast<NodeId>(n_); ++s) {
    auto row = distances_from(world, s);
    std::copy(row.begin(), row.end(), dist_.begin() + static_cast<std::ptrdiff_t>(s * n_));
  }
}

NodeId GeodesicTable::next_hop(NodeId from, NodeId to) const {
  if (from == to) return from;
  for (NodeId v : world_->neighbors(from)) {
    if (near_equal((*this)(from, to), world_->distance(from, v) + (*this)(v, to))) return v;
  }
  throw Error(ErrorCode::unreachable, "no route from " + std::to_string(from) + " to " + std::to_string(to));
}

nlohmann::json world_to_json(const WorldGraph& world) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : world.nodes()) {
    nodes.push_back({{"id", n.id},
                     {"position", {n.position[0], n.position[1], n.position[2]}},
                     {"landmarks", n.landmarks}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (auto [a, b] : world.edges()) edges.push_back({a, b});
  return {{"world_id", world.id()},
          {"nodes", std::move(nodes)},
          {"edges", std::move(edges)},
          {"landmark_vocab", world.landmark_vocab()},
          {"visibility_radius", world.visibility_radius()}};
}

WorldGraph world_from_json(const nlohmann::json& doc) {
  try {
    std::vector<Node> nodes;
    for (const auto& n : doc.at("nodes")) {
      const auto& p = n.at("position");
      nodes.push_back(Node{n.at("id").get<NodeId>(),
                           {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()},
                           n.at("landmarks").get<std::vector<std::string>>()});
    }
    std::vector<std::pair<NodeId, NodeId>> edges;
    for (const auto& e : doc.at("edges")) edges.emplace_back(e.at(0).get<NodeId>(), e.at(1).get<NodeId>());
    return WorldGraph(doc.at("world_id").get<std::string>(), std::move(nodes), std::move(edges),
                      doc.at("landmark_vocab").get<std::vector<std::string>>(),
                      doc.value("visibility_radius", kDefaultVisibilityRadius));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("world document: ") + e.what());
  }
}

void save_world(const WorldGraph& world, const std::filesystem::path& path) {
  write_text_file_atomic(path, world_to_json(world).dump(1) + "\n");
}

WorldGraph load_world(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::schema_violation, path.string() + ": " + e.what());
  }
  return world_from_json(doc);
}

}  // namespace babywalk
