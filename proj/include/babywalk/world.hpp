#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace babywalk {

using NodeId = int;
using Position = std::array<double, 3>;

inline constexpr int kHeadingBins = 12;
inline constexpr int kElevationBins = 3;
inline constexpr int kDirectionBins = kHeadingBins * kElevationBins;
inline constexpr int kLevelElevation = 1;
inline constexpr double kDefaultVisibilityRadius = 3.0;

/// Built-in landmark names, in the order the generator draws vocabularies.
std::span<const std::string> default_landmark_names();

struct Node {
  NodeId id = 0;
  Position position{};
  std::vector<std::string> landmarks;  // sorted by vocabulary order
};

/// A cell of the 12 x 3 panoramic grid.
struct Direction {
  int heading = 0;
  int elevation = kLevelElevation;

  int bin() const { return elevation * kHeadingBins + heading; }
  friend bool operator==(const Direction&, const Direction&) = default;
};

struct State {
  NodeId node = 0;
  int heading = 0;
  int elevation = kLevelElevation;

  friend bool operator==(const State&, const State&) = default;
};

struct NavAction {
  enum class Kind : std::uint8_t { stop, move_to };

  Kind kind = Kind::stop;
  NodeId target = -1;

  static NavAction stop() { return {}; }
  static NavAction move_to(NodeId id) { return {Kind::move_to, id}; }
  bool is_stop() const { return kind == Kind::stop; }

  friend bool operator==(const NavAction&, const NavAction&) = default;
};

/// Symbolic panorama: which landmarks are visible in which direction bin.
struct Observation {
  int vocab_size = 0;
  std::vector<std::uint8_t> directional;  // kDirectionBins x vocab_size, row-major
  std::vector<std::uint8_t> local;        // landmarks at the current node
  std::map<NodeId, Direction> neighbor_directions;

  bool visible(int bin, int landmark) const {
    return directional[static_cast<std::size_t>(bin * vocab_size + landmark)] != 0;
  }
  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Immutable navigation graph. Node ids are dense: node i has id i.
class WorldGraph {
 public:
  WorldGraph(std::string world_id, std::vector<Node> nodes,
             std::vector<std::pair<NodeId, NodeId>> edges,
             std::vector<std::string> landmark_vocab,
             double visibility_radius = kDefaultVisibilityRadius);

  const std::string& id() const { return world_id_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const;
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::pair<NodeId, NodeId>>& edges() const { return edges_; }
  const std::vector<std::string>& landmark_vocab() const { return landmark_vocab_; }
  double visibility_radius() const { return visibility_radius_; }

  bool contains(NodeId id) const { return id >= 0 && static_cast<std::size_t>(id) < nodes_.size(); }
  std::span<const NodeId> neighbors(NodeId id) const;
  bool adjacent(NodeId a, NodeId b) const;
  double distance(NodeId a, NodeId b) const;  // straight-line metres
  Direction direction(NodeId from, NodeId to) const;

  std::optional<int> landmark_index(const std::string& name) const;
  /// Vocabulary indices of the landmarks carried by a node.
  const std::vector<int>& landmark_indices(NodeId id) const { return node_landmarks_.at(id); }

  double mean_degree() const;

  friend bool operator==(const WorldGraph& a, const WorldGraph& b);

 private:
  std::string world_id_;
  std::vector<Node> nodes_;
  std::vector<std::pair<NodeId, NodeId>> edges_;
  std::vector<std::string> landmark_vocab_;
  double visibility_radius_;
  std::vector<std::vector<NodeId>> adjacency_;
  std::vector<std::vector<int>> node_landmarks_;
};

WorldGraph generate_world(std::uint64_t seed, int n_nodes, int n_landmarks, double connectivity);

State step(const WorldGraph& world, const State& s, const NavAction& a);
Observation observe(const WorldGraph& world, const State& s);
/// Stop first, then MoveTo in ascending neighbour id.
std::vector<NavAction> navigable_actions(const WorldGraph& world, const State& s);
std::vector<NodeId> shortest_path(const WorldGraph& world, NodeId a, NodeId b);
double path_metres(const WorldGraph& world, std::span<const NodeId> path);
/// States visited along a path. Each state faces along the move that reached
/// it; the first faces along the first move.
std::vector<State> states_along(const WorldGraph& world, std::span<const NodeId> path);

/// All-pairs graph geodesics, used for expert actions and metrics.
class GeodesicTable {
 public:
  explicit GeodesicTable(const WorldGraph& world);

  double operator()(NodeId a, NodeId b) const { return dist_[index(a, b)]; }
  /// First node after `from` on the id-lexicographically smallest shortest
  /// path to `to`; returns `from` when already there.
  NodeId next_hop(NodeId from, NodeId to) const;

 private:
  std::size_t index(NodeId a, NodeId b) const { return static_cast<std::size_t>(a) * n_ + b; }

  const WorldGraph* world_;
  std::size_t n_;
  std::vector<double> dist_;
};

nlohmann::json world_to_json(const WorldGraph& world);
WorldGraph world_from_json(const nlohmann::json& doc);
void save_world(const WorldGraph& world, const std::filesystem::path& path);
WorldGraph load_world(const std::filesystem::path& path);

}  // namespace babywalk
