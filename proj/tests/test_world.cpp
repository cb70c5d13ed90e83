#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "babywalk/error.hpp"
#include "babywalk/world.hpp"

using namespace babywalk;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::io;
}

// Regular ring of `n` nodes with unit-length edges, ids assigned by `order`.
WorldGraph ring(int n, std::vector<int> order = {}) {
  if (order.empty()) {
    order.resize(n);
    for (int i = 0; i < n; ++i) order[i] = i;
  }
  const double radius = 0.5 / std::sin(std::numbers::pi / n);
  std::vector<Node> nodes(n);
  for (int k = 0; k < n; ++k) {
    const double t = 2.0 * std::numbers::pi * k / n;
    nodes[order[k]] = Node{order[k], {radius * std::sin(t), radius * std::cos(t), 0.0}, {}};
  }
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (int k = 0; k < n; ++k) edges.emplace_back(order[k], order[(k + 1) % n]);
  return WorldGraph("ring", std::move(nodes), std::move(edges), {"sofa"});
}

// Independent oracle: enumerate every simple path, keep the metric minimum,
// break ties by the lexicographically smallest id sequence.
std::vector<NodeId> brute_shortest(const WorldGraph& w, NodeId a, NodeId b) {
  std::vector<NodeId> best, cur{a};
  double best_len = INFINITY;
  std::vector<bool> on(w.size(), false);
  on[a] = true;
  auto dfs = [&](auto&& self, double len) -> void {
    NodeId u = cur.back();
    if (u == b) {
      if (len < best_len - 1e-9 || (std::abs(len - best_len) <= 1e-9 && cur < best)) {
        best_len = len;
        best = cur;
      }
      return;
    }
    for (NodeId v : w.neighbors(u)) {
      if (on[v]) continue;
      on[v] = true;
      cur.push_back(v);
      self(self, len + w.distance(u, v));
      cur.pop_back();
      on[v] = false;
    }
  };
  dfs(dfs, 0.0);
  return best;
}

}  // namespace

TEST(GenerateWorld, TwoNodesGiveOneEdge) {
  auto w = generate_world(7, 2, 1, 1.0);
  EXPECT_EQ(w.size(), 2u);
  ASSERT_EQ(w.edges().size(), 1u);
  EXPECT_TRUE(w.adjacent(0, 1));
}

TEST(GenerateWorld, Deterministic) {
  auto a = generate_world(7, 40, 12, 3.0);
  auto b = generate_world(7, 40, 12, 3.0);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(world_to_json(a).dump(), world_to_json(b).dump());
  EXPECT_FALSE(a == generate_world(8, 40, 12, 3.0));
}

TEST(GenerateWorld, MeanDegreeRegression) {
  auto w = generate_world(7, 40, 12, 3.0);
  EXPECT_EQ(w.size(), 40u);
  EXPECT_GE(w.mean_degree(), 2.0);
  EXPECT_LE(w.mean_degree(), 4.0);
  // Frozen from the first build.
  EXPECT_EQ(w.edges().size(), 64u);
  EXPECT_NEAR(w.mean_degree(), 3.2, 1e-12);
}

TEST(GenerateWorld, RejectsImpossibleParameters) {
  EXPECT_EQ(code_of([] { generate_world(1, 0, 1, 1.0); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { generate_world(1, 1, 1, 1.0); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { generate_world(1, 5, 0, 1.0); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { generate_world(1, 5, 2, 0.5); }), ErrorCode::invalid_argument);
}

TEST(GenerateWorld, InvariantsHoldAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    auto w = generate_world(seed, 30, 8, 2.5);
    for (auto [a, b] : w.edges()) EXPECT_GT(w.distance(a, b), 0.0);
    for (const auto& n : w.nodes()) {
      EXPECT_LE(n.landmarks.size(), 3u);
      for (const auto& l : n.landmarks) EXPECT_TRUE(w.landmark_index(l).has_value());
    }
    // Connected: every node reachable from node 0.
    GeodesicTable geo(w);
    for (NodeId v = 0; v < static_cast<NodeId>(w.size()); ++v) EXPECT_TRUE(std::isfinite(geo(0, v)));
  }
}

TEST(WorldGraph, ConstructorValidates) {
  auto node = [](int id, double x) { return Node{id, {x, 0, 0}, {}}; };
  EXPECT_EQ(code_of([&] { WorldGraph("w", {}, {}, {}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([&] { WorldGraph("w", {node(0, 0), node(1, 0)}, {{0, 1}}, {}); }),
            ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([&] { WorldGraph("w", {node(0, 0), node(1, 1), node(2, 2)}, {{0, 1}}, {}); }),
            ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([&] {
              WorldGraph("w", {Node{0, {0, 0, 0}, {"lamp"}}, node(1, 1)}, {{0, 1}}, {"sofa"});
            }),
            ErrorCode::invalid_argument);
}

TEST(Step, StopIsIdentity) {
  auto w = generate_world(3, 12, 4, 2.5);
  for (NodeId n = 0; n < 12; ++n) {
    for (int h = 0; h < kHeadingBins; ++h) {
      State s{n, h, h % kElevationBins};
      EXPECT_EQ(step(w, s, NavAction::stop()), s);
    }
  }
}

TEST(Step, MoveToSetsTraversedHeading) {
  auto w = ring(4);  // node 0 at north, 1 east, 2 south, 3 west
  State s{0, 5, 1};
  State t = step(w, s, NavAction::move_to(1));
  EXPECT_EQ(t.node, 1);
  // 0 -> 1 heads south-east: azimuth 135 degrees, bin round(4.5) rounds away from zero.
  EXPECT_EQ(t.heading, 5);
  EXPECT_EQ(t.elevation, kLevelElevation);
  EXPECT_EQ(step(w, State{1, 0, 1}, NavAction::move_to(2)).heading, 8);  // 225 degrees
}

TEST(Step, NonAdjacentMoveIsInvalidAction) {
  auto w = ring(5);
  EXPECT_EQ(code_of([&] { step(w, State{0, 0, 1}, NavAction::move_to(2)); }), ErrorCode::invalid_action);
  EXPECT_EQ(code_of([&] { step(w, State{0, 0, 1}, NavAction::move_to(0)); }), ErrorCode::invalid_action);
  EXPECT_EQ(code_of([&] { step(w, State{9, 0, 1}, NavAction::stop()); }), ErrorCode::invalid_state);
}

TEST(Step, NavigableActionsNeverErrorOthersDo) {
  auto w = generate_world(11, 20, 6, 3.0);
  for (NodeId n = 0; n < 20; ++n) {
    State s{n, 0, 1};
    auto acts = navigable_actions(w, s);
    for (const auto& a : acts) EXPECT_NO_THROW(step(w, s, a));
    for (NodeId m = 0; m < 20; ++m) {
      auto a = NavAction::move_to(m);
      if (std::find(acts.begin(), acts.end(), a) == acts.end()) {
        EXPECT_EQ(code_of([&] { step(w, s, a); }), ErrorCode::invalid_action);
      }
    }
  }
}

TEST(Direction, ElevationBins) {
  std::vector<Node> nodes{{0, {0, 0, 0}, {}}, {1, {0, 1, 1}, {}}, {2, {0, 1, -1}, {}}, {3, {0, 10, 1}, {}}};
  WorldGraph w("w", nodes, {{0, 1}, {0, 2}, {0, 3}}, {});
  EXPECT_EQ(w.direction(0, 1), (Direction{0, 2}));
  EXPECT_EQ(w.direction(0, 2), (Direction{0, 0}));
  EXPECT_EQ(w.direction(0, 3), (Direction{0, 1}));  // under 15 degrees of pitch
}

TEST(Observe, EmptyWhenNoLandmarkInRadius) {
  std::vector<Node> nodes{{0, {0, 0, 0}, {}}, {1, {0, 2, 0}, {}}, {2, {0, 20, 0}, {"sofa"}}};
  WorldGraph w("w", nodes, {{0, 1}, {1, 2}}, {"sofa", "lamp"});
  auto obs = observe(w, State{0, 0, 1});
  EXPECT_TRUE(std::all_of(obs.directional.begin(), obs.directional.end(), [](auto b) { return b == 0; }));
  EXPECT_EQ(obs.directional.size(), static_cast<std::size_t>(kDirectionBins * 2));
}

TEST(Observe, SofaDueNorth) {
  std::vector<Node> nodes{{0, {0, 0, 0}, {}}, {1, {0, 2, 0}, {"sofa"}}};
  WorldGraph w("w", nodes, {{0, 1}}, {"lamp", "sofa"});
  auto obs = observe(w, State{0, 7, 1});
  const int north = Direction{0, kLevelElevation}.bin();
  int set = 0;
  for (auto b : obs.directional) set += b;
  EXPECT_EQ(set, 1);
  EXPECT_TRUE(obs.visible(north, 1));
  ASSERT_EQ(obs.neighbor_directions.size(), 1u);
  EXPECT_EQ(obs.neighbor_directions.at(1), (Direction{0, kLevelElevation}));
  EXPECT_EQ(obs.local, (std::vector<std::uint8_t>{0, 0}));
  // From the sofa node the sofa is local, not directional.
  auto here = observe(w, State{1, 0, 1});
  EXPECT_EQ(here.local, (std::vector<std::uint8_t>{0, 1}));
}

TEST(Observe, BitsPointAtLandmarkedNodesInRadius) {
  auto w = generate_world(5, 30, 10, 3.0);
  const int vocab = static_cast<int>(w.landmark_vocab().size());
  for (NodeId n = 0; n < 30; ++n) {
    auto obs = observe(w, State{n, 0, 1});
    EXPECT_EQ(obs, observe(w, State{n, 0, 1}));
    for (int bin = 0; bin < kDirectionBins; ++bin) {
      for (int l = 0; l < vocab; ++l) {
        if (!obs.visible(bin, l)) continue;
        bool justified = false;
        for (const auto& o : w.nodes()) {
          if (o.id == n || w.distance(n, o.id) > w.visibility_radius()) continue;
          const auto& idx = w.landmark_indices(o.id);
          if (w.direction(n, o.id).bin() == bin && std::find(idx.begin(), idx.end(), l) != idx.end()) {
            justified = true;
          }
        }
        EXPECT_TRUE(justified) << "node " << n << " bin " << bin << " landmark " << l;
      }
    }
  }
}

TEST(NavigableActions, StopFirstThenAscendingNeighbors) {
  auto two = generate_world(7, 2, 1, 1.0);
  auto acts = navigable_actions(two, State{0, 0, 1});
  EXPECT_EQ(acts, (std::vector<NavAction>{NavAction::stop(), NavAction::move_to(1)}));

  auto w = generate_world(9, 25, 6, 3.0);
  for (NodeId n = 0; n < 25; ++n) {
    auto a = navigable_actions(w, State{n, 0, 1});
    EXPECT_EQ(a.size(), w.neighbors(n).size() + 1);
    EXPECT_TRUE(a.front().is_stop());
    for (std::size_t i = 2; i < a.size(); ++i) EXPECT_LT(a[i - 1].target, a[i].target);
    EXPECT_EQ(a, navigable_actions(w, State{n, 3, 0}));
  }
}

TEST(ShortestPath, TrivialCases) {
  auto two = generate_world(7, 2, 1, 1.0);
  EXPECT_EQ(shortest_path(two, 1, 1), (std::vector<NodeId>{1}));
  EXPECT_EQ(shortest_path(two, 0, 1), (std::vector<NodeId>{0, 1}));
}

TEST(ShortestPath, RingTieBreaksLexicographically) {
  // In a 4-ring both arcs between opposite nodes are 2 hops: 0-1-2 beats 0-3-2.
  auto sq = ring(4);
  EXPECT_EQ(shortest_path(sq, 0, 2), (std::vector<NodeId>{0, 1, 2}));
  EXPECT_EQ(shortest_path(sq, 2, 0), (std::vector<NodeId>{2, 1, 0}));
  EXPECT_EQ(shortest_path(sq, 1, 3), (std::vector<NodeId>{1, 0, 3}));
  // Mirrored labelling: node 3 is now east of 0, but [0,1,2] still wins.
  auto mirrored = ring(4, {0, 3, 2, 1});
  EXPECT_EQ(shortest_path(mirrored, 0, 2), (std::vector<NodeId>{0, 1, 2}));
  EXPECT_EQ(mirrored.direction(0, 3), sq.direction(0, 1));
  // In the 5-ring the 2-hop arc is the unique minimum.
  auto pent = ring(5);
  EXPECT_EQ(shortest_path(pent, 0, 2), (std::vector<NodeId>{0, 1, 2}));
  EXPECT_EQ(shortest_path(pent, 0, 3), (std::vector<NodeId>{0, 4, 3}));
  EXPECT_NEAR(path_metres(pent, shortest_path(pent, 0, 2)), 2.0, 1e-12);
}

TEST(ShortestPath, MatchesBruteForceAndIsSymmetric) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    auto w = generate_world(seed, 9, 3, 2.5);
    GeodesicTable geo(w);
    for (NodeId a = 0; a < 9; ++a) {
      for (NodeId b = 0; b < 9; ++b) {
        auto p = shortest_path(w, a, b);
        EXPECT_EQ(p, brute_shortest(w, a, b)) << "seed " << seed << " " << a << "->" << b;
        EXPECT_NEAR(path_metres(w, p), path_metres(w, shortest_path(w, b, a)), 1e-9);
        EXPECT_NEAR(path_metres(w, p), geo(a, b), 1e-9);
        if (a != b) EXPECT_EQ(geo.next_hop(a, b), p[1]);
      }
    }
  }
}

TEST(StatesAlong, FacesAlongEachMove) {
  auto sq = ring(4);
  auto st = states_along(sq, std::vector<NodeId>{0, 1, 2});
  ASSERT_EQ(st.size(), 3u);
  EXPECT_EQ(st[0], (State{0, sq.direction(0, 1).heading, 1}));
  EXPECT_EQ(st[1], step(sq, st[0], NavAction::move_to(1)));
  EXPECT_EQ(st[2], step(sq, st[1], NavAction::move_to(2)));
}

TEST(WorldJson, RoundTrip) {
  auto w = generate_world(13, 20, 6, 3.0);
  auto back = world_from_json(world_to_json(w));
  EXPECT_TRUE(back == w);
  auto tmp = std::filesystem::temp_directory_path() / "babywalk_world_rt.json";
  save_world(w, tmp);
  EXPECT_TRUE(load_world(tmp) == w);
  std::filesystem::remove(tmp);
  EXPECT_EQ(code_of([] { world_from_json(nlohmann::json{{"world_id", "x"}}); }), ErrorCode::schema_violation);
}
