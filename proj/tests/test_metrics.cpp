#include <gtest/gtest.h>

#include <cmath>

#include "babywalk/error.hpp"
#include "babywalk/metrics.hpp"
#include "oracles.hpp"

using namespace babywalk;

namespace {

// Nodes on the x axis, 1 m apart: distance |a - b|.
double line(NodeId a, NodeId b) { return std::abs(a - b); }

PathPair pair_of(const std::vector<NodeId>& p, const std::vector<NodeId>& r, DistanceFn d = line) {
  return PathPair{p, r, std::move(d)};
}

std::vector<NodeId> random_walk(const WorldGraph& w, CounterRng& rng, int max_len) {
  std::vector<NodeId> p{static_cast<NodeId>(rng.below(w.size()))};
  const int len = rng.uniform_int(1, max_len);
  while (static_cast<int>(p.size()) < len) {
    auto nb = w.neighbors(p.back());
    p.push_back(nb[rng.below(nb.size())]);
  }
  return p;
}

}  // namespace

TEST(PathLength, Examples) {
  EXPECT_EQ(path_length(std::vector<NodeId>{4}, line), 0.0);
  EXPECT_EQ(path_length(std::vector<NodeId>{0, 2}, line), 2.0);
  EXPECT_EQ(path_length(std::vector<NodeId>{0, 3, 1}, line), 5.0);
}

TEST(NavigationError, Examples) {
  EXPECT_EQ(navigation_error(pair_of({0, 1, 5}, {0, 5})), 0.0);
  EXPECT_EQ(navigation_error(pair_of({0, 1}, {0, 5})), 4.0);
  EXPECT_EQ(navigation_error(pair_of({9, 3, 7, 1}, {0, 5})), 4.0);
  EXPECT_THROW(navigation_error(pair_of({}, {0, 5})), Error);
}

TEST(Success, InclusiveBoundary) {
  EXPECT_EQ(success(pair_of({0, 5}, {0, 5}), 3.0), 1.0);
  EXPECT_EQ(success(pair_of({0, 2}, {0, 5}), 3.0), 1.0);
  auto d = [](NodeId a, NodeId b) { return a == b ? 0.0 : 3.0 + 1e-9; };
  EXPECT_EQ(success(pair_of({0, 2}, {0, 5}, d), 3.0), 0.0);
}

TEST(Spl, Examples) {
  EXPECT_EQ(spl(pair_of({0, 1}, {0, 9}), 3.0), 0.0);
  EXPECT_EQ(spl(pair_of({0, 1, 2, 3, 4}, {0, 4}), 3.0), 1.0);
  EXPECT_DOUBLE_EQ(spl(pair_of({0, 6, 4}, {0, 4}), 3.0), 4.0 / 8.0);
}

TEST(Cls, IdenticalIsOne) {
  EXPECT_DOUBLE_EQ(cls(pair_of({0, 1, 2, 3}, {0, 1, 2, 3}), 3.0), 1.0);
}

TEST(Cls, StartNodeOnlyOnUnitLine) {
  // PC = (1 + e^-1/3 + e^-2/3) / 3, PL = 0, so LS = EPL / (EPL + EPL) = 1/2.
  const double pc = (1.0 + std::exp(-1.0 / 3.0) + std::exp(-2.0 / 3.0)) / 3.0;
  const std::vector<NodeId> start{0}, ref{0, 1, 2};
  const auto p = pair_of(start, ref);
  EXPECT_NEAR(path_coverage(p, 3.0), pc, 1e-15);
  EXPECT_NEAR(cls(p, 3.0), pc / 2.0, 1e-15);
  EXPECT_NEAR(cls(p, 3.0), 0.37166, 1e-5);
  EXPECT_LT(cls(p, 3.0), 0.5);
}

TEST(Cls, ReversalKeepsScore) {
  EXPECT_DOUBLE_EQ(cls(pair_of({0, 2, 5, 3}, {0, 1, 2, 3}), 3.0), cls(pair_of({3, 5, 2, 0}, {0, 1, 2, 3}), 3.0));
}

TEST(Ndtw, IdenticalAndPositive) {
  EXPECT_EQ(ndtw(pair_of({0, 1, 2}, {0, 1, 2}), 3.0), 1.0);
  EXPECT_GT(ndtw(pair_of({0}, {100, 200, 300}), 3.0), 0.0);
}

TEST(Ndtw, LadderGivesInverseE) {
  // Two rails of 5 nodes, 1 m spacing, joined by 3 m rungs: node i on rail A
  // and node j on rail B are 3 + |i - j| apart under graph geodesics.
  std::vector<Node> nodes;
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (int i = 0; i < 5; ++i) {
    nodes.push_back(Node{i, {static_cast<double>(i), 0, 0}, {}});
    nodes.push_back(Node{i + 5, {static_cast<double>(i), 3, 0}, {}});
  }
  std::sort(nodes.begin(), nodes.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
  for (int i = 0; i < 5; ++i) {
    edges.emplace_back(i, i + 5);
    if (i + 1 < 5) {
      edges.emplace_back(i, i + 1);
      edges.emplace_back(i + 5, i + 6);
    }
  }
  WorldGraph w("ladder", nodes, edges, {});
  GeodesicTable geo(w);
  DistanceFn d = [&](NodeId a, NodeId b) { return geo(a, b); };
  const std::vector<NodeId> p{0, 1, 2, 3, 4}, r{5, 6, 7, 8, 9};
  EXPECT_DOUBLE_EQ(dtw(pair_of(p, r, d)), 15.0);
  EXPECT_NEAR(ndtw(pair_of(p, r, d), 3.0), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(ndtw(pair_of(p, r, d), 3.0), 0.3679, 1e-4);
}

TEST(Ndtw, MatchesEnumerationOracle) {
  CounterRng rng(2024, 1);
  for (int trial = 0; trial < 300; ++trial) {
    const auto table = oracle::random_distances(8, rng);
    DistanceFn d = [&](NodeId a, NodeId b) { return table[a][b]; };
    std::vector<NodeId> p(rng.uniform_int(1, 6)), r(rng.uniform_int(1, 6));
    for (auto& x : p) x = static_cast<NodeId>(rng.below(8));
    for (auto& x : r) x = static_cast<NodeId>(rng.below(8));
    EXPECT_EQ(dtw(pair_of(p, r, d)), oracle::enumerate_dtw(p, r, d));
    EXPECT_EQ(ndtw(pair_of(p, r, d), 3.0), oracle::enumerate_ndtw(p, r, d, 3.0));
  }
}

TEST(Sdtw, Examples) {
  EXPECT_EQ(sdtw(pair_of({0, 1}, {0, 9}), 3.0, 3.0), 0.0);
  EXPECT_EQ(sdtw(pair_of({0, 9}, {0, 9}), 3.0, 3.0), 1.0);
}

TEST(Properties, IdentitiesBoundsAndScaling) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto w = generate_world(seed, 30, 8, 3.0);
    GeodesicTable geo(w);
    DistanceFn d = [&](NodeId a, NodeId b) { return geo(a, b); };
    DistanceFn d3 = [&](NodeId a, NodeId b) { return 2.5 * geo(a, b); };
    CounterRng rng(seed, 9);
    for (int trial = 0; trial < 100; ++trial) {
      auto p = random_walk(w, rng, 10), r = random_walk(w, rng, 10);
      EXPECT_NEAR(ndtw(pair_of(p, p, d), 3.0), 1.0, 1e-9);
      EXPECT_NEAR(cls(pair_of(r, r, d), 3.0), 1.0, 1e-9);
      auto m = score_episode("e", pair_of(p, r, d), MetricConfig{});
      EXPECT_LE(m.sdtw, std::min(m.ndtw, m.sr));
      EXPECT_LE(m.spl, m.sr);
      for (double v : {m.sr, m.spl, m.cls, m.ndtw, m.sdtw}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      auto scaled = score_episode("e", pair_of(p, r, d3), MetricConfig{7.5, 7.5});
      EXPECT_NEAR(scaled.cls, m.cls, 1e-9);
      EXPECT_NEAR(scaled.ndtw, m.ndtw, 1e-9);
      EXPECT_NEAR(scaled.sdtw, m.sdtw, 1e-9);
    }
  }
}

TEST(EvaluateSplit, PerfectRolloutsAndThreads) {
  auto w = generate_world(3, 40, 12, 3.0);
  GeodesicTable geo(w);
  std::vector<Episode> eps;
  std::vector<std::vector<NodeId>> perfect, noisy;
  CounterRng rng(4, 4);
  for (int i = 0; i < 37; ++i) {
    Episode e;
    e.episode_id = "e" + std::to_string(i);
    e.world_id = w.id();
    e.path = random_walk(w, rng, 8);
    if (e.path.size() < 2) e.path.push_back(w.neighbors(e.path[0])[0]);
    perfect.push_back(e.path);
    noisy.push_back(random_walk(w, rng, 8));
    eps.push_back(e);
  }
  EpisodeDistance dist = [&](const Episode&) -> DistanceFn { return [&](NodeId a, NodeId b) { return geo(a, b); }; };
  auto rep = evaluate_split(eps, perfect, dist, MetricConfig{});
  auto mean = rep.means();
  EXPECT_EQ(mean.sr, 1.0);
  EXPECT_NEAR(mean.cls, 1.0, 1e-12);
  EXPECT_EQ(mean.ndtw, 1.0);
  EXPECT_EQ(mean.sdtw, 1.0);
  EXPECT_EQ(mean.ne, 0.0);

  auto one = evaluate_split(eps, noisy, dist, MetricConfig{}, 1);
  auto four = evaluate_split(eps, noisy, dist, MetricConfig{}, 4);
  EXPECT_EQ(one, four);
  EXPECT_EQ(report_to_csv(one), report_to_csv(four));
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_EQ(one.records[i].episode_id, eps[i].episode_id);

  EXPECT_EQ(report_from_json(report_to_json(one)), one);
  std::vector<Episode> none;
  std::vector<std::vector<NodeId>> no_rollouts;
  try {
    evaluate_split(none, no_rollouts, dist, MetricConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_data);
  }
}

TEST(Report, CsvLayout) {
  MetricReport rep;
  rep.records.push_back({"a", 1, 0, 1, 1, 0.5, 0.25, 0.25});
  rep.records.push_back({"b", 3, 2, 0, 0, 0.5, 0.75, 0});
  const auto csv = report_to_csv(rep);
  EXPECT_EQ(csv,
            "episode_id,pl,ne,sr,spl,cls,ndtw,sdtw\n"
            "a,1,0,1,1,0.5,0.25,0.25\n"
            "b,3,2,0,0,0.5,0.75,0\n"
            "mean,2,1,0.5,0.5,0.5,0.5,0.125\n");
  auto agg = aggregate_json(rep);
  EXPECT_EQ(agg["count"], 2);
  EXPECT_EQ(agg["means"]["sdtw"], 0.125);
}

TEST(DistanceTable, CsvParsing) {
  auto t = parse_distance_csv("node_a,node_b,meters\n0,1,2.5\n1,2,4\n");
  EXPECT_EQ(t(1, 0), 2.5);
  EXPECT_EQ(t(2, 1), 4.0);
  EXPECT_EQ(t(2, 2), 0.0);
  EXPECT_THROW(t(0, 2), Error);
  std::map<std::string, NodeId> ids{{"vpA", 0}, {"vpB", 1}};
  auto named = parse_distance_csv("vpA,vpB,1.5\n", &ids);
  EXPECT_EQ(named(0, 1), 1.5);
  try {
    parse_distance_csv("0,1,2\n0,1\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::schema_violation);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_distance_csv("vpA,vpZ,1\n", &ids), Error);
}
