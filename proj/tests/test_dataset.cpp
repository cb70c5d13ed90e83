#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "babywalk/dataset.hpp"
#include "babywalk/error.hpp"

using namespace babywalk;

namespace {

const Lexicon& lex() {
  static const Lexicon l = default_lexicon();
  return l;
}

template <class F>
Error error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "expected an Error";
  return Error(ErrorCode::io, "none");
}

// Five nodes on a line, 2 m apart, every node carrying a landmark.
WorldGraph line_world() {
  std::vector<Node> nodes;
  const char* names[] = {"sofa", "lamp", "table", "bed", "desk"};
  for (int i = 0; i < 5; ++i) nodes.push_back(Node{i, {2.0 * i, 0, 0}, {names[i]}});
  return WorldGraph("line", nodes, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}, {"sofa", "lamp", "table", "bed", "desk"});
}

Episode make_episode(const std::string& id, std::vector<NodeId> path, const std::string& text) {
  Episode ep;
  ep.episode_id = id;
  ep.world_id = "line";
  ep.instruction = text;
  const int sentences = count_sentences(text);
  ep.gold_segments = std::vector<GoldSegment>{{{0, sentences}, 0, static_cast<int>(path.size())}};
  ep.path = std::move(path);
  return ep;
}

DatasetSplit sample_split(const WorldGraph& w, int count, HopRange hops, std::uint64_t seed0) {
  DatasetSplit split{"base", {}};
  for (int i = 0; i < count; ++i) split.episodes.push_back(sample_expert_episode(w, seed0 + i, hops, lex()));
  return split;
}

// Oracle: find k distinct base episodes whose junction-deduplicated paths and
// period-joined instructions reproduce `ep`.
bool decomposes(const Episode& ep, const DatasetSplit& base, int k) {
  std::vector<bool> used(base.episodes.size(), false);
  auto rec = [&](auto&& self, std::size_t at, std::size_t text_at, int left) -> bool {
    if (left == 0) return at == ep.path.size() && text_at == ep.instruction.size();
    for (std::size_t i = 0; i < base.episodes.size(); ++i) {
      if (used[i]) continue;
      const auto& part = base.episodes[i];
      const std::size_t skip = at == 0 ? 0 : 1;
      if (at != 0 && part.path.front() != ep.path[at - 1]) continue;
      if (at + part.path.size() - skip > ep.path.size()) continue;
      if (!std::equal(part.path.begin() + skip, part.path.end(), ep.path.begin() + at)) continue;
      const std::string text = (text_at == 0 ? "" : " ") + part.instruction;
      if (ep.instruction.compare(text_at, text.size(), text) != 0) continue;
      used[i] = true;
      if (self(self, at + part.path.size() - skip, text_at + text.size(), left - 1)) return true;
      used[i] = false;
    }
    return false;
  };
  return rec(rec, 0, 0, k);
}

}  // namespace

TEST(SampleEpisode, TwoNodeWorld) {
  std::vector<Node> nodes{{0, {0, 0, 0}, {"sofa"}}, {1, {0, 2, 0}, {"sofa"}}};
  WorldGraph w("w", nodes, {{0, 1}}, {"sofa"});
  auto ep = sample_expert_episode(w, 1, {1, 1}, lex());
  EXPECT_EQ(ep.path.size(), 2u);
  EXPECT_EQ(ep.source, EpisodeSource::synthetic);
  EXPECT_TRUE(gold_segments_partition(ep));
  EXPECT_EQ(ep, sample_expert_episode(w, 1, {1, 1}, lex()));
}

TEST(SampleEpisode, HopRangeRespected) {
  auto w = generate_world(4, 40, 12, 3.0);
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto ep = sample_expert_episode(w, s, {2, 3}, lex());
    EXPECT_GE(ep.hops(), 2);
    EXPECT_LE(ep.hops(), 3);
    EXPECT_EQ(ep.path, shortest_path(w, ep.path.front(), ep.path.back()));
    EXPECT_TRUE(gold_segments_partition(ep)) << ep.instruction;
  }
}

TEST(SampleEpisode, Exhaustion) {
  auto w = generate_world(4, 10, 5, 3.0);
  EXPECT_EQ(error_of([&] { sample_expert_episode(w, 1, {30, 30}, lex()); }).code(), ErrorCode::sampling_exhausted);
  EXPECT_EQ(error_of([&] { sample_expert_episode(w, 1, {3, 2}, lex()); }).code(), ErrorCode::invalid_argument);
}

TEST(Concatenate, JunctionDedup) {
  auto w = line_world();
  std::vector<Episode> eps{make_episode("a", {1, 2, 3}, "Walk past the table."),
                           make_episode("b", {3, 4}, "Go to the desk")};
  auto joined = concatenate_episodes(eps, w);
  EXPECT_EQ(joined.path, (std::vector<NodeId>{1, 2, 3, 4}));
  EXPECT_EQ(joined.instruction, "Walk past the table. Go to the desk.");
  EXPECT_EQ(joined.source, EpisodeSource::concatenated);
  ASSERT_TRUE(joined.gold_segments);
  EXPECT_EQ(*joined.gold_segments, (std::vector<GoldSegment>{{{0, 1}, 0, 3}, {{1, 2}, 3, 4}}));
  EXPECT_TRUE(gold_segments_partition(joined));
}

TEST(Concatenate, JoinViolation) {
  auto w = line_world();
  std::vector<Episode> eps{make_episode("a", {0, 1}, "Go."), make_episode("b", {2, 3}, "Go.")};
  auto e = error_of([&] { concatenate_episodes(eps, w, 0.5); });
  EXPECT_EQ(e.code(), ErrorCode::join_violation);
  EXPECT_NE(std::string(e.what()).find("a -> b"), std::string::npos);
  EXPECT_NE(std::string(e.what()).find("2 m"), std::string::npos);
  EXPECT_EQ(concatenate_episodes(eps, w, 2.0).path, (std::vector<NodeId>{0, 1, 2, 3}));
}

TEST(Concatenate, Associative) {
  auto w = line_world();
  auto a = make_episode("a", {0, 1, 2}, "Walk past the lamp. Stop at the table.");
  auto b = make_episode("b", {2, 3}, "Go to the bed");
  auto c = make_episode("c", {3, 4}, "Walk to the desk.");
  std::vector<Episode> ab{a, b}, bc{b, c};
  std::vector<Episode> left{concatenate_episodes(ab, w), c};
  std::vector<Episode> right{a, concatenate_episodes(bc, w)};
  auto l = concatenate_episodes(left, w), r = concatenate_episodes(right, w);
  EXPECT_EQ(l.path, r.path);
  EXPECT_EQ(l.instruction, r.instruction);
  EXPECT_EQ(l.gold_segments, r.gold_segments);
  std::vector<Episode> flat{a, b, c};
  EXPECT_EQ(concatenate_episodes(flat, w).gold_segments, l.gold_segments);
  EXPECT_TRUE(gold_segments_partition(l));
}

TEST(LengthSuite, FactorOneIsIdentity) {
  auto w = generate_world(2, 40, 12, 3.0);
  auto base = sample_split(w, 20, {1, 3}, 1);
  WorldIndex idx{{w.id(), &w}};
  const int f[] = {1};
  auto suite = build_length_suite(base, f, 9, idx);
  EXPECT_EQ(suite.at(1), base);
}

TEST(LengthSuite, ChainsDecomposeAndGrow) {
  auto w = generate_world(2, 40, 12, 3.0);
  auto base = sample_split(w, 80, {1, 3}, 100);
  WorldIndex idx{{w.id(), &w}};
  const int f[] = {1, 2, 3, 4};
  auto suite = build_length_suite(base, f, 9, idx, 25);
  double prev_words = 0.0, prev_steps = 0.0;
  double base_hops = 0.0;
  for (const auto& ep : base.episodes) base_hops += ep.hops();
  base_hops /= static_cast<double>(base.episodes.size());
  for (int k : f) {
    const auto& split = suite.at(k);
    const auto st = split.stats(lex());
    EXPECT_GT(st.mean_instruction_words, prev_words) << k;
    EXPECT_GT(st.mean_babysteps, prev_steps) << k;
    prev_words = st.mean_instruction_words;
    prev_steps = st.mean_babysteps;
    if (k == 1) continue;
    EXPECT_EQ(split.episodes.size(), 25u);
    double hops = 0.0;
    for (const auto& ep : split.episodes) {
      hops += ep.hops();
      EXPECT_TRUE(gold_segments_partition(ep));
      EXPECT_TRUE(decomposes(ep, base, k)) << ep.episode_id;
      for (std::size_t i = 1; i < ep.path.size(); ++i) EXPECT_TRUE(w.adjacent(ep.path[i - 1], ep.path[i]));
    }
    hops /= static_cast<double>(split.episodes.size());
    EXPECT_GT(hops, 0.6 * k * base_hops) << k;
    EXPECT_LT(hops, 1.4 * k * base_hops) << k;
  }
  EXPECT_EQ(build_length_suite(base, f, 9, idx, 25), suite);
}

TEST(LengthSuite, NoChainIsJoinViolation) {
  auto w = line_world();
  DatasetSplit base{"b", {make_episode("a", {0, 1}, "Go."), make_episode("b", {3, 4}, "Go.")}};
  WorldIndex idx{{w.id(), &w}};
  const int f[] = {2};
  EXPECT_EQ(error_of([&] { build_length_suite(base, f, 1, idx); }).code(), ErrorCode::join_violation);
}

TEST(Jsonl, RoundTrip) {
  auto w = generate_world(6, 40, 12, 3.0);
  auto split = sample_split(w, 100, {1, 4}, 7);
  split.episodes[3].babysteps = segment_instruction(split.episodes[3].instruction, lex());
  split.episodes[4].aligned_segments = std::vector<PathSpan>{{0, 2}, {2, static_cast<int>(split.episodes[4].path.size())}};
  split.episodes[5].gold_segments.reset();
  auto back = from_jsonl(to_jsonl(split), split.name);
  EXPECT_EQ(back, split);

  auto tmp = std::filesystem::temp_directory_path() / "babywalk_rt.jsonl";
  save_jsonl(split, tmp);
  auto loaded = load_jsonl(tmp);
  EXPECT_EQ(loaded.episodes, split.episodes);

  DatasetSplit empty{"empty", {}};
  EXPECT_EQ(to_jsonl(empty), "");
  save_jsonl(empty, tmp);
  EXPECT_EQ(std::filesystem::file_size(tmp), 0u);
  EXPECT_TRUE(load_jsonl(tmp).episodes.empty());
  std::filesystem::remove(tmp);
}

TEST(Jsonl, MalformedLineIsCited) {
  auto w = generate_world(6, 40, 12, 3.0);
  auto text = to_jsonl(sample_split(w, 20, {1, 2}, 3));
  std::size_t pos = 0;
  for (int line = 1; line < 17; ++line) pos = text.find('\n', pos) + 1;
  text.insert(pos, "{\"episode_id\": ");
  auto e = error_of([&] { from_jsonl(text, "bad"); });
  EXPECT_EQ(e.code(), ErrorCode::schema_violation);
  EXPECT_NE(std::string(e.what()).find("line 17"), std::string::npos) << e.what();

  auto missing = error_of([] { from_jsonl("{\"episode_id\":\"x\"}\n", "bad"); });
  EXPECT_EQ(missing.code(), ErrorCode::schema_violation);
  EXPECT_NE(std::string(missing.what()).find("line 1"), std::string::npos);
}

TEST(R2R, VariantsAndMapping) {
  const std::string doc = R"([
    {"path_id": 11, "scan": "s1", "heading": 1.5, "path": ["vpA", "vpB", "vpC"],
     "instructions": ["Go left.", "Walk past the sofa.", "Stop."]},
    {"path_id": 12, "scan": "s1", "heading": 0.0, "path": ["vpC", "vpD"], "instructions": ["Go."]}
  ])";
  auto imp = parse_r2r_json(doc, "r2r");
  ASSERT_EQ(imp.split.episodes.size(), 4u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(imp.split.episodes[i].path, (std::vector<NodeId>{0, 1, 2}));
    EXPECT_EQ(imp.split.episodes[i].source, EpisodeSource::imported);
  }
  EXPECT_EQ(imp.split.episodes[3].path, (std::vector<NodeId>{2, 3}));
  EXPECT_EQ(imp.node_ids.at("vpD"), 3);

  auto tmp = std::filesystem::temp_directory_path() / "babywalk_r2r.json";
  std::ofstream(tmp) << doc;
  auto a = load_r2r_json(tmp), b = load_r2r_json(tmp);
  EXPECT_EQ(a.node_ids, b.node_ids);
  EXPECT_EQ(a.split, b.split);
  std::filesystem::remove(tmp);

  EXPECT_EQ(error_of([] { parse_r2r_json(R"([{"scan":"s","heading":0,"instructions":["x"]}])", "r"); }).code(),
            ErrorCode::schema_violation);
  EXPECT_EQ(error_of([] { parse_r2r_json("{", "r"); }).code(), ErrorCode::schema_violation);
}
