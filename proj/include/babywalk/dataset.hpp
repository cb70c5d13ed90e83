#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "babywalk/instruction.hpp"
#include "babywalk/world.hpp"
#include "json.hpp"

namespace babywalk {

enum class EpisodeSource { synthetic, concatenated, imported };

/// Half-open range of path indices.
struct PathSpan {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  friend bool operator==(const PathSpan&, const PathSpan&) = default;
};

/// An instruction paired with its expert path. `babysteps` and
/// `aligned_segments` are filled in by the segment and align stages.
struct Episode {
  std::string episode_id;
  std::string world_id;
  std::string instruction;
  std::vector<NodeId> path;
  std::optional<std::vector<GoldSegment>> gold_segments;
  EpisodeSource source = EpisodeSource::synthetic;
  std::optional<std::vector<BabyStep>> babysteps;
  std::optional<std::vector<PathSpan>> aligned_segments;

  int hops() const { return static_cast<int>(path.size()) - 1; }
  friend bool operator==(const Episode&, const Episode&) = default;
};

struct SplitStats {
  std::size_t count = 0;
  double mean_instruction_words = 0.0;
  double mean_babysteps = 0.0;
};

struct DatasetSplit {
  std::string name;
  std::vector<Episode> episodes;

  /// Always recomputed from the episodes.
  SplitStats stats(const Lexicon& lexicon) const;
  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

struct HopRange {
  int min = 1;
  int max = 1;
};

inline constexpr double kDefaultJoinRadius = 0.5;

/// Shortest path between two sampled nodes with a hop count in range, plus a
/// synthesized instruction and its gold alignment.
Episode sample_expert_episode(const WorldGraph& world, std::uint64_t seed, HopRange hops,
                              const Lexicon& lexicon);

/// Whether gold segments partition both the sentences of `instruction` and
/// the path.
bool gold_segments_partition(const Episode& episode);

int count_sentences(std::string_view text);

Episode concatenate_episodes(std::span<const Episode> episodes, const WorldGraph& world,
                             double join_radius = kDefaultJoinRadius);

using WorldIndex = std::map<std::string, const WorldGraph*>;

/// factor -> split of episodes chained from `factor` join-compatible base
/// episodes. `count` = 0 means "as many as the base split".
std::map<int, DatasetSplit> build_length_suite(const DatasetSplit& base, std::span<const int> factors,
                                               std::uint64_t seed, const WorldIndex& worlds,
                                               std::size_t count = 0,
                                               double join_radius = kDefaultJoinRadius);

nlohmann::ordered_json episode_to_json(const Episode& episode);
Episode episode_from_json(const nlohmann::json& doc);

std::string to_jsonl(const DatasetSplit& split);
DatasetSplit from_jsonl(std::string_view text, std::string name);
void save_jsonl(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit load_jsonl(const std::filesystem::path& path);

/// Episodes read from the public R2R/R4R JSON layout plus the viewpoint ->
/// integer id mapping (first-appearance order, so stable across loads).
struct R2RImport {
  DatasetSplit split;
  std::map<std::string, NodeId> node_ids;
};

R2RImport load_r2r_json(const std::filesystem::path& path);
R2RImport parse_r2r_json(std::string_view text, std::string name);

}  // namespace babywalk
