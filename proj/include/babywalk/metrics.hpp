#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "babywalk/dataset.hpp"
#include "babywalk/world.hpp"
#include "json.hpp"

namespace babywalk {

/// Symmetric node-pair distance in metres, zero on the diagonal.
using DistanceFn = std::function<double(NodeId, NodeId)>;

struct PathPair {
  std::span<const NodeId> predicted;
  std::span<const NodeId> reference;
  DistanceFn distance;
};

struct MetricConfig {
  double success_threshold = 3.0;  // metres, inclusive
  double dtw_threshold = 3.0;      // d_th for CLS and nDTW
};

double path_length(std::span<const NodeId> path, const DistanceFn& distance);
double navigation_error(const PathPair& pair);
double success(const PathPair& pair, double threshold);
double spl(const PathPair& pair, double threshold);
double path_coverage(const PathPair& pair, double d_th);
double cls(const PathPair& pair, double d_th);
/// Classic DTW with match / insert / delete moves.
double dtw(const PathPair& pair);
double ndtw(const PathPair& pair, double d_th);
double sdtw(const PathPair& pair, double threshold, double d_th);

struct EpisodeMetrics {
  std::string episode_id;
  double pl = 0, ne = 0, sr = 0, spl = 0, cls = 0, ndtw = 0, sdtw = 0;
  friend bool operator==(const EpisodeMetrics&, const EpisodeMetrics&) = default;
};

EpisodeMetrics score_episode(std::string episode_id, const PathPair& pair, const MetricConfig& config);

struct MetricReport {
  std::vector<EpisodeMetrics> records;

  std::size_t count() const { return records.size(); }
  /// Unweighted means; episode_id is "mean".
  EpisodeMetrics means() const;
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// Distance function for the world an episode lives in.
using EpisodeDistance = std::function<DistanceFn(const Episode&)>;

/// Scores rollouts[i] against episodes[i].path, preserving episode order;
/// `threads` > 1 fans out without changing the result.
MetricReport evaluate_split(std::span<const Episode> episodes,
                            std::span<const std::vector<NodeId>> rollouts,
                            const EpisodeDistance& distance_for, const MetricConfig& config,
                            int threads = 1);

inline constexpr const char* kReportColumns = "episode_id,pl,ne,sr,spl,cls,ndtw,sdtw";

std::string report_to_csv(const MetricReport& report);
nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& doc);
nlohmann::json aggregate_json(const MetricReport& report);

/// Means per instruction-length bucket (equal-width in word count).
std::string bucketed_csv(const MetricReport& report, std::span<const Episode> episodes, int buckets);

/// Precomputed pairwise distances for imported data.
class DistanceTable {
 public:
  void set(NodeId a, NodeId b, double metres);
  double operator()(NodeId a, NodeId b) const;
  std::size_t size() const { return table_.size(); }

 private:
  std::map<std::pair<NodeId, NodeId>, double> table_;
};

/// Parses `node_a,node_b,meters` rows. Node fields are looked up in
/// `node_ids` when given (viewpoint names), otherwise parsed as integers.
DistanceTable parse_distance_csv(std::string_view text, const std::map<std::string, NodeId>* node_ids = nullptr);
DistanceTable load_distance_csv(const std::filesystem::path& path,
                                const std::map<std::string, NodeId>* node_ids = nullptr);

}  // namespace babywalk
