#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "babywalk/agent.hpp"
#include "babywalk/aligner.hpp"
#include "babywalk/dataset.hpp"
#include "babywalk/metrics.hpp"
#include "babywalk/world.hpp"
#include "json.hpp"

namespace babywalk {

enum class OptimizerKind : std::uint8_t { sgd, adam };

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-4;
  double discount = 0.95;
  int il_iters = 2000;
  int il_batch = 16;  // BabySteps per imitation update
  int rl_iters_per_lecture = 100;
  int lectures = 4;
  int episodes_per_update = 8;  // sampled rollouts per instruction
  std::vector<int> lecture_batch = {50, 32, 20, 20};
  int eval_every = 0;  // 0: evaluate once at the end of each lecture
  OptimizerKind optimizer = OptimizerKind::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int landmark_epochs = 300;
  double landmark_lr = 1e-4;
  std::uint64_t seed = 0;
  int threads = 1;
  MetricConfig metrics;

  void validate() const;
  /// Instructions per RL update in lecture k (1-based); the last entry
  /// repeats for lectures beyond the list.
  int batch_for_lecture(int k) const;
};

/// Flat key/value document covering TrainConfig and AgentConfig.
nlohmann::ordered_json config_to_json(const TrainConfig& train, const AgentConfig& agent);
/// Unknown keys are errors.
void apply_config_json(const nlohmann::json& doc, TrainConfig& train, AgentConfig& agent);
void load_config_file(const std::filesystem::path& path, TrainConfig& train, AgentConfig& agent);

/// An episode with BabySteps and aligned path spans that partition its path.
struct AlignedEpisode {
  Episode episode;
  std::vector<BabyStep> steps;
  std::vector<PathSpan> spans;
  const WorldView* view = nullptr;

  int size() const { return static_cast<int>(steps.size()); }
  /// Node where BabyStep m starts and the expert state there.
  NodeId entry_node(int m) const;
  AgentState entry_state(int m) const;
  /// Final expert node of BabyStep m.
  NodeId end_node(int m) const;
  /// Nodes the expert visits while executing BabyStep m (entry excluded).
  std::span<const NodeId> step_nodes(int m) const;
  /// Path from the entry of BabyStep `first` to the end of the instruction.
  std::vector<NodeId> sub_reference(int first) const;
};

/// Owns the world views that aligned episodes point into.
class WorldViews {
 public:
  explicit WorldViews(const WorldIndex& worlds);
  const WorldView& at(const std::string& world_id) const;
  DistanceFn distance(const std::string& world_id) const;
  EpisodeDistance episode_distance() const;

 private:
  std::map<std::string, std::unique_ptr<WorldView>> views_;
};

/// Checks the spans against the path and binds the world view.
AlignedEpisode make_aligned(Episode episode, std::vector<BabyStep> steps, std::vector<PathSpan> spans,
                            const WorldViews& views);

/// Uses episode.babysteps / aligned_segments when present.
AlignedEpisode aligned_from_episode(const Episode& episode, const WorldViews& views);

struct PrepareStats {
  std::size_t kept = 0;
  std::size_t dropped_infeasible = 0;
};

/// Heuristic segmentation plus landmark alignment of every episode.
std::vector<AlignedEpisode> prepare_aligned(std::span<const Episode> episodes, const WorldViews& views,
                                            const Lexicon& lexicon, const LandmarkModel& model,
                                            PrepareStats* stats = nullptr);

struct TrainRecord {
  std::string phase;
  int iteration = 0;
  double loss = 0.0;
  double reward = 0.0;
  double val_sdtw = -1.0;  // < 0 when not evaluated
};

struct LectureBest {
  int lecture = 0;
  int iteration = 0;
  double val_sdtw = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::vector<LectureBest> lecture_bests;

  void append(const TrainLog& other);
  std::string to_csv() const;
};

nlohmann::ordered_json train_log_to_json(const TrainLog& log);
TrainLog train_log_from_json(const nlohmann::json& doc);

/// First-order optimizer over the flat parameter vector; weight decay is
/// added to the gradient as an L2 term.
class Optimizer {
 public:
  Optimizer(const TrainConfig& config, Eigen::Index size);
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);

 private:
  TrainConfig config_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

/// Student-forced decisions for one BabyStep: memory preset from the expert
/// prefix, start at the expert entry, sampled actions, expert targets.
std::vector<StepRecord> imitation_records(const Agent& agent, const AlignedEpisode& ep, int m, std::uint64_t seed);

/// Expert action index among the candidates at `s` while heading for `goal`.
int expert_action_index(const WorldView& view, const AgentState& s, NodeId goal,
                        std::span<const NavAction> candidates);

std::pair<Agent, TrainLog> imitation_learn(const Agent& agent, std::span<const AlignedEpisode> data,
                                           const TrainConfig& config);

/// Terminal-only reward: 0 for t < T, SR + CLS of rollout vs reference at t == T.
double fidelity_reward(std::span<const NodeId> reference, std::span<const NodeId> rollout, int t, int T,
                       const DistanceFn& distance, const MetricConfig& metrics);

struct RolloutBatch {
  std::vector<std::vector<StepRecord>> records;  // per rollout, memory prefix included
  std::vector<double> rewards;
};

/// Samples `config.episodes_per_update` rollouts of the last min(k, M)
/// BabySteps after an expert prefix, scores them and sets REINFORCE weights
/// (leave-one-out mean baseline, discount applied back from the terminal step).
RolloutBatch sample_lecture_rollouts(const Agent& agent, const AlignedEpisode& ep, int k, const TrainConfig& config,
                                     std::uint64_t seed, const std::function<double(const std::vector<NodeId>&)>* reward_override = nullptr);

/// Average surrogate-loss gradient over a batch (normalized by rollout count).
Eigen::VectorXd policy_gradient(const Agent& agent, std::span<const AlignedEpisode* const> batch, int k,
                                const TrainConfig& config, std::uint64_t seed, double* mean_reward = nullptr);

std::pair<Agent, TrainLog> rl_update(const Agent& agent, std::span<const AlignedEpisode* const> batch, int k,
                                     const TrainConfig& config, Optimizer& optimizer, std::uint64_t seed);

struct EvalSet {
  std::span<const Episode> episodes;
  const WorldViews* views = nullptr;
  const Lexicon* lexicon = nullptr;
};

/// Greedy rollouts with text-only segmentation.
MetricReport evaluate_agent(const Agent& agent, const EvalSet& split, const TrainConfig& config,
                            std::vector<std::vector<NodeId>>* rollouts = nullptr);

using LectureCallback = std::function<void(int, const Agent&, const TrainLog&)>;

/// Lectures k = first_lecture..config.lectures. `whole_instruction` replaces
/// every lecture with k = M (no expert prefix). Each lecture depends only on
/// the incoming agent, so resuming at lecture k reproduces a full run.
std::pair<Agent, TrainLog> curriculum_train(const Agent& agent, std::span<const AlignedEpisode> data,
                                            const EvalSet& val, const TrainConfig& config,
                                            bool whole_instruction = false, const LectureCallback& on_lecture = {},
                                            int first_lecture = 1);

/// Synthetic benchmark: training worlds, unseen validation worlds and the
/// length suites built on each.
struct BenchmarkSpec {
  std::uint64_t seed = 1;
  int nodes = 40;
  int landmarks = 12;
  double connectivity = 3.0;
  int train_worlds = 6;
  int val_worlds = 3;
  int base_train_episodes = 500;
  int base_val_episodes = 100;
  int train_count = 500;  // episodes per training split
  int val_count = 100;    // episodes per validation split
  int base_select_episodes = 200;
  int select_count = 50;  // held-out checkpoint-selection episodes per factor
  HopRange hops{2, 6};
  std::vector<int> factors = {1, 2, 4};
};

struct Benchmark {
  BenchmarkSpec spec;
  std::vector<WorldGraph> worlds;
  WorldIndex index;
  std::map<int, DatasetSplit> train;
  std::map<int, DatasetSplit> val;
  std::map<int, DatasetSplit> select;  // unseen worlds, disjoint sample from val
};

Benchmark build_benchmark(const BenchmarkSpec& spec, const Lexicon& lexicon);

struct PipelineResult {
  Agent il_agent;
  Agent final_agent;
  TrainLog log;
  LandmarkModel landmark_model;
  PrepareStats prepare;
};

/// Landmark model, alignment, IL, then curriculum (or whole-instruction) RL.
/// Lecture checkpoints are selected on the `select` split.
PipelineResult train_pipeline(const Benchmark& bench, int train_factor, const AgentConfig& agent_config,
                              const TrainConfig& config, const Lexicon& lexicon, bool whole_instruction = false);

struct TransferRow {
  int factor = 0;
  MetricReport babywalk;
  std::optional<MetricReport> baseline;
};

/// Baseline arm: summary_mode null, whole-instruction RL with the same RL budget.
std::vector<TransferRow> transfer_experiment(const Benchmark& bench, int train_factor, std::span<const int> eval_factors,
                                             const AgentConfig& agent_config, const TrainConfig& config,
                                             const Lexicon& lexicon, bool with_baseline);

std::string transfer_csv(std::span<const TransferRow> rows);

}  // namespace babywalk
