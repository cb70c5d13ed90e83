#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "babywalk/instruction.hpp"
#include "babywalk/rng.hpp"
#include "babywalk/world.hpp"
#include "json.hpp"

namespace babywalk {

enum class SummaryMode : std::uint8_t { forgetting, average, recurrent, null };
enum class ForgetOmega : std::uint8_t { identity };

std::string to_string(SummaryMode mode);
SummaryMode summary_mode_from_string(const std::string& name);

struct AgentConfig {
  int embed_dim = 32;
  double forget_gamma = 0.5;
  ForgetOmega forget_omega = ForgetOmega::identity;
  int max_steps_per_babystep = 10;
  int instr_token_cap = 100;
  SummaryMode summary_mode = SummaryMode::forgetting;
  int context_hidden = 32;
  double init_scale = 0.08;

  void validate() const;
  friend bool operator==(const AgentConfig&, const AgentConfig&) = default;
};

nlohmann::ordered_json agent_config_to_json(const AgentConfig& config);
/// Reads known keys from `doc`, leaving the rest of `config` untouched.
void apply_agent_config_json(AgentConfig& config, const nlohmann::json& doc);

/// Block offsets of the flat parameter vector.
struct PolicyLayout {
  int landmarks = 0;      // L
  int tokens = 0;         // token vocabulary incl. <unk>
  int embed = 0;          // d
  int hidden = 0;         // context MLP width
  int state_dim = 0;      // L + progress(5) + bias
  int head_dim = 0;       // state ++ prev action(3) ++ u ++ z
  int candidate_dim = 0;  // 2L + heading(12) + elevation(3) + stop + backtrack
  int traj_dim = 0;       // L + heading(12) + stop

  std::size_t off_embedding = 0, off_traj = 0, off_a1 = 0, off_c1 = 0, off_a2 = 0, off_c2 = 0, off_head = 0,
              off_wr = 0, off_ur = 0, off_br = 0, size = 0;

  static PolicyLayout make(const AgentConfig& config, int landmarks, int tokens);
  friend bool operator==(const PolicyLayout&, const PolicyLayout&) = default;
};

inline constexpr int kProgressBins = 5;
inline constexpr int kPrevNone = 0, kPrevMove = 1, kPrevStop = 2;

/// Flat parameters with typed views into each block.
struct PolicyParams {
  using MatMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
  using VecMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

  PolicyLayout layout;
  Eigen::VectorXd theta;

  static PolicyParams zeros(const PolicyLayout& layout);
  const Eigen::VectorXd& flatten() const { return theta; }
  static PolicyParams unflatten(const PolicyLayout& layout, const Eigen::VectorXd& flat);
  bool finite() const { return theta.allFinite(); }

  // Embedding table: tokens x d (row per token).
  ConstMatMap embedding() const { return block(layout.off_embedding, layout.tokens, layout.embed); }
  ConstMatMap traj_proj() const { return block(layout.off_traj, layout.embed, layout.traj_dim); }
  ConstMatMap a1() const { return block(layout.off_a1, layout.hidden, 2 * layout.embed); }
  ConstVecMap c1() const { return vec(layout.off_c1, layout.hidden); }
  ConstMatMap a2() const { return block(layout.off_a2, layout.embed, layout.hidden); }
  ConstVecMap c2() const { return vec(layout.off_c2, layout.embed); }
  ConstMatMap head() const { return block(layout.off_head, layout.candidate_dim, layout.head_dim); }
  ConstMatMap wr() const { return block(layout.off_wr, 2 * layout.embed, 2 * layout.embed); }
  ConstMatMap ur() const { return block(layout.off_ur, 2 * layout.embed, 2 * layout.embed); }
  ConstVecMap br() const { return vec(layout.off_br, 2 * layout.embed); }

  friend bool operator==(const PolicyParams& a, const PolicyParams& b) {
    return a.layout == b.layout && a.theta == b.theta;
  }

 private:
  ConstMatMap block(std::size_t off, int rows, int cols) const { return ConstMatMap(theta.data() + off, rows, cols); }
  ConstVecMap vec(std::size_t off, int n) const { return ConstVecMap(theta.data() + off, n); }
};

/// Policy plus the vocabularies its parameter shapes depend on.
struct Agent {
  AgentConfig config;
  std::vector<std::string> landmark_vocab;
  std::vector<std::string> tokens;  // tokens[0] == "<unk>"
  PolicyParams params;

  std::vector<int> token_ids(std::string_view text) const;
  friend bool operator==(const Agent&, const Agent&) = default;
};

/// Token vocabulary covering every lexicon word; sorted after "<unk>".
std::vector<std::string> lexicon_tokens(const Lexicon& lexicon);

/// Parameters uniform in [-init_scale, init_scale].
Agent make_agent(const AgentConfig& config, std::vector<std::string> landmark_vocab, const Lexicon& lexicon,
                 std::uint64_t seed);

/// Per-world lookups the policy needs at every step.
class WorldView {
 public:
  explicit WorldView(const WorldGraph& world);
  const WorldGraph& world() const { return *world_; }
  const Observation& observation(NodeId id) const { return observations_[static_cast<std::size_t>(id)]; }
  const GeodesicTable& geodesics() const { return geodesics_; }

 private:
  const WorldGraph* world_;
  std::vector<Observation> observations_;
  GeodesicTable geodesics_;
};

/// Navigation state plus the bits of history the policy conditions on.
struct AgentState {
  State state;
  NodeId prev_node = -1;
  int prev_action = kPrevNone;
  int steps_taken = 0;

  friend bool operator==(const AgentState&, const AgentState&) = default;
};

/// Start of an instruction: first node facing along the first move.
AgentState start_state(const WorldGraph& world, std::span<const NodeId> path);

Eigen::VectorXd state_features(const Agent& agent, const WorldView& view, const AgentState& s);
/// One row per candidate.
Eigen::MatrixXd candidate_features(const Agent& agent, const WorldView& view, const AgentState& s,
                                   std::span<const NavAction> candidates);
/// Trajectory feature of one (state, action) pair.
Eigen::VectorXd transition_features(const Agent& agent, const WorldView& view, const AgentState& s,
                                    const NavAction& a);

Eigen::VectorXd encode_instruction(const Agent& agent, std::span<const int> token_ids);
Eigen::VectorXd encode_instruction(const Agent& agent, std::string_view text);
/// P times the mean transition feature; zero for an empty trajectory.
Eigen::VectorXd encode_trajectory(const Agent& agent, const Eigen::VectorXd& mean_transition);

struct MemoryEntry {
  Eigen::VectorXd instr;
  Eigen::VectorXd traj;
};

struct MemoryBuffer {
  std::vector<MemoryEntry> entries;

  void append(MemoryEntry entry) { entries.push_back(std::move(entry)); }
  void clear() { entries.clear(); }
  std::size_t size() const { return entries.size(); }
};

/// Recency weights over `count` entries, oldest first.
std::vector<double> forgetting_weights(int count, double gamma, ForgetOmega omega = ForgetOmega::identity);

/// (instruction summary, trajectory summary), each embed_dim long.
std::pair<Eigen::VectorXd, Eigen::VectorXd> summarize(const Agent& agent, const MemoryBuffer& memory);

Eigen::VectorXd context(const Agent& agent, const Eigen::VectorXd& instr_summary, const Eigen::VectorXd& traj_summary);

Eigen::VectorXd head_input(const Agent& agent, const Eigen::VectorXd& state_feats, int prev_action,
                           const Eigen::VectorXd& instr_vec, const Eigen::VectorXd& ctx);

/// Softmax of candidate_features * W * head_input.
Eigen::VectorXd action_distribution(const Agent& agent, const WorldView& view, const AgentState& s,
                                    const Eigen::VectorXd& instr_vec, const Eigen::VectorXd& ctx,
                                    std::span<const NavAction> candidates);

/// One policy decision, stored so the objective can be replayed exactly.
struct Decision {
  Eigen::VectorXd state;       // state features
  int prev_action = kPrevNone;
  Eigen::MatrixXd candidates;  // candidate features, one row each
  int executed = 0;            // index of the action taken
  int target = 0;              // index the objective scores
  double weight = 0.0;         // objective += weight * -log p[target]
};

/// Everything needed to recompute a BabyStep's memory entry and decisions.
struct StepRecord {
  std::vector<int> tokens;
  Eigen::VectorXd mean_transition;  // zero when no actions
  std::vector<Decision> decisions;
};

/// sum over records and decisions of weight * -log p[target]; adds the
/// gradient with respect to the flat parameters into `grad` when given.
double replay_objective(const Agent& agent, std::span<const StepRecord> records, Eigen::VectorXd* grad = nullptr);

struct RolloutMode {
  bool sample = false;
  CounterRng rng{0};

  static RolloutMode greedy() { return {}; }
  static RolloutMode sampled(std::uint64_t seed) { return {true, CounterRng(seed, 0x726f6c6cULL)}; }
};

struct StepTrajectory {
  std::vector<AgentState> states;  // states[0] is the start
  std::vector<NavAction> actions;
  StepRecord record;

  const AgentState& end() const { return states.back(); }
};

StepTrajectory rollout_babystep(const Agent& agent, const WorldView& view, const AgentState& start,
                                const BabyStep& step, const MemoryBuffer& memory, RolloutMode& mode);

/// Memory entry for a finished (or expert) BabyStep.
MemoryEntry memory_entry(const Agent& agent, const StepRecord& record);

/// Record of the expert walking `nodes` from `entry` and stopping at the end.
StepRecord expert_record(const Agent& agent, const WorldView& view, const AgentState& entry,
                         std::span<const NodeId> nodes, std::string_view text, std::vector<AgentState>* states = nullptr);

struct InstructionRollout {
  std::vector<StepTrajectory> steps;
  MemoryBuffer memory;

  std::vector<NodeId> path() const;
};

/// Executes `steps` in order from `start`. `memory` and `history` carry
/// already-completed BabySteps (expert prefix during training).
InstructionRollout rollout_instruction(const Agent& agent, const WorldView& view, const AgentState& start,
                                       std::span<const BabyStep> steps, RolloutMode& mode,
                                       const MemoryBuffer& memory = {});

nlohmann::ordered_json agent_to_json(const Agent& agent);
Agent agent_from_json(const nlohmann::json& doc);
void save_checkpoint(const Agent& agent, const std::filesystem::path& path);
Agent load_checkpoint(const std::filesystem::path& path);

}  // namespace babywalk
