#include "babywalk/training.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include "babywalk/error.hpp"
#include "babywalk/io.hpp"
#include "babywalk/rng.hpp"

namespace babywalk {

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write to
// per-index slots so the result never depends on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Draws `count` distinct indices from [0, n) (all of them, shuffled, when count >= n).
std::vector<std::size_t> sample_indices(CounterRng& rng, std::size_t n, std::size_t count) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const std::size_t take = std::min(n, count);
  for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(take);
  return idx;
}

std::string lecture_phase(int k) { return "lecture" + std::to_string(k); }

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(weight_decay >= 0.0)) throw Error(ErrorCode::invalid_argument, "lr must be > 0 and weight_decay >= 0");
  if (!(discount > 0.0 && discount <= 1.0)) throw Error(ErrorCode::invalid_argument, "discount must be in (0, 1]");
  if (il_iters < 0 || rl_iters_per_lecture < 0 || lectures < 0) throw Error(ErrorCode::invalid_argument, "iteration counts must be >= 0");
  if (il_batch < 1 || episodes_per_update < 1) throw Error(ErrorCode::invalid_argument, "batch sizes must be >= 1");
  if (lecture_batch.empty() || std::any_of(lecture_batch.begin(), lecture_batch.end(), [](int b) { return b < 1; })) {
    throw Error(ErrorCode::invalid_argument, "lecture_batch needs positive entries");
  }
  if (eval_every < 0 || threads < 1) throw Error(ErrorCode::invalid_argument, "eval_every >= 0 and threads >= 1 required");
  if (landmark_epochs < 0 || !(landmark_lr > 0.0)) throw Error(ErrorCode::invalid_argument, "bad landmark training settings");
}

int TrainConfig::batch_for_lecture(int k) const {
  const auto i = static_cast<std::size_t>(std::max(1, k) - 1);
  return lecture_batch[std::min(i, lecture_batch.size() - 1)];
}

nlohmann::ordered_json config_to_json(const TrainConfig& t, const AgentConfig& a) {
  nlohmann::ordered_json doc;
  doc["lr"] = t.lr;
  doc["weight_decay"] = t.weight_decay;
  doc["discount"] = t.discount;
  doc["il_iters"] = t.il_iters;
  doc["il_batch"] = t.il_batch;
  doc["rl_iters_per_lecture"] = t.rl_iters_per_lecture;
  doc["lectures"] = t.lectures;
  doc["episodes_per_update"] = t.episodes_per_update;
  doc["lecture_batch"] = t.lecture_batch;
  doc["eval_every"] = t.eval_every;
  doc["optimizer"] = t.optimizer == OptimizerKind::sgd ? "sgd" : "adam";
  doc["adam_beta1"] = t.adam_beta1;
  doc["adam_beta2"] = t.adam_beta2;
  doc["adam_eps"] = t.adam_eps;
  doc["landmark_epochs"] = t.landmark_epochs;
  doc["landmark_lr"] = t.landmark_lr;
  doc["seed"] = t.seed;
  doc["success_threshold"] = t.metrics.success_threshold;
  doc["dtw_threshold"] = t.metrics.dtw_threshold;
  const auto agent_doc = agent_config_to_json(a);
  for (const auto& [k, v] : agent_doc.items()) doc[k] = v;
  return doc;
}

void apply_config_json(const nlohmann::json& doc, TrainConfig& t, AgentConfig& a) {
  if (!doc.is_object()) throw Error(ErrorCode::schema_violation, "config must be a JSON object");
  static const std::set<std::string> agent_keys = {"embed_dim", "forget_gamma", "forget_omega", "max_steps_per_babystep",
                                                   "instr_token_cap", "summary_mode", "context_hidden", "init_scale"};
  try {
    for (const auto& [key, value] : doc.items()) {
      if (agent_keys.count(key)) continue;
      if (key == "lr") t.lr = value.get<double>();
      else if (key == "weight_decay") t.weight_decay = value.get<double>();
      else if (key == "discount") t.discount = value.get<double>();
      else if (key == "il_iters") t.il_iters = value.get<int>();
      else if (key == "il_batch") t.il_batch = value.get<int>();
      else if (key == "rl_iters_per_lecture") t.rl_iters_per_lecture = value.get<int>();
      else if (key == "lectures") t.lectures = value.get<int>();
      else if (key == "episodes_per_update") t.episodes_per_update = value.get<int>();
      else if (key == "lecture_batch") t.lecture_batch = value.get<std::vector<int>>();
      else if (key == "eval_every") t.eval_every = value.get<int>();
      else if (key == "optimizer") {
        const auto name = value.get<std::string>();
        if (name == "sgd") t.optimizer = OptimizerKind::sgd;
        else if (name == "adam") t.optimizer = OptimizerKind::adam;
        else throw Error(ErrorCode::invalid_argument, "optimizer must be 'sgd' or 'adam'");
      } else if (key == "adam_beta1") t.adam_beta1 = value.get<double>();
      else if (key == "adam_beta2") t.adam_beta2 = value.get<double>();
      else if (key == "adam_eps") t.adam_eps = value.get<double>();
      else if (key == "landmark_epochs") t.landmark_epochs = value.get<int>();
      else if (key == "landmark_lr") t.landmark_lr = value.get<double>();
      else if (key == "seed") t.seed = value.get<std::uint64_t>();
      else if (key == "success_threshold") t.metrics.success_threshold = value.get<double>();
      else if (key == "dtw_threshold") t.metrics.dtw_threshold = value.get<double>();
      else throw Error(ErrorCode::schema_violation, "unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("config: ") + e.what());
  }
  apply_agent_config_json(a, doc);
  t.validate();
  a.validate();
}

void load_config_file(const std::filesystem::path& path, TrainConfig& t, AgentConfig& a) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::schema_violation, path.string() + ": " + e.what());
  }
  apply_config_json(doc, t, a);
}

// ---------------------------------------------------------------------------

NodeId AlignedEpisode::entry_node(int m) const {
  const int b = spans.at(static_cast<std::size_t>(m)).begin;
  return episode.path[static_cast<std::size_t>(b == 0 ? 0 : b - 1)];
}

AgentState AlignedEpisode::entry_state(int m) const {
  const int b = spans.at(static_cast<std::size_t>(m)).begin;
  const std::size_t idx = static_cast<std::size_t>(b == 0 ? 0 : b - 1);
  AgentState s;
  s.state = states_along(view->world(), episode.path)[idx];
  s.prev_node = idx > 0 ? episode.path[idx - 1] : -1;
  s.prev_action = m == 0 ? kPrevNone : kPrevStop;
  return s;
}

NodeId AlignedEpisode::end_node(int m) const {
  return episode.path[static_cast<std::size_t>(spans.at(static_cast<std::size_t>(m)).end - 1)];
}

std::span<const NodeId> AlignedEpisode::step_nodes(int m) const {
  const auto& sp = spans.at(static_cast<std::size_t>(m));
  const int b = sp.begin == 0 ? 1 : sp.begin;
  return std::span<const NodeId>(episode.path).subspan(static_cast<std::size_t>(b), static_cast<std::size_t>(std::max(0, sp.end - b)));
}

std::vector<NodeId> AlignedEpisode::sub_reference(int first) const {
  const int b = spans.at(static_cast<std::size_t>(first)).begin;
  return {episode.path.begin() + (b == 0 ? 0 : b - 1), episode.path.end()};
}

WorldViews::WorldViews(const WorldIndex& worlds) {
  for (const auto& [id, world] : worlds) views_.emplace(id, std::make_unique<WorldView>(*world));
}

const WorldView& WorldViews::at(const std::string& world_id) const {
  auto it = views_.find(world_id);
  if (it == views_.end()) throw Error(ErrorCode::invalid_argument, "unknown world '" + world_id + "'");
  return *it->second;
}

DistanceFn WorldViews::distance(const std::string& world_id) const {
  const auto* geo = &at(world_id).geodesics();
  return [geo](NodeId a, NodeId b) { return (*geo)(a, b); };
}

EpisodeDistance WorldViews::episode_distance() const {
  return [this](const Episode& ep) { return distance(ep.world_id); };
}

AlignedEpisode make_aligned(Episode episode, std::vector<BabyStep> steps, std::vector<PathSpan> spans,
                            const WorldViews& views) {
  if (steps.empty() || steps.size() != spans.size()) {
    throw Error(ErrorCode::invalid_argument, "episode " + episode.episode_id + " needs one span per BabyStep");
  }
  int expect = 0;
  for (const auto& sp : spans) {
    if (sp.begin != expect || sp.end <= sp.begin) {
      throw Error(ErrorCode::invalid_argument, "spans of episode " + episode.episode_id + " do not partition the path");
    }
    expect = sp.end;
  }
  if (expect != static_cast<int>(episode.path.size())) {
    throw Error(ErrorCode::invalid_argument, "spans of episode " + episode.episode_id + " do not cover the path");
  }
  AlignedEpisode out;
  out.view = &views.at(episode.world_id);
  out.episode = std::move(episode);
  out.steps = std::move(steps);
  out.spans = std::move(spans);
  return out;
}

AlignedEpisode aligned_from_episode(const Episode& episode, const WorldViews& views) {
  if (!episode.babysteps || !episode.aligned_segments) {
    throw Error(ErrorCode::invalid_argument, "episode " + episode.episode_id + " has not been segmented and aligned");
  }
  return make_aligned(episode, *episode.babysteps, *episode.aligned_segments, views);
}

std::vector<AlignedEpisode> prepare_aligned(std::span<const Episode> episodes, const WorldViews& views,
                                            const Lexicon& lexicon, const LandmarkModel& model, PrepareStats* stats) {
  std::vector<AlignedEpisode> out;
  PrepareStats local;
  for (const auto& ep : episodes) {
    auto steps = segment_instruction(ep.instruction, lexicon);
    if (steps.empty() || steps.size() > ep.path.size()) {
      ++local.dropped_infeasible;
      continue;
    }
    const auto result = align(model, views.at(ep.world_id).world(), ep, steps);
    out.push_back(make_aligned(ep, std::move(steps), result.spans(), views));
    ++local.kept;
  }
  if (stats) *stats = local;
  return out;
}

void TrainLog::append(const TrainLog& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
  lecture_bests.insert(lecture_bests.end(), other.lecture_bests.begin(), other.lecture_bests.end());
}

std::string TrainLog::to_csv() const {
  std::string out = "phase,iteration,loss,mean_reward,val_sdtw\n";
  for (const auto& r : records) {
    out += r.phase + "," + std::to_string(r.iteration) + "," + fmt(r.loss) + "," + fmt(r.reward) + "," +
           (r.val_sdtw < 0 ? std::string() : fmt(r.val_sdtw)) + "\n";
  }
  return out;
}

nlohmann::ordered_json train_log_to_json(const TrainLog& log) {
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const auto& r : log.records) records.push_back({r.phase, r.iteration, r.loss, r.reward, r.val_sdtw});
  nlohmann::ordered_json bests = nlohmann::ordered_json::array();
  for (const auto& b : log.lecture_bests) bests.push_back({b.lecture, b.iteration, b.val_sdtw});
  return {{"records", records}, {"lecture_bests", bests}};
}

TrainLog train_log_from_json(const nlohmann::json& doc) {
  TrainLog log;
  try {
    for (const auto& r : doc.at("records")) {
      log.records.push_back({r.at(0).get<std::string>(), r.at(1).get<int>(), r.at(2).get<double>(), r.at(3).get<double>(),
                             r.at(4).get<double>()});
    }
    for (const auto& b : doc.at("lecture_bests")) {
      log.lecture_bests.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("train log: ") + e.what());
  }
  return log;
}

Optimizer::Optimizer(const TrainConfig& config, Eigen::Index size)
    : config_(config), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void Optimizer::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  const Eigen::VectorXd g = grad + config_.weight_decay * theta;
  if (config_.optimizer == OptimizerKind::sgd) {
    theta -= config_.lr * g;
    return;
  }
  ++t_;
  m_ = config_.adam_beta1 * m_ + (1.0 - config_.adam_beta1) * g;
  v_ = config_.adam_beta2 * v_ + (1.0 - config_.adam_beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(config_.adam_beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.adam_beta2, static_cast<double>(t_));
  theta.array() -= config_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.adam_eps);
}

// ---------------------------------------------------------------------------

int expert_action_index(const WorldView& view, const AgentState& s, NodeId goal, std::span<const NavAction> candidates) {
  const NodeId hop = view.geodesics().next_hop(s.state.node, goal);
  const NavAction want = hop == s.state.node ? NavAction::stop() : NavAction::move_to(hop);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i] == want) return static_cast<int>(i);
  }
  throw Error(ErrorCode::invalid_state, "expert action is not among the candidates");
}

namespace {

// Expert records for BabySteps [0, count).
std::vector<StepRecord> expert_prefix(const Agent& agent, const AlignedEpisode& ep, int count) {
  std::vector<StepRecord> records;
  for (int m = 0; m < count; ++m) {
    records.push_back(expert_record(agent, *ep.view, ep.entry_state(m), ep.step_nodes(m), ep.steps[static_cast<std::size_t>(m)].text));
  }
  return records;
}

MemoryBuffer memory_of(const Agent& agent, std::span<const StepRecord> records) {
  MemoryBuffer memory;
  for (const auto& r : records) memory.append(memory_entry(agent, r));
  return memory;
}

}  // namespace

std::vector<StepRecord> imitation_records(const Agent& agent, const AlignedEpisode& ep, int m, std::uint64_t seed) {
  auto records = expert_prefix(agent, ep, m);
  const auto memory = memory_of(agent, records);
  auto mode = RolloutMode::sampled(seed);
  auto traj = rollout_babystep(agent, *ep.view, ep.entry_state(m), ep.steps[static_cast<std::size_t>(m)], memory, mode);
  const NodeId goal = ep.end_node(m);
  for (std::size_t t = 0; t < traj.record.decisions.size(); ++t) {
    const auto candidates = navigable_actions(ep.view->world(), traj.states[t].state);
    auto& dec = traj.record.decisions[t];
    dec.target = expert_action_index(*ep.view, traj.states[t], goal, candidates);
    dec.weight = 1.0;
  }
  records.push_back(std::move(traj.record));
  return records;
}

std::pair<Agent, TrainLog> imitation_learn(const Agent& agent, std::span<const AlignedEpisode> data,
                                           const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw Error(ErrorCode::empty_data, "imitation learning needs at least one aligned episode");
  std::vector<std::pair<std::size_t, int>> units;
  for (std::size_t e = 0; e < data.size(); ++e) {
    for (int m = 0; m < data[e].size(); ++m) units.emplace_back(e, m);
  }
  Agent current = agent;
  TrainLog log;
  Optimizer opt(config, current.params.theta.size());
  const CounterRng phase(config.seed, 1);
  const auto size = current.params.theta.size();
  for (int it = 0; it < config.il_iters; ++it) {
    CounterRng rng = phase.fork(static_cast<std::uint64_t>(it));
    const auto picks = sample_indices(rng, units.size(), static_cast<std::size_t>(config.il_batch));
    std::vector<std::vector<StepRecord>> batch(picks.size());
    const std::uint64_t base = rng.next_u64();
    parallel_for(picks.size(), config.threads, [&](std::size_t i) {
      const auto [e, m] = units[picks[i]];
      batch[i] = imitation_records(current, data[e], m, CounterRng::mix(base + i));
    });
    std::size_t decisions = 0;
    for (const auto& recs : batch) decisions += recs.back().decisions.size();
    for (auto& recs : batch) {
      for (auto& dec : recs.back().decisions) dec.weight = 1.0 / static_cast<double>(decisions);
    }
    std::vector<Eigen::VectorXd> grads(batch.size());
    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), config.threads, [&](std::size_t i) {
      grads[i] = Eigen::VectorXd::Zero(size);
      losses[i] = replay_objective(current, batch[i], &grads[i]);
    });
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(size);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      grad += grads[i];
      loss += losses[i];
    }
    opt.step(current.params.theta, grad);
    log.records.push_back({"il", it, loss, 0.0, -1.0});
  }
  return {std::move(current), std::move(log)};
}

double fidelity_reward(std::span<const NodeId> reference, std::span<const NodeId> rollout, int t, int T,
                       const DistanceFn& distance, const MetricConfig& metrics) {
  if (t < 0 || t > T) throw Error(ErrorCode::invalid_argument, "step index outside [0, T]");
  if (t < T) return 0.0;
  const PathPair pair{rollout, reference, distance};
  return success(pair, metrics.success_threshold) + cls(pair, metrics.dtw_threshold);
}

RolloutBatch sample_lecture_rollouts(const Agent& agent, const AlignedEpisode& ep, int k, const TrainConfig& config,
                                     std::uint64_t seed, const std::function<double(const std::vector<NodeId>&)>* reward_override) {
  const int M = ep.size();
  const int first = M - std::min(std::max(k, 1), M);
  const auto prefix = expert_prefix(agent, ep, first);
  const auto memory = memory_of(agent, prefix);
  const auto start = ep.entry_state(first);
  const auto reference = ep.sub_reference(first);
  const auto steps = std::span<const BabyStep>(ep.steps).subspan(static_cast<std::size_t>(first));
  const auto distance = [geo = &ep.view->geodesics()](NodeId a, NodeId b) { return (*geo)(a, b); };
  const int n = config.episodes_per_update;
  RolloutBatch batch;
  const CounterRng root(seed, 0x726c);
  for (int r = 0; r < n; ++r) {
    auto mode = RolloutMode::sampled(root.fork(static_cast<std::uint64_t>(r)).next_u64());
    const auto roll = rollout_instruction(agent, *ep.view, start, steps, mode, memory);
    const auto path = roll.path();
    int T = 0;
    for (const auto& st : roll.steps) T += static_cast<int>(st.record.decisions.size());
    batch.rewards.push_back(reward_override ? (*reward_override)(path)
                                            : fidelity_reward(reference, path, T, T, distance, config.metrics));
    std::vector<StepRecord> records = prefix;
    for (const auto& st : roll.steps) records.push_back(st.record);
    batch.records.push_back(std::move(records));
  }
  double total = 0.0;
  for (double r : batch.rewards) total += r;
  for (int r = 0; r < n; ++r) {
    const double baseline = n > 1 ? (total - batch.rewards[static_cast<std::size_t>(r)]) / (n - 1) : 0.0;
    const double advantage = batch.rewards[static_cast<std::size_t>(r)] - baseline;
    auto& records = batch.records[static_cast<std::size_t>(r)];
    int T = 0;
    for (std::size_t m = static_cast<std::size_t>(first); m < records.size(); ++m) T += static_cast<int>(records[m].decisions.size());
    int t = 0;
    for (std::size_t m = static_cast<std::size_t>(first); m < records.size(); ++m) {
      for (auto& dec : records[m].decisions) {
        dec.target = dec.executed;
        dec.weight = advantage * std::pow(config.discount, static_cast<double>(T - 1 - t));
        ++t;
      }
    }
  }
  return batch;
}

Eigen::VectorXd policy_gradient(const Agent& agent, std::span<const AlignedEpisode* const> batch, int k,
                                const TrainConfig& config, std::uint64_t seed, double* mean_reward) {
  if (batch.empty()) throw Error(ErrorCode::empty_data, "empty RL batch");
  const auto size = agent.params.theta.size();
  std::vector<Eigen::VectorXd> grads(batch.size());
  std::vector<double> rewards(batch.size());
  parallel_for(batch.size(), config.threads, [&](std::size_t i) {
    const auto rollouts = sample_lecture_rollouts(agent, *batch[i], k, config, CounterRng::mix(seed + i));
    grads[i] = Eigen::VectorXd::Zero(size);
    double r = 0.0;
    for (std::size_t j = 0; j < rollouts.records.size(); ++j) {
      replay_objective(agent, rollouts.records[j], &grads[i]);
      r += rollouts.rewards[j];
    }
    rewards[i] = r;
  });
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(size);
  double reward = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    grad += grads[i];
    reward += rewards[i];
  }
  const double count = static_cast<double>(batch.size()) * config.episodes_per_update;
  if (mean_reward) *mean_reward = reward / count;
  return grad / count;
}

std::pair<Agent, TrainLog> rl_update(const Agent& agent, std::span<const AlignedEpisode* const> batch, int k,
                                     const TrainConfig& config, Optimizer& optimizer, std::uint64_t seed) {
  double reward = 0.0;
  const auto grad = policy_gradient(agent, batch, k, config, seed, &reward);
  Agent next = agent;
  optimizer.step(next.params.theta, grad);
  TrainLog log;
  log.records.push_back({lecture_phase(k), 0, 0.0, reward, -1.0});
  return {std::move(next), std::move(log)};
}

MetricReport evaluate_agent(const Agent& agent, const EvalSet& split, const TrainConfig& config,
                            std::vector<std::vector<NodeId>>* rollouts) {
  if (split.episodes.empty()) throw Error(ErrorCode::empty_data, "cannot evaluate an empty split");
  std::vector<std::vector<NodeId>> paths(split.episodes.size());
  parallel_for(split.episodes.size(), config.threads, [&](std::size_t i) {
    const auto& ep = split.episodes[i];
    const auto& view = split.views->at(ep.world_id);
    const auto steps = segment_instruction(ep.instruction, *split.lexicon);
    auto mode = RolloutMode::greedy();
    const auto roll = rollout_instruction(agent, view, start_state(view.world(), ep.path), steps, mode);
    paths[i] = steps.empty() ? std::vector<NodeId>{ep.path.front()} : roll.path();
  });
  auto report = evaluate_split(split.episodes, paths, split.views->episode_distance(), config.metrics, config.threads);
  if (rollouts) *rollouts = std::move(paths);
  return report;
}

std::pair<Agent, TrainLog> curriculum_train(const Agent& agent, std::span<const AlignedEpisode> data,
                                            const EvalSet& val, const TrainConfig& config, bool whole_instruction,
                                            const LectureCallback& on_lecture, int first_lecture) {
  config.validate();
  if (first_lecture < 1) throw Error(ErrorCode::invalid_argument, "first_lecture must be >= 1");
  if (config.lectures > 0 && data.empty()) throw Error(ErrorCode::empty_data, "curriculum training needs data");
  Agent current = agent;
  TrainLog log;
  for (int k = first_lecture; k <= config.lectures; ++k) {
    Optimizer opt(config, current.params.theta.size());
    const CounterRng phase(config.seed, 100 + static_cast<std::uint64_t>(k));
    const int lecture_k = whole_instruction ? INT_MAX : k;
    std::optional<Agent> best;
    LectureBest best_info{k, 0, -1.0};
    auto consider = [&](int it) {
      const double sdtw = evaluate_agent(current, val, config).means().sdtw;
      log.records.back().val_sdtw = sdtw;
      if (sdtw > best_info.val_sdtw) {
        best_info = {k, it, sdtw};
        best = current;
      }
    };
    for (int it = 0; it < config.rl_iters_per_lecture; ++it) {
      CounterRng rng = phase.fork(static_cast<std::uint64_t>(it));
      const auto picks = sample_indices(rng, data.size(), static_cast<std::size_t>(config.batch_for_lecture(k)));
      std::vector<const AlignedEpisode*> batch;
      for (auto i : picks) batch.push_back(&data[i]);
      auto [next, step_log] = rl_update(current, batch, lecture_k, config, opt, rng.next_u64());
      current = std::move(next);
      auto rec = step_log.records.front();
      rec.phase = lecture_phase(k);
      rec.iteration = it;
      log.records.push_back(rec);
      const bool last = it + 1 == config.rl_iters_per_lecture;
      if (last || (config.eval_every > 0 && (it + 1) % config.eval_every == 0)) consider(it);
    }
    if (best) current = std::move(*best);
    log.lecture_bests.push_back(best_info);
    if (on_lecture) on_lecture(k, current, log);
  }
  return {std::move(current), std::move(log)};
}

// ---------------------------------------------------------------------------

namespace {

DatasetSplit sample_base(const std::vector<const WorldGraph*>& worlds, int count, std::uint64_t seed, HopRange hops,
                         const Lexicon& lexicon, const std::string& name) {
  DatasetSplit split;
  split.name = name;
  CounterRng rng(seed, 0x62617365ULL);
  for (int i = 0; i < count; ++i) {
    const auto& world = *worlds[static_cast<std::size_t>(i) % worlds.size()];
    split.episodes.push_back(sample_expert_episode(world, rng.next_u64(), hops, lexicon));
  }
  return split;
}

}  // namespace

Benchmark build_benchmark(const BenchmarkSpec& spec, const Lexicon& lexicon) {
  if (spec.train_worlds < 1 || spec.val_worlds < 1) throw Error(ErrorCode::invalid_argument, "benchmark needs train and val worlds");
  Benchmark bench;
  bench.spec = spec;
  const int total = spec.train_worlds + spec.val_worlds;
  bench.worlds.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    bench.worlds.push_back(generate_world(spec.seed * 1000 + static_cast<std::uint64_t>(i), spec.nodes, spec.landmarks,
                                          spec.connectivity));
  }
  std::vector<const WorldGraph*> train_worlds, val_worlds;
  for (int i = 0; i < total; ++i) {
    const auto* w = &bench.worlds[static_cast<std::size_t>(i)];
    bench.index[w->id()] = w;
    (i < spec.train_worlds ? train_worlds : val_worlds).push_back(w);
  }
  const auto base_train = sample_base(train_worlds, spec.base_train_episodes, spec.seed * 31 + 1, spec.hops, lexicon, "train");
  const auto base_val = sample_base(val_worlds, spec.base_val_episodes, spec.seed * 31 + 2, spec.hops, lexicon, "val");
  bench.train = build_length_suite(base_train, spec.factors, spec.seed * 31 + 3, bench.index,
                                   static_cast<std::size_t>(spec.train_count));
  bench.val = build_length_suite(base_val, spec.factors, spec.seed * 31 + 4, bench.index,
                                 static_cast<std::size_t>(spec.val_count));
  const auto base_select = sample_base(val_worlds, spec.base_select_episodes, spec.seed * 31 + 5, spec.hops, lexicon, "select");
  bench.select = build_length_suite(base_select, spec.factors, spec.seed * 31 + 6, bench.index,
                                    static_cast<std::size_t>(spec.select_count));
  return bench;
}

PipelineResult train_pipeline(const Benchmark& bench, int train_factor, const AgentConfig& agent_config,
                              const TrainConfig& config, const Lexicon& lexicon, bool whole_instruction) {
  config.validate();
  const auto& train = bench.train.at(train_factor);
  const auto& select = bench.select.at(train_factor);
  const WorldViews views(bench.index);
  LandmarkTrainOptions lm_options;
  lm_options.epochs = config.landmark_epochs;
  lm_options.lr = config.landmark_lr;
  lm_options.seed = config.seed;
  PipelineResult result{Agent{}, Agent{}, TrainLog{}, train_landmark_model(train.episodes, bench.index, lexicon, lm_options), {}};
  const auto data = prepare_aligned(train.episodes, views, lexicon, result.landmark_model, &result.prepare);
  const auto vocab = bench.worlds.front().landmark_vocab();
  auto [il_agent, il_log] = imitation_learn(make_agent(agent_config, vocab, lexicon, config.seed), data, config);
  result.il_agent = il_agent;
  result.log = il_log;
  const EvalSet val_set{select.episodes, &views, &lexicon};
  auto [final_agent, rl_log] = curriculum_train(il_agent, data, val_set, config, whole_instruction);
  result.final_agent = std::move(final_agent);
  result.log.append(rl_log);
  return result;
}

std::vector<TransferRow> transfer_experiment(const Benchmark& bench, int train_factor, std::span<const int> eval_factors,
                                             const AgentConfig& agent_config, const TrainConfig& config,
                                             const Lexicon& lexicon, bool with_baseline) {
  if (eval_factors.empty()) throw Error(ErrorCode::invalid_argument, "no evaluation factors");
  for (int f : eval_factors) {
    if (!bench.val.count(f)) throw Error(ErrorCode::invalid_argument, "benchmark has no validation split for factor " + std::to_string(f));
  }
  const WorldViews views(bench.index);
  const auto babywalk = train_pipeline(bench, train_factor, agent_config, config, lexicon, false);
  std::optional<PipelineResult> baseline;
  if (with_baseline) {
    auto base_config = agent_config;
    base_config.summary_mode = SummaryMode::null;
    baseline = train_pipeline(bench, train_factor, base_config, config, lexicon, true);
  }
  std::vector<TransferRow> rows;
  for (int f : eval_factors) {
    const EvalSet set{bench.val.at(f).episodes, &views, &lexicon};
    TransferRow row;
    row.factor = f;
    row.babywalk = evaluate_agent(babywalk.final_agent, set, config);
    if (baseline) row.baseline = evaluate_agent(baseline->final_agent, set, config);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string transfer_csv(std::span<const TransferRow> rows) {
  const bool with_baseline = !rows.empty() && rows.front().baseline.has_value();
  std::string out = "eval_split,sr,cls,sdtw";
  if (with_baseline) out += ",baseline_sr,baseline_cls,baseline_sdtw";
  out += "\n";
  for (const auto& row : rows) {
    const auto m = row.babywalk.means();
    out += "val_x" + std::to_string(row.factor) + "," + fmt(m.sr) + "," + fmt(m.cls) + "," + fmt(m.sdtw);
    if (with_baseline && row.baseline) {
      const auto b = row.baseline->means();
      out += "," + fmt(b.sr) + "," + fmt(b.cls) + "," + fmt(b.sdtw);
    }
    out += "\n";
  }
  return out;
}

}  // namespace babywalk
