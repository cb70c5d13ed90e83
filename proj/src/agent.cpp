#include "babywalk/agent.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "babywalk/error.hpp"
#include "babywalk/io.hpp"

namespace babywalk {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "babywalk-agent";

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

MatMap grad_block(Eigen::VectorXd& g, std::size_t off, int rows, int cols) { return MatMap(g.data() + off, rows, cols); }
VecMap grad_vec(Eigen::VectorXd& g, std::size_t off, int n) { return VecMap(g.data() + off, n); }

Eigen::VectorXd softmax(const Eigen::VectorXd& scores) {
  const double top = scores.maxCoeff();
  Eigen::VectorXd p = (scores.array() - top).exp().matrix();
  return p / p.sum();
}

int relative_heading(int heading, int reference) { return ((heading - reference) % kHeadingBins + kHeadingBins) % kHeadingBins; }

// Forward values of the context network for one memory state.
struct ContextPass {
  Eigen::VectorXd input;   // [instr summary; traj summary]
  Eigen::VectorXd hidden;  // tanh activations
  Eigen::VectorXd output;
};

ContextPass run_context(const PolicyParams& p, const Eigen::VectorXd& input) {
  ContextPass pass;
  pass.input = input;
  pass.hidden = (p.a1() * input + p.c1()).array().tanh().matrix();
  pass.output = p.a2() * pass.hidden + p.c2();
  return pass;
}

std::vector<Eigen::VectorXd> recurrent_states(const PolicyParams& p, const std::vector<MemoryEntry>& entries) {
  const int d2 = 2 * p.layout.embed;
  std::vector<Eigen::VectorXd> r{Eigen::VectorXd::Zero(d2)};
  for (const auto& e : entries) {
    Eigen::VectorXd x(d2);
    x << e.instr, e.traj;
    r.push_back((p.wr() * x + p.ur() * r.back() + p.br()).array().tanh().matrix());
  }
  return r;
}

// Summary over the first `count` entries as one 2d vector.
Eigen::VectorXd summary_vector(const Agent& agent, const std::vector<MemoryEntry>& entries, std::size_t count,
                               const std::vector<Eigen::VectorXd>* recurrent) {
  const int d = agent.params.layout.embed;
  Eigen::VectorXd s = Eigen::VectorXd::Zero(2 * d);
  switch (agent.config.summary_mode) {
    case SummaryMode::null:
      return s;
    case SummaryMode::recurrent:
      return (*recurrent)[count];
    case SummaryMode::forgetting:
    case SummaryMode::average: {
      const double gamma = agent.config.summary_mode == SummaryMode::average ? 0.0 : agent.config.forget_gamma;
      const auto w = forgetting_weights(static_cast<int>(count), gamma, agent.config.forget_omega);
      for (std::size_t i = 0; i < count; ++i) {
        s.head(d) += w[i] * entries[i].instr;
        s.tail(d) += w[i] * entries[i].traj;
      }
      return s;
    }
  }
  return s;
}

}  // namespace

std::string to_string(SummaryMode mode) {
  switch (mode) {
    case SummaryMode::forgetting: return "forgetting";
    case SummaryMode::average: return "average";
    case SummaryMode::recurrent: return "recurrent";
    case SummaryMode::null: return "null";
  }
  return "?";
}

SummaryMode summary_mode_from_string(const std::string& name) {
  for (auto m : {SummaryMode::forgetting, SummaryMode::average, SummaryMode::recurrent, SummaryMode::null}) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::invalid_argument, "unknown summary mode '" + name + "'");
}

void AgentConfig::validate() const {
  if (embed_dim < 1 || context_hidden < 1) throw Error(ErrorCode::invalid_argument, "embed_dim and context_hidden must be >= 1");
  if (!(forget_gamma >= 0.0)) throw Error(ErrorCode::invalid_argument, "forget_gamma must be >= 0");
  if (max_steps_per_babystep < 1 || instr_token_cap < 1) throw Error(ErrorCode::invalid_argument, "step and token caps must be >= 1");
  if (!(init_scale >= 0.0)) throw Error(ErrorCode::invalid_argument, "init_scale must be >= 0");
}

nlohmann::ordered_json agent_config_to_json(const AgentConfig& c) {
  nlohmann::ordered_json doc;
  doc["embed_dim"] = c.embed_dim;
  doc["forget_gamma"] = c.forget_gamma;
  doc["forget_omega"] = "identity";
  doc["max_steps_per_babystep"] = c.max_steps_per_babystep;
  doc["instr_token_cap"] = c.instr_token_cap;
  doc["summary_mode"] = to_string(c.summary_mode);
  doc["context_hidden"] = c.context_hidden;
  doc["init_scale"] = c.init_scale;
  return doc;
}

void apply_agent_config_json(AgentConfig& c, const nlohmann::json& doc) {
  try {
    if (doc.contains("embed_dim")) c.embed_dim = doc["embed_dim"].get<int>();
    if (doc.contains("forget_gamma")) c.forget_gamma = doc["forget_gamma"].get<double>();
    if (doc.contains("forget_omega") && doc["forget_omega"].get<std::string>() != "identity") {
      throw Error(ErrorCode::invalid_argument, "forget_omega supports only 'identity'");
    }
    if (doc.contains("max_steps_per_babystep")) c.max_steps_per_babystep = doc["max_steps_per_babystep"].get<int>();
    if (doc.contains("instr_token_cap")) c.instr_token_cap = doc["instr_token_cap"].get<int>();
    if (doc.contains("summary_mode")) c.summary_mode = summary_mode_from_string(doc["summary_mode"].get<std::string>());
    if (doc.contains("context_hidden")) c.context_hidden = doc["context_hidden"].get<int>();
    if (doc.contains("init_scale")) c.init_scale = doc["init_scale"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("agent config: ") + e.what());
  }
}

PolicyLayout PolicyLayout::make(const AgentConfig& config, int landmarks, int tokens) {
  config.validate();
  if (landmarks < 1 || tokens < 1) throw Error(ErrorCode::invalid_argument, "agent needs landmark and token vocabularies");
  PolicyLayout l;
  l.landmarks = landmarks;
  l.tokens = tokens;
  l.embed = config.embed_dim;
  l.hidden = config.context_hidden;
  l.state_dim = landmarks + kProgressBins + 1;
  l.head_dim = l.state_dim + 3 + 2 * l.embed;
  l.candidate_dim = 2 * landmarks + kHeadingBins + kElevationBins + 2;
  l.traj_dim = landmarks + kHeadingBins + 1;
  const auto d = static_cast<std::size_t>(l.embed), h = static_cast<std::size_t>(l.hidden);
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  l.off_embedding = take(static_cast<std::size_t>(tokens) * d);
  l.off_traj = take(d * static_cast<std::size_t>(l.traj_dim));
  l.off_a1 = take(h * 2 * d);
  l.off_c1 = take(h);
  l.off_a2 = take(d * h);
  l.off_c2 = take(d);
  l.off_head = take(static_cast<std::size_t>(l.candidate_dim) * static_cast<std::size_t>(l.head_dim));
  l.off_wr = take(4 * d * d);
  l.off_ur = take(4 * d * d);
  l.off_br = take(2 * d);
  l.size = off;
  return l;
}

PolicyParams PolicyParams::zeros(const PolicyLayout& layout) {
  PolicyParams p;
  p.layout = layout;
  p.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.size));
  return p;
}

PolicyParams PolicyParams::unflatten(const PolicyLayout& layout, const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != layout.size) {
    throw Error(ErrorCode::invalid_argument, "flat parameter vector has " + std::to_string(flat.size()) +
                                                 " entries, layout needs " + std::to_string(layout.size));
  }
  PolicyParams p;
  p.layout = layout;
  p.theta = flat;
  return p;
}

std::vector<std::string> lexicon_tokens(const Lexicon& lexicon) {
  std::set<std::string> words;
  for (const auto* set : {&lexicon.noun_words, &lexicon.verb_words, &lexicon.stop_words, &lexicon.landmark_blacklist,
                          &lexicon.verb_blacklist, &lexicon.stop_sentence_prefixes, &lexicon.next_merge_prefixes}) {
    for (const auto& phrase : *set) {
      for (const auto& w : tokenize_words(phrase)) words.insert(w);
    }
  }
  std::vector<std::string> tokens{"<unk>"};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return tokens;
}

std::vector<int> Agent::token_ids(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : tokenize_words(text)) {
    if (static_cast<int>(ids.size()) >= config.instr_token_cap) break;
    auto it = std::lower_bound(tokens.begin() + 1, tokens.end(), w);
    ids.push_back(it != tokens.end() && *it == w ? static_cast<int>(it - tokens.begin()) : 0);
  }
  return ids;
}

Agent make_agent(const AgentConfig& config, std::vector<std::string> landmark_vocab, const Lexicon& lexicon,
                 std::uint64_t seed) {
  Agent agent;
  agent.config = config;
  agent.landmark_vocab = std::move(landmark_vocab);
  agent.tokens = lexicon_tokens(lexicon);
  const auto layout = PolicyLayout::make(config, static_cast<int>(agent.landmark_vocab.size()),
                                         static_cast<int>(agent.tokens.size()));
  agent.params = PolicyParams::zeros(layout);
  CounterRng rng(seed, 0x696e6974ULL);
  for (Eigen::Index i = 0; i < agent.params.theta.size(); ++i) {
    agent.params.theta[i] = rng.uniform(-config.init_scale, config.init_scale);
  }
  return agent;
}

WorldView::WorldView(const WorldGraph& world) : world_(&world), geodesics_(world) {
  observations_.reserve(world.size());
  for (const auto& n : world.nodes()) observations_.push_back(observe(world, State{n.id, 0, kLevelElevation}));
}

AgentState start_state(const WorldGraph& world, std::span<const NodeId> path) {
  if (path.empty()) throw Error(ErrorCode::invalid_argument, "empty path has no start state");
  return AgentState{states_along(world, path.first(std::min<std::size_t>(2, path.size()))).front(), -1, kPrevNone, 0};
}

namespace {

void check_vocab(const Agent& agent, const WorldView& view) {
  if (view.world().landmark_vocab() != agent.landmark_vocab) {
    throw Error(ErrorCode::invalid_argument, "world " + view.world().id() + " has a different landmark vocabulary");
  }
}

}  // namespace

Eigen::VectorXd state_features(const Agent& agent, const WorldView& view, const AgentState& s) {
  const auto& l = agent.params.layout;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(l.state_dim);
  for (int lm : view.world().landmark_indices(s.state.node)) f[lm] = 1.0;
  f[l.landmarks + std::min(s.steps_taken, kProgressBins - 1)] = 1.0;
  f[l.state_dim - 1] = 1.0;
  return f;
}

Eigen::MatrixXd candidate_features(const Agent& agent, const WorldView& view, const AgentState& s,
                                   std::span<const NavAction> candidates) {
  const auto& l = agent.params.layout;
  const int L = l.landmarks;
  const int stop_col = 2 * L + kHeadingBins + kElevationBins;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(candidates.size()), l.candidate_dim);
  const auto& world = view.world();
  const auto& obs = view.observation(s.state.node);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto row = static_cast<Eigen::Index>(c);
    const auto& a = candidates[c];
    if (a.is_stop()) {
      for (int lm : world.landmark_indices(s.state.node)) phi(row, lm) = 1.0;
      phi(row, stop_col) = 1.0;
      continue;
    }
    for (int lm : world.landmark_indices(a.target)) phi(row, lm) = 1.0;
    const Direction dir = world.direction(s.state.node, a.target);
    for (int lm = 0; lm < L; ++lm) {
      if (obs.visible(dir.bin(), lm)) phi(row, L + lm) = 1.0;
    }
    phi(row, 2 * L + relative_heading(dir.heading, s.state.heading)) = 1.0;
    phi(row, 2 * L + kHeadingBins + dir.elevation) = 1.0;
    if (a.target == s.prev_node) phi(row, stop_col + 1) = 1.0;
  }
  return phi;
}

Eigen::VectorXd transition_features(const Agent& agent, const WorldView& view, const AgentState& s,
                                    const NavAction& a) {
  const auto& l = agent.params.layout;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(l.traj_dim);
  for (int lm : view.world().landmark_indices(s.state.node)) f[lm] = 1.0;
  if (a.is_stop()) {
    f[l.traj_dim - 1] = 1.0;
  } else {
    const Direction dir = view.world().direction(s.state.node, a.target);
    f[l.landmarks + relative_heading(dir.heading, s.state.heading)] = 1.0;
  }
  return f;
}

Eigen::VectorXd encode_instruction(const Agent& agent, std::span<const int> token_ids) {
  const auto& p = agent.params;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(p.layout.embed);
  if (token_ids.empty()) return u;
  const auto e = p.embedding();
  for (int t : token_ids) u += e.row(t).transpose();
  return u / static_cast<double>(token_ids.size());
}

Eigen::VectorXd encode_instruction(const Agent& agent, std::string_view text) {
  return encode_instruction(agent, agent.token_ids(text));
}

Eigen::VectorXd encode_trajectory(const Agent& agent, const Eigen::VectorXd& mean_transition) {
  return agent.params.traj_proj() * mean_transition;
}

std::vector<double> forgetting_weights(int count, double gamma, ForgetOmega omega) {
  if (count < 0) throw Error(ErrorCode::invalid_argument, "negative memory size");
  if (!(gamma >= 0.0)) throw Error(ErrorCode::invalid_argument, "forget_gamma must be >= 0");
  (void)omega;  // identity is the only variant
  std::vector<double> w(static_cast<std::size_t>(count));
  if (count == 0) return w;
  if (gamma == 0.0) {
    std::fill(w.begin(), w.end(), 1.0 / count);
    return w;
  }
  double total = 0.0;
  for (int i = 0; i < count; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(-gamma * static_cast<double>(count - 1 - i));
    total += w[static_cast<std::size_t>(i)];
  }
  for (auto& x : w) x /= total;
  return w;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> summarize(const Agent& agent, const MemoryBuffer& memory) {
  const int d = agent.params.layout.embed;
  std::vector<Eigen::VectorXd> rec;
  if (agent.config.summary_mode == SummaryMode::recurrent) rec = recurrent_states(agent.params, memory.entries);
  const auto s = summary_vector(agent, memory.entries, memory.size(), &rec);
  return {s.head(d), s.tail(d)};
}

Eigen::VectorXd context(const Agent& agent, const Eigen::VectorXd& instr_summary, const Eigen::VectorXd& traj_summary) {
  const int d = agent.params.layout.embed;
  if (instr_summary.size() != d || traj_summary.size() != d) throw Error(ErrorCode::invalid_argument, "summary size mismatch");
  Eigen::VectorXd input(2 * d);
  input << instr_summary, traj_summary;
  return run_context(agent.params, input).output;
}

Eigen::VectorXd head_input(const Agent& agent, const Eigen::VectorXd& state_feats, int prev_action,
                           const Eigen::VectorXd& instr_vec, const Eigen::VectorXd& ctx) {
  const auto& l = agent.params.layout;
  Eigen::VectorXd h = Eigen::VectorXd::Zero(l.head_dim);
  h.head(l.state_dim) = state_feats;
  h[l.state_dim + prev_action] = 1.0;
  h.segment(l.state_dim + 3, l.embed) = instr_vec;
  h.tail(l.embed) = ctx;
  return h;
}

Eigen::VectorXd action_distribution(const Agent& agent, const WorldView& view, const AgentState& s,
                                    const Eigen::VectorXd& instr_vec, const Eigen::VectorXd& ctx,
                                    std::span<const NavAction> candidates) {
  check_vocab(agent, view);
  if (candidates.empty()) throw Error(ErrorCode::invalid_argument, "no candidate actions");
  const auto h = head_input(agent, state_features(agent, view, s), s.prev_action, instr_vec, ctx);
  const Eigen::VectorXd q = agent.params.head() * h;
  return softmax(candidate_features(agent, view, s, candidates) * q);
}

MemoryEntry memory_entry(const Agent& agent, const StepRecord& record) {
  return {encode_instruction(agent, record.tokens), encode_trajectory(agent, record.mean_transition)};
}

double replay_objective(const Agent& agent, std::span<const StepRecord> records, Eigen::VectorXd* grad) {
  const auto& p = agent.params;
  const auto& l = p.layout;
  const int d = l.embed;
  if (grad && static_cast<std::size_t>(grad->size()) != l.size) {
    throw Error(ErrorCode::invalid_argument, "gradient vector has the wrong size");
  }
  std::vector<MemoryEntry> entries;
  for (const auto& r : records) entries.push_back(memory_entry(agent, r));
  const bool recurrent = agent.config.summary_mode == SummaryMode::recurrent;
  std::vector<Eigen::VectorXd> rstates;
  if (recurrent) rstates = recurrent_states(p, entries);

  std::vector<Eigen::VectorXd> du(records.size(), Eigen::VectorXd::Zero(d));
  std::vector<Eigen::VectorXd> dv(records.size(), Eigen::VectorXd::Zero(d));
  const auto head = p.head();
  double objective = 0.0;

  for (std::size_t m = 0; m < records.size(); ++m) {
    if (records[m].decisions.empty()) continue;
    const auto pass = run_context(p, summary_vector(agent, entries, m, &rstates));
    Eigen::VectorXd dz = Eigen::VectorXd::Zero(d);
    for (const auto& dec : records[m].decisions) {
      const auto h = head_input(agent, dec.state, dec.prev_action, entries[m].instr, pass.output);
      const Eigen::VectorXd q = head * h;
      const Eigen::VectorXd prob = softmax(dec.candidates * q);
      objective -= dec.weight * std::log(prob[dec.target]);
      if (!grad || dec.weight == 0.0) continue;
      Eigen::VectorXd dscore = dec.weight * prob;
      dscore[dec.target] -= dec.weight;
      const Eigen::VectorXd dq = dec.candidates.transpose() * dscore;
      grad_block(*grad, l.off_head, l.candidate_dim, l.head_dim) += dq * h.transpose();
      const Eigen::VectorXd dh = head.transpose() * dq;
      du[m] += dh.segment(l.state_dim + 3, d);
      dz += dh.tail(d);
    }
    if (!grad) continue;
    // Context network.
    grad_block(*grad, l.off_a2, d, l.hidden) += dz * pass.hidden.transpose();
    grad_vec(*grad, l.off_c2, d) += dz;
    const Eigen::VectorXd dpre =
        ((p.a2().transpose() * dz).array() * (1.0 - pass.hidden.array().square())).matrix();
    grad_block(*grad, l.off_a1, l.hidden, 2 * d) += dpre * pass.input.transpose();
    grad_vec(*grad, l.off_c1, l.hidden) += dpre;
    const Eigen::VectorXd dsummary = p.a1().transpose() * dpre;
    // Summary over entries [0, m).
    switch (agent.config.summary_mode) {
      case SummaryMode::null:
        break;
      case SummaryMode::forgetting:
      case SummaryMode::average: {
        const double gamma = agent.config.summary_mode == SummaryMode::average ? 0.0 : agent.config.forget_gamma;
        const auto w = forgetting_weights(static_cast<int>(m), gamma, agent.config.forget_omega);
        for (std::size_t i = 0; i < m; ++i) {
          du[i] += w[i] * dsummary.head(d);
          dv[i] += w[i] * dsummary.tail(d);
        }
        break;
      }
      case SummaryMode::recurrent: {
        Eigen::VectorXd dr = dsummary;
        for (std::size_t i = m; i >= 1; --i) {
          const auto& r = rstates[i];
          const Eigen::VectorXd dpre_r = (dr.array() * (1.0 - r.array().square())).matrix();
          Eigen::VectorXd x(2 * d);
          x << entries[i - 1].instr, entries[i - 1].traj;
          grad_block(*grad, l.off_wr, 2 * d, 2 * d) += dpre_r * x.transpose();
          grad_block(*grad, l.off_ur, 2 * d, 2 * d) += dpre_r * rstates[i - 1].transpose();
          grad_vec(*grad, l.off_br, 2 * d) += dpre_r;
          const Eigen::VectorXd dx = p.wr().transpose() * dpre_r;
          du[i - 1] += dx.head(d);
          dv[i - 1] += dx.tail(d);
          dr = p.ur().transpose() * dpre_r;
        }
        break;
      }
    }
  }
  if (grad) {
    auto de = grad_block(*grad, l.off_embedding, l.tokens, d);
    auto dp = grad_block(*grad, l.off_traj, d, l.traj_dim);
    for (std::size_t m = 0; m < records.size(); ++m) {
      const auto& toks = records[m].tokens;
      if (!toks.empty()) {
        const Eigen::RowVectorXd share = du[m].transpose() / static_cast<double>(toks.size());
        for (int t : toks) de.row(t) += share;
      }
      dp += dv[m] * records[m].mean_transition.transpose();
    }
  }
  return objective;
}

StepTrajectory rollout_babystep(const Agent& agent, const WorldView& view, const AgentState& start,
                                const BabyStep& step, const MemoryBuffer& memory, RolloutMode& mode) {
  check_vocab(agent, view);
  StepTrajectory traj;
  traj.record.tokens = agent.token_ids(step.text);
  traj.record.mean_transition = Eigen::VectorXd::Zero(agent.params.layout.traj_dim);
  const Eigen::VectorXd u = encode_instruction(agent, traj.record.tokens);
  const auto [instr_summary, traj_summary] = summarize(agent, memory);
  const Eigen::VectorXd z = context(agent, instr_summary, traj_summary);
  AgentState s = start;
  s.steps_taken = 0;
  traj.states.push_back(s);
  for (int t = 0; t < agent.config.max_steps_per_babystep; ++t) {
    const auto candidates = navigable_actions(view.world(), s.state);
    Decision dec;
    dec.state = state_features(agent, view, s);
    dec.prev_action = s.prev_action;
    dec.candidates = candidate_features(agent, view, s, candidates);
    const Eigen::VectorXd q = agent.params.head() * head_input(agent, dec.state, s.prev_action, u, z);
    const Eigen::VectorXd prob = softmax(dec.candidates * q);
    int choice = 0;
    if (mode.sample) {
      double r = mode.rng.uniform(), acc = 0.0;
      choice = static_cast<int>(prob.size()) - 1;
      for (Eigen::Index i = 0; i < prob.size(); ++i) {
        acc += prob[i];
        if (r < acc) {
          choice = static_cast<int>(i);
          break;
        }
      }
    } else {
      prob.maxCoeff(&choice);
    }
    dec.executed = dec.target = choice;
    const NavAction action = candidates[static_cast<std::size_t>(choice)];
    traj.record.mean_transition += transition_features(agent, view, s, action);
    traj.record.decisions.push_back(std::move(dec));
    traj.actions.push_back(action);
    if (action.is_stop()) {
      s.prev_action = kPrevStop;
      ++s.steps_taken;
      traj.states.push_back(s);
      break;
    }
    AgentState next;
    next.state = babywalk::step(view.world(), s.state, action);
    next.prev_node = s.state.node;
    next.prev_action = kPrevMove;
    next.steps_taken = s.steps_taken + 1;
    s = next;
    traj.states.push_back(s);
  }
  if (!traj.actions.empty()) traj.record.mean_transition /= static_cast<double>(traj.actions.size());
  return traj;
}

StepRecord expert_record(const Agent& agent, const WorldView& view, const AgentState& entry,
                         std::span<const NodeId> nodes, std::string_view text, std::vector<AgentState>* states) {
  StepRecord record;
  record.tokens = agent.token_ids(text);
  record.mean_transition = Eigen::VectorXd::Zero(agent.params.layout.traj_dim);
  AgentState s = entry;
  s.steps_taken = 0;
  if (states) states->assign(1, s);
  int actions = 0;
  for (NodeId v : nodes) {
    if (v == s.state.node) continue;
    const auto move = NavAction::move_to(v);
    record.mean_transition += transition_features(agent, view, s, move);
    ++actions;
    AgentState next{step(view.world(), s.state, move), s.state.node, kPrevMove, s.steps_taken + 1};
    s = next;
    if (states) states->push_back(s);
  }
  record.mean_transition += transition_features(agent, view, s, NavAction::stop());
  ++actions;
  s.prev_action = kPrevStop;
  ++s.steps_taken;
  if (states) states->push_back(s);
  record.mean_transition /= static_cast<double>(actions);
  return record;
}

std::vector<NodeId> InstructionRollout::path() const {
  std::vector<NodeId> out;
  for (const auto& st : steps) {
    if (out.empty() && !st.states.empty()) out.push_back(st.states.front().state.node);
    for (const auto& a : st.actions) {
      if (!a.is_stop()) out.push_back(a.target);
    }
  }
  return out;
}

InstructionRollout rollout_instruction(const Agent& agent, const WorldView& view, const AgentState& start,
                                       std::span<const BabyStep> steps, RolloutMode& mode, const MemoryBuffer& memory) {
  InstructionRollout out;
  out.memory = memory;
  AgentState s = start;
  for (const auto& bs : steps) {
    auto traj = rollout_babystep(agent, view, s, bs, out.memory, mode);
    out.memory.append(memory_entry(agent, traj.record));
    s = traj.end();
    out.steps.push_back(std::move(traj));
  }
  return out;
}

nlohmann::ordered_json agent_to_json(const Agent& agent) {
  nlohmann::ordered_json doc;
  doc["format"] = kCheckpointFormat;
  doc["version"] = kCheckpointVersion;
  doc["config"] = agent_config_to_json(agent.config);
  doc["landmark_vocab"] = agent.landmark_vocab;
  doc["tokens"] = agent.tokens;
  doc["params"] = std::vector<double>(agent.params.theta.data(), agent.params.theta.data() + agent.params.theta.size());
  return doc;
}

Agent agent_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kCheckpointFormat || doc.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::schema_violation, "unsupported checkpoint format or version");
    }
    Agent agent;
    apply_agent_config_json(agent.config, doc.at("config"));
    agent.landmark_vocab = doc.at("landmark_vocab").get<std::vector<std::string>>();
    agent.tokens = doc.at("tokens").get<std::vector<std::string>>();
    if (agent.tokens.empty() || agent.tokens.front() != "<unk>" || !std::is_sorted(agent.tokens.begin() + 1, agent.tokens.end())) {
      throw Error(ErrorCode::schema_violation, "checkpoint token vocabulary must start with <unk> and be sorted");
    }
    const auto layout = PolicyLayout::make(agent.config, static_cast<int>(agent.landmark_vocab.size()),
                                           static_cast<int>(agent.tokens.size()));
    const auto flat = doc.at("params").get<std::vector<double>>();
    agent.params = PolicyParams::unflatten(layout, Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size())));
    return agent;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Agent& agent, const std::filesystem::path& path) {
  write_text_file_atomic(path, agent_to_json(agent).dump() + "\n");
}

Agent load_checkpoint(const std::filesystem::path& path) {
  try {
    return agent_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::schema_violation, path.string() + ": " + e.what());
  }
}

}  // namespace babywalk
