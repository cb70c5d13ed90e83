#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "babywalk/error.hpp"
#include "babywalk/training.hpp"
#include "gradcheck.hpp"

using namespace babywalk;

namespace {

const fixture::TinyWorld& tiny() {
  static const fixture::TinyWorld t;
  return t;
}

std::vector<NodeId> random_walk(const WorldGraph& w, NodeId start, int hops, CounterRng& rng) {
  std::vector<NodeId> p{start};
  for (int i = 0; i < hops; ++i) {
    const auto& nb = w.neighbors(p.back());
    p.push_back(nb[rng.below(nb.size())]);
  }
  return p;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.optimizer = OptimizerKind::adam;
  c.lr = 1e-2;
  c.il_iters = 40;
  c.il_batch = 4;
  c.rl_iters_per_lecture = 4;
  c.lectures = 2;
  c.episodes_per_update = 3;
  c.lecture_batch = {4, 2};
  c.eval_every = 2;
  c.landmark_epochs = 20;
  c.seed = 5;
  return c;
}

// A few dozen aligned episodes on one generated world.
struct SmallData {
  WorldGraph world = generate_world(17, 30, 12, 3.0);
  WorldIndex index{{world.id(), &world}};
  WorldViews views{index};
  Lexicon lexicon = default_lexicon();
  std::vector<Episode> episodes;
  std::vector<AlignedEpisode> aligned;

  SmallData() {
    for (std::uint64_t s = 0; s < 24; ++s) episodes.push_back(sample_expert_episode(world, s, {2, 5}, lexicon));
    for (const auto& ep : episodes) {
      std::vector<BabyStep> steps;
      std::vector<PathSpan> spans;
      const auto tagged = tag(ep.instruction, lexicon);
      for (const auto& g : *ep.gold_segments) {
        BabyStep b;
        b.sentence_span = g.sentences;
        for (int i = g.sentences.begin; i < g.sentences.end; ++i) {
          b.text += (b.text.empty() ? "" : " ") + tagged.sentence_texts[static_cast<std::size_t>(i)];
        }
        steps.push_back(b);
        spans.push_back({g.path_begin, g.path_end});
      }
      aligned.push_back(make_aligned(ep, steps, spans, views));
    }
  }
};

const SmallData& small() {
  static const SmallData d;
  return d;
}

}  // namespace

TEST(FidelityReward, TerminalOnlyContract) {
  const auto w = generate_world(8, 40, 12, 3.0);
  const GeodesicTable geo(w);
  const DistanceFn d = [&](NodeId a, NodeId b) { return geo(a, b); };
  const MetricConfig mc;
  CounterRng rng(3, 0);
  const auto lex = default_lexicon();
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto ep = sample_expert_episode(w, i, {2, 8}, lex);
    const auto roll = random_walk(w, ep.path.front(), static_cast<int>(rng.uniform_int(0, 10)), rng);
    const int T = static_cast<int>(roll.size());
    for (int t = 0; t < T; ++t) EXPECT_EQ(fidelity_reward(ep.path, roll, t, T, d, mc), 0.0);
    const PathPair pair{roll, ep.path, d};
    EXPECT_EQ(fidelity_reward(ep.path, roll, T, T, d, mc), success(pair, mc.success_threshold) + cls(pair, mc.dtw_threshold));
    EXPECT_DOUBLE_EQ(fidelity_reward(ep.path, ep.path, T, T, d, mc), 2.0);
    EXPECT_THROW(fidelity_reward(ep.path, roll, T + 1, T, d, mc), Error);
  }
}

TEST(PolicyGradient, MatchesExactBanditGradient) {
  // One decision from the entry of the second BabyStep; each of the three
  // outcomes has a fixed reward.
  Agent agent = tiny().agent(SummaryMode::forgetting, 12);
  agent.config.max_steps_per_babystep = 1;
  const auto& ep = tiny().episode();
  const std::map<NodeId, double> payoff{{0, 0.1}, {1, 0.4}, {2, 1.0}};
  const std::function<double(const std::vector<NodeId>&)> reward = [&](const std::vector<NodeId>& p) {
    return payoff.at(p.back());
  };
  TrainConfig cfg;
  cfg.episodes_per_update = 8;

  const auto expected_reward = [&](const Eigen::VectorXd& theta) {
    const Agent a = fixture::with_theta(agent, theta);
    const auto prefix = expert_record(a, tiny().view(), ep.entry_state(0), ep.step_nodes(0), ep.steps[0].text);
    MemoryBuffer mem;
    mem.append(memory_entry(a, prefix));
    const auto [is, ts] = summarize(a, mem);
    const auto s = ep.entry_state(1);
    const auto cands = navigable_actions(tiny().world(), s.state);
    const auto p = action_distribution(a, tiny().view(), s, encode_instruction(a, ep.steps[1].text), context(a, is, ts), cands);
    double e = 0.0;
    for (std::size_t i = 0; i < cands.size(); ++i) e += p[static_cast<Eigen::Index>(i)] * payoff.at(cands[i].is_stop() ? 1 : cands[i].target);
    return e;
  };
  const Eigen::VectorXd exact = fixture::central_difference(expected_reward, agent.params.theta);

  Eigen::VectorXd estimate = Eigen::VectorXd::Zero(exact.size());
  const int draws = 1500;
  for (int seed = 0; seed < draws; ++seed) {
    const auto batch = sample_lecture_rollouts(agent, ep, 1, cfg, static_cast<std::uint64_t>(seed), &reward);
    for (const auto& recs : batch.records) replay_objective(agent, recs, &estimate);
  }
  estimate /= static_cast<double>(draws * cfg.episodes_per_update);
  // The surrogate is a loss, so its gradient is minus the reward gradient.
  EXPECT_LT(fixture::relative_error(-estimate, exact), 0.05) << exact.norm();
  EXPECT_GT(exact.norm(), 0.01);
}

TEST(PolicyGradient, ConstantRewardLeavesWeightDecayOnly) {
  const auto agent = tiny().agent(SummaryMode::forgetting, 4);
  TrainConfig cfg;
  cfg.episodes_per_update = 6;
  for (double c : {0.0, 1.3}) {
    const std::function<double(const std::vector<NodeId>&)> reward = [c](const std::vector<NodeId>&) { return c; };
    const auto batch = sample_lecture_rollouts(agent, tiny().episode(), 2, cfg, 9, &reward);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(agent.params.theta.size());
    for (const auto& recs : batch.records) {
      for (const auto& r : recs) {
        for (const auto& d : r.decisions) EXPECT_EQ(d.weight, 0.0);
      }
      replay_objective(agent, recs, &g);
    }
    EXPECT_EQ(g.norm(), 0.0);
    Optimizer opt(cfg, g.size());
    Eigen::VectorXd theta = agent.params.theta;
    opt.step(theta, g);
    EXPECT_LT((theta - (1.0 - cfg.lr * cfg.weight_decay) * agent.params.theta).norm(), 1e-15);
  }
}

TEST(PolicyGradient, LeaveOneOutAndDiscount) {
  const auto agent = tiny().agent(SummaryMode::forgetting, 6);
  TrainConfig cfg;
  cfg.episodes_per_update = 5;
  cfg.discount = 0.9;
  const auto batch = sample_lecture_rollouts(agent, tiny().episode(), 2, cfg, 31);
  ASSERT_EQ(batch.rewards.size(), 5u);
  double total = 0.0;
  for (double r : batch.rewards) total += r;
  for (std::size_t j = 0; j < 5; ++j) {
    const double adv = batch.rewards[j] - (total - batch.rewards[j]) / 4.0;
    std::vector<const Decision*> decs;
    for (const auto& r : batch.records[j]) {
      for (const auto& d : r.decisions) decs.push_back(&d);
    }
    const int T = static_cast<int>(decs.size());
    for (int t = 0; t < T; ++t) {
      EXPECT_NEAR(decs[static_cast<std::size_t>(t)]->weight, adv * std::pow(0.9, T - 1 - t), 1e-12);
      EXPECT_EQ(decs[static_cast<std::size_t>(t)]->target, decs[static_cast<std::size_t>(t)]->executed);
    }
  }
  // Lecture 1 keeps the first BabyStep as an expert prefix without decisions.
  const auto last = sample_lecture_rollouts(agent, tiny().episode(), 1, cfg, 31);
  for (const auto& recs : last.records) {
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_TRUE(recs[0].decisions.empty());
  }
}

TEST(Optimizer, SgdAndAdamSteps) {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  Eigen::VectorXd theta(2), g(2);
  theta << 1.0, -2.0;
  g << 0.5, -4.0;
  Optimizer sgd(cfg, 2);
  auto t1 = theta;
  sgd.step(t1, g);
  EXPECT_NEAR(t1[0], 0.95, 1e-15);
  EXPECT_NEAR(t1[1], -1.6, 1e-15);
  cfg.optimizer = OptimizerKind::adam;
  Optimizer adam(cfg, 2);
  auto t2 = theta;
  adam.step(t2, g);  // first Adam step moves each coordinate by about lr against its sign
  EXPECT_NEAR(t2[0], 0.9, 1e-6);
  EXPECT_NEAR(t2[1], -1.9, 1e-6);
}

TEST(ImitationLearning, LossDecreases) {
  auto cfg = quick_config();
  cfg.il_iters = 300;
  AgentConfig ac;
  ac.embed_dim = 8;
  ac.context_hidden = 8;
  const auto agent = make_agent(ac, small().world.landmark_vocab(), small().lexicon, 1);
  const auto [trained, log] = imitation_learn(agent, small().aligned, cfg);
  ASSERT_EQ(log.records.size(), 300u);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 50; ++i) {
    head += log.records[static_cast<std::size_t>(i)].loss;
    tail += log.records[log.records.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  EXPECT_LT(tail, 0.8 * head);
  EXPECT_TRUE(trained.params.finite());
  EXPECT_THROW(imitation_learn(agent, std::span<const AlignedEpisode>{}, cfg), Error);
}

TEST(ImitationLearning, ThreadsDoNotChangeResults) {
  auto cfg = quick_config();
  AgentConfig ac;
  const auto agent = make_agent(ac, small().world.landmark_vocab(), small().lexicon, 2);
  const auto a = imitation_learn(agent, small().aligned, cfg);
  const auto b = imitation_learn(agent, small().aligned, cfg);
  cfg.threads = 3;
  const auto c = imitation_learn(agent, small().aligned, cfg);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.first, c.first);
  EXPECT_EQ(a.second.to_csv(), c.second.to_csv());
}

TEST(ImitationLearning, ExpertTargets) {
  const auto& ep = small().aligned.front();
  const auto& view = *ep.view;
  const auto s = ep.entry_state(0);
  const auto cands = navigable_actions(view.world(), s.state);
  const int idx = expert_action_index(view, s, ep.end_node(0), cands);
  EXPECT_EQ(cands[static_cast<std::size_t>(idx)].target, view.geodesics().next_hop(s.state.node, ep.end_node(0)));
  EXPECT_TRUE(cands[static_cast<std::size_t>(expert_action_index(view, s, s.state.node, cands))].is_stop());
  const auto agent = make_agent(AgentConfig{}, small().world.landmark_vocab(), small().lexicon, 2);
  const auto recs = imitation_records(agent, ep, ep.size() - 1, 4);
  ASSERT_EQ(recs.size(), static_cast<std::size_t>(ep.size()));
  for (std::size_t m = 0; m + 1 < recs.size(); ++m) EXPECT_TRUE(recs[m].decisions.empty());
  for (const auto& d : recs.back().decisions) EXPECT_EQ(d.weight, 1.0);
}

TEST(Curriculum, DeterministicAndResumable) {
  const auto cfg = quick_config();
  const auto agent = make_agent(AgentConfig{}, small().world.landmark_vocab(), small().lexicon, 3);
  const EvalSet val{small().episodes, &small().views, &small().lexicon};
  std::vector<Agent> after;
  const auto full = curriculum_train(agent, small().aligned, val, cfg, false,
                                     [&](int, const Agent& a, const TrainLog&) { after.push_back(a); });
  ASSERT_EQ(after.size(), 2u);
  EXPECT_EQ(full.first, after.back());
  EXPECT_EQ(full.second.lecture_bests.size(), 2u);
  EXPECT_EQ(curriculum_train(agent, small().aligned, val, cfg).first, full.first);
  const auto resumed = curriculum_train(after.front(), small().aligned, val, cfg, false, {}, 2);
  EXPECT_EQ(resumed.first, full.first);

  auto lectures0 = cfg;
  lectures0.lectures = 0;
  EXPECT_EQ(curriculum_train(agent, small().aligned, val, lectures0).first, agent);
  int evals = 0;
  for (const auto& r : full.second.records) evals += r.val_sdtw >= 0.0;
  EXPECT_EQ(evals, 2 * 2);  // eval_every 2 over 4 iterations, two lectures
}

TEST(Curriculum, WholeInstructionHasNoExpertPrefix) {
  const auto agent = tiny().agent(SummaryMode::null, 2);
  TrainConfig cfg;
  cfg.episodes_per_update = 2;
  const auto batch = sample_lecture_rollouts(agent, tiny().episode(), INT_MAX, cfg, 3);
  for (const auto& recs : batch.records) EXPECT_FALSE(recs.front().decisions.empty());
}

TEST(Evaluate, ThreadsAndErrors) {
  auto cfg = quick_config();
  const auto agent = make_agent(AgentConfig{}, small().world.landmark_vocab(), small().lexicon, 8);
  const EvalSet val{small().episodes, &small().views, &small().lexicon};
  std::vector<std::vector<NodeId>> r1, r2;
  const auto a = evaluate_agent(agent, val, cfg, &r1);
  cfg.threads = 4;
  const auto b = evaluate_agent(agent, val, cfg, &r2);
  EXPECT_EQ(r1, r2);
  EXPECT_EQ(report_to_csv(a), report_to_csv(b));
  ASSERT_EQ(r1.size(), small().episodes.size());
  for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_EQ(r1[i].front(), small().episodes[i].path.front());
  EXPECT_THROW(evaluate_agent(agent, EvalSet{{}, &small().views, &small().lexicon}, cfg), Error);
}

TEST(Config, JsonRoundTripAndValidation) {
  TrainConfig t = quick_config();
  AgentConfig a;
  a.summary_mode = SummaryMode::average;
  TrainConfig t2;
  AgentConfig a2;
  apply_config_json(config_to_json(t, a), t2, a2);
  EXPECT_EQ(config_to_json(t2, a2), config_to_json(t, a));
  EXPECT_EQ(a2, a);
  EXPECT_THROW(apply_config_json(nlohmann::json{{"learning_rate", 1.0}}, t2, a2), Error);
  EXPECT_THROW(apply_config_json(nlohmann::json{{"optimizer", "rmsprop"}}, t2, a2), Error);
  EXPECT_THROW(apply_config_json(nlohmann::json::array(), t2, a2), Error);

  TrainConfig desk;
  AgentConfig unused;
  load_config_file(std::filesystem::path(BABYWALK_FIXTURES) / "desk.json", desk, unused);
  EXPECT_EQ(desk.optimizer, OptimizerKind::adam);
  EXPECT_NO_THROW(desk.validate());

  EXPECT_EQ(t.batch_for_lecture(1), 4);
  EXPECT_EQ(t.batch_for_lecture(7), 2);
  TrainConfig bad;
  bad.discount = 0.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = TrainConfig{};
  bad.lecture_batch = {};
  EXPECT_THROW(bad.validate(), Error);
}

TEST(TrainLog, CsvAndJson) {
  TrainLog log;
  log.records = {{"il", 0, 1.5, 0.0, -1.0}, {"lecture1", 3, 0.0, 0.25, 0.125}};
  log.lecture_bests = {{1, 3, 0.125}};
  EXPECT_EQ(log.to_csv(), "phase,iteration,loss,mean_reward,val_sdtw\nil,0,1.5,0,\nlecture1,3,0,0.25,0.125\n");
  const auto back = train_log_from_json(train_log_to_json(log));
  EXPECT_EQ(back.to_csv(), log.to_csv());
  ASSERT_EQ(back.lecture_bests.size(), 1u);
  EXPECT_EQ(back.lecture_bests[0].iteration, 3);
}

TEST(Aligned, AccessorsAndValidation) {
  const auto& ep = tiny().episode();
  EXPECT_EQ(ep.entry_node(0), 0);
  EXPECT_EQ(ep.entry_node(1), 1);
  EXPECT_EQ(ep.end_node(0), 1);
  EXPECT_EQ(std::vector<NodeId>(ep.step_nodes(0).begin(), ep.step_nodes(0).end()), (std::vector<NodeId>{1}));
  EXPECT_EQ(ep.sub_reference(1), (std::vector<NodeId>{1, 2}));
  EXPECT_EQ(ep.entry_state(1).prev_action, kPrevStop);
  EXPECT_THROW(make_aligned(ep.episode, ep.steps, {{0, 1}, {2, 3}}, tiny().views()), Error);
  EXPECT_THROW(make_aligned(ep.episode, ep.steps, {{0, 3}}, tiny().views()), Error);
  EXPECT_THROW(make_aligned(ep.episode, ep.steps, {{0, 1}, {1, 2}}, tiny().views()), Error);
}

TEST(Benchmark, DeterministicAndShaped) {
  BenchmarkSpec spec;
  spec.nodes = 25;
  spec.train_worlds = 2;
  spec.val_worlds = 1;
  spec.base_train_episodes = 60;
  spec.base_val_episodes = 30;
  spec.base_select_episodes = 30;
  spec.train_count = 20;
  spec.val_count = 10;
  spec.select_count = 5;
  spec.factors = {1, 2};
  const auto lex = default_lexicon();
  const auto a = build_benchmark(spec, lex), b = build_benchmark(spec, lex);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.select, b.select);
  EXPECT_EQ(a.train.at(2).episodes.size(), 20u);
  EXPECT_EQ(a.val.at(2).episodes.size(), 10u);
  std::set<std::string> train_ids, val_ids;
  for (const auto& ep : a.train.at(1).episodes) train_ids.insert(ep.world_id);
  for (const auto& ep : a.val.at(2).episodes) val_ids.insert(ep.world_id);
  for (const auto& id : val_ids) EXPECT_FALSE(train_ids.contains(id));
}

TEST(Curriculum, LectureExecutesLastKSteps) {
  const auto agent = make_agent(AgentConfig{}, small().world.landmark_vocab(), small().lexicon, 6);
  TrainConfig cfg;
  cfg.episodes_per_update = 2;
  for (const auto& ep : small().aligned) {
    const int M = ep.size();
    for (int k = 1; k <= 4; ++k) {
      const int executed = std::min(k, M);
      for (const auto& recs : sample_lecture_rollouts(agent, ep, k, cfg, 1).records) {
        ASSERT_EQ(static_cast<int>(recs.size()), M);
        for (int m = 0; m < M; ++m) EXPECT_EQ(recs[static_cast<std::size_t>(m)].decisions.empty(), m < M - executed);
      }
    }
  }
}
