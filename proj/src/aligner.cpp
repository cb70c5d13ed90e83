#include "babywalk/aligner.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "babywalk/error.hpp"
#include "babywalk/io.hpp"
#include "babywalk/rng.hpp"

namespace babywalk {

namespace {

constexpr int kModelVersion = 1;
constexpr const char* kModelFormat = "babywalk-landmark-model";

const WorldGraph& world_of(const WorldIndex& worlds, const Episode& ep) {
  auto it = worlds.find(ep.world_id);
  if (it == worlds.end()) throw Error(ErrorCode::invalid_argument, "episode " + ep.episode_id + " names unknown world '" + ep.world_id + "'");
  return *it->second;
}

// Per-episode training item: active feature indices of each path state and
// the landmark-presence labels.
struct Item {
  std::vector<std::vector<int>> states;
  Eigen::VectorXd labels;
};

std::vector<Item> build_items(const LandmarkModel& model, std::span<const Episode> episodes, const WorldIndex& worlds,
                              const Lexicon& lexicon) {
  std::vector<Item> items;
  items.reserve(episodes.size());
  for (const auto& ep : episodes) {
    const auto& world = world_of(worlds, ep);
    if (world.landmark_vocab() != model.vocab) {
      throw Error(ErrorCode::invalid_argument, "world " + world.id() + " has a different landmark vocabulary");
    }
    Item item;
    for (const auto& s : states_along(world, ep.path)) item.states.push_back(observation_features(observe(world, s)));
    item.labels = Eigen::VectorXd::Zero(model.vocab_size());
    for (int l : vocab_indices(model.vocab, extract_landmark_phrases(ep.instruction, lexicon))) item.labels[l] = 1.0;
    items.push_back(std::move(item));
  }
  return items;
}

double state_logit(const LandmarkModel& model, const std::vector<int>& features, int l) {
  double z = model.bias[l];
  for (int f : features) z += model.weights(l, f);
  return z;
}

double bce_with_logit(double z, double y) { return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z))); }

// Loss over all items; accumulates the gradient when `grad_w` is given.
double loss_and_grad(const LandmarkModel& model, const std::vector<Item>& items, Eigen::MatrixXd* grad_w,
                     Eigen::VectorXd* grad_b) {
  double loss = 0.0;
  for (const auto& item : items) {
    for (int l = 0; l < model.vocab_size(); ++l) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t t = 0; t < item.states.size(); ++t) {
        const double z = state_logit(model, item.states[t], l);
        if (z > best) {
          best = z;
          arg = t;
        }
      }
      loss += bce_with_logit(best, item.labels[l]);
      if (grad_w) {
        const double g = 1.0 / (1.0 + std::exp(-best)) - item.labels[l];
        for (int f : item.states[arg]) (*grad_w)(l, f) += g;
        (*grad_b)[l] += g;
      }
    }
  }
  return loss;
}

Eigen::MatrixXd psi_from_logits(const std::vector<Eigen::VectorXd>& logits, const std::vector<std::vector<int>>& step_lms) {
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(logits.size()), static_cast<Eigen::Index>(step_lms.size()));
  for (std::size_t t = 0; t < logits.size(); ++t) {
    for (std::size_t m = 0; m < step_lms.size(); ++m) {
      double s = 0.0;
      for (int l : step_lms[m]) s += logits[t][l];
      scores(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(m)) =
          step_lms[m].empty() ? 0.0 : s / static_cast<double>(step_lms[m].size());
    }
  }
  return scores;
}

void check_feasible(const Eigen::MatrixXd& scores) {
  if (scores.cols() < 1) throw Error(ErrorCode::invalid_argument, "alignment needs at least one BabyStep");
  if (scores.rows() < scores.cols()) {
    throw Error(ErrorCode::infeasible, "path of " + std::to_string(scores.rows()) + " states cannot host " +
                                           std::to_string(scores.cols()) + " non-empty segments");
  }
}

}  // namespace

int observation_feature_dim(int vocab_size) { return (kDirectionBins + 1) * vocab_size; }

std::vector<int> observation_features(const Observation& obs) {
  std::vector<int> active;
  for (std::size_t i = 0; i < obs.directional.size(); ++i) {
    if (obs.directional[i]) active.push_back(static_cast<int>(i));
  }
  const int offset = kDirectionBins * obs.vocab_size;
  for (std::size_t i = 0; i < obs.local.size(); ++i) {
    if (obs.local[i]) active.push_back(offset + static_cast<int>(i));
  }
  return active;
}

LandmarkModel LandmarkModel::zeros(std::vector<std::string> vocab) {
  LandmarkModel model;
  const auto n = static_cast<Eigen::Index>(vocab.size());
  model.weights = Eigen::MatrixXd::Zero(n, observation_feature_dim(static_cast<int>(n)));
  model.bias = Eigen::VectorXd::Zero(n);
  model.vocab = std::move(vocab);
  return model;
}

std::vector<int> vocab_indices(const std::vector<std::string>& vocab, std::span<const std::string> phrases) {
  std::vector<int> out;
  auto add = [&](const std::string& word) {
    auto it = std::find(vocab.begin(), vocab.end(), word);
    if (it == vocab.end()) return;
    const int idx = static_cast<int>(it - vocab.begin());
    if (std::find(out.begin(), out.end(), idx) == out.end()) out.push_back(idx);
  };
  for (const auto& phrase : phrases) {
    if (std::find(vocab.begin(), vocab.end(), phrase) != vocab.end()) {
      add(phrase);
      continue;
    }
    std::istringstream words(phrase);
    for (std::string w; words >> w;) add(w);
  }
  return out;
}

double landmark_loss(const LandmarkModel& model, std::span<const Episode> episodes, const WorldIndex& worlds,
                     const Lexicon& lexicon) {
  return loss_and_grad(model, build_items(model, episodes, worlds, lexicon), nullptr, nullptr);
}

LandmarkModel train_landmark_model(std::span<const Episode> episodes, const WorldIndex& worlds, const Lexicon& lexicon,
                                   const LandmarkTrainOptions& options, std::vector<double>* loss_history) {
  if (episodes.empty()) throw Error(ErrorCode::empty_data, "no episodes to train the landmark model on");
  if (options.epochs < 0 || !(options.lr > 0.0)) throw Error(ErrorCode::invalid_argument, "epochs >= 0 and lr > 0 required");
  LandmarkModel model = LandmarkModel::zeros(world_of(worlds, episodes.front()).landmark_vocab());
  const auto items = build_items(model, episodes, worlds, lexicon);
  const bool any_label = std::any_of(items.begin(), items.end(), [](const Item& i) { return i.labels.sum() > 0.0; });
  if (!any_label) throw Error(ErrorCode::degenerate_data, "no instruction mentions a vocabulary landmark");

  CounterRng rng(options.seed, 0x6c646d6bULL);
  for (Eigen::Index r = 0; r < model.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.weights.cols(); ++c) {
      model.weights(r, c) = rng.uniform(-options.init_scale, options.init_scale);
    }
  }
  if (loss_history) loss_history->clear();
  Eigen::MatrixXd grad_w(model.weights.rows(), model.weights.cols());
  Eigen::VectorXd grad_b(model.bias.size());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    grad_w.setZero();
    grad_b.setZero();
    const double loss = loss_and_grad(model, items, &grad_w, &grad_b);
    if (loss_history) loss_history->push_back(loss);
    model.weights -= options.lr * grad_w;
    model.bias -= options.lr * grad_b;
  }
  if (loss_history) loss_history->push_back(loss_and_grad(model, items, nullptr, nullptr));
  if (!model.finite()) throw Error(ErrorCode::degenerate_data, "landmark model diverged; lower the learning rate");
  return model;
}

Eigen::VectorXd landmark_logits(const LandmarkModel& model, const Observation& obs) {
  if (obs.vocab_size != model.vocab_size()) throw Error(ErrorCode::invalid_argument, "observation vocabulary size mismatch");
  Eigen::VectorXd z = model.bias;
  for (int f : observation_features(obs)) z += model.weights.col(f);
  return z;
}

std::vector<int> step_landmark_indices(const LandmarkModel& model, const BabyStep& step) {
  return vocab_indices(model.vocab, step.landmarks);
}

double psi(const LandmarkModel& model, const Observation& obs, const BabyStep& step) {
  const auto lms = step_landmark_indices(model, step);
  if (lms.empty()) return 0.0;
  const auto z = landmark_logits(model, obs);
  double s = 0.0;
  for (int l : lms) s += z[l];
  return s / static_cast<double>(lms.size());
}

std::vector<PathSpan> AlignmentResult::spans() const {
  std::vector<PathSpan> out;
  int begin = 0;
  for (int end : boundaries) {
    out.push_back({begin, end});
    begin = end;
  }
  return out;
}

AlignmentResult align_scores(const Eigen::MatrixXd& scores, bool keep_table) {
  check_feasible(scores);
  const int n = static_cast<int>(scores.rows());
  const int segments = static_cast<int>(scores.cols());
  const double ninf = -std::numeric_limits<double>::infinity();
  // phi(t, m): best potential with step m ending at state t (1-based t).
  Eigen::MatrixXd phi = Eigen::MatrixXd::Constant(n + 1, segments, ninf);
  Eigen::MatrixXi back = Eigen::MatrixXi::Constant(n + 1, segments, -1);
  AlignmentResult result;
  for (int t = 1; t <= n; ++t) phi(t, 0) = scores(t - 1, 0);
  for (int m = 1; m < segments; ++m) {
    for (int t = m + 1; t <= n; ++t) {
      double best = ninf;
      int arg = -1;
      for (int i = m; i < t; ++i) {
        ++result.inner_steps;
        if (phi(i, m - 1) > best) {
          best = phi(i, m - 1);
          arg = i;
        }
      }
      phi(t, m) = scores(t - 1, m) + best;
      back(t, m) = arg;
    }
  }
  result.potential = phi(n, segments - 1);
  result.boundaries.assign(static_cast<std::size_t>(segments), 0);
  int t = n;
  for (int m = segments - 1; m >= 0; --m) {
    result.boundaries[static_cast<std::size_t>(m)] = t;
    t = back(t, m);
  }
  if (keep_table) result.table = phi;
  return result;
}

AlignmentResult brute_force_align_scores(const Eigen::MatrixXd& scores) {
  check_feasible(scores);
  const int n = static_cast<int>(scores.rows());
  const int segments = static_cast<int>(scores.cols());
  if (n > 14 || segments > 5) throw Error(ErrorCode::invalid_argument, "brute force is limited to |Y| <= 14 and M <= 5");
  AlignmentResult best;
  best.potential = -std::numeric_limits<double>::infinity();
  std::vector<int> ends(static_cast<std::size_t>(segments));
  ends.back() = n;
  // Later boundaries are compared first, matching the DP's backward trace.
  auto earlier_tie = [&](const std::vector<int>& a, const std::vector<int>& b) {
    return std::lexicographical_compare(a.rbegin(), a.rend(), b.rbegin(), b.rend());
  };
  std::function<void(int, int)> choose = [&](int m, int lo) {
    if (m == segments - 1) {
      double total = scores(ends[0] - 1, 0);
      for (int k = 1; k < segments; ++k) total = scores(ends[static_cast<std::size_t>(k)] - 1, k) + total;
      if (total > best.potential || (total == best.potential && earlier_tie(ends, best.boundaries))) {
        best.potential = total;
        best.boundaries = ends;
      }
      return;
    }
    // Leave room for the remaining segments.
    for (int t = lo; t <= n - (segments - 1 - m); ++t) {
      ends[static_cast<std::size_t>(m)] = t;
      choose(m + 1, t + 1);
    }
  };
  choose(0, 1);
  return best;
}

Eigen::MatrixXd psi_matrix(const LandmarkModel& model, const WorldGraph& world, const Episode& episode,
                           std::span<const BabyStep> steps) {
  if (world.landmark_vocab() != model.vocab) {
    throw Error(ErrorCode::invalid_argument, "world " + world.id() + " has a different landmark vocabulary");
  }
  std::vector<Eigen::VectorXd> logits;
  for (const auto& s : states_along(world, episode.path)) logits.push_back(landmark_logits(model, observe(world, s)));
  std::vector<std::vector<int>> step_lms;
  for (const auto& step : steps) step_lms.push_back(step_landmark_indices(model, step));
  return psi_from_logits(logits, step_lms);
}

AlignmentResult align(const LandmarkModel& model, const WorldGraph& world, const Episode& episode,
                      std::span<const BabyStep> steps) {
  if (steps.empty()) throw Error(ErrorCode::invalid_argument, "alignment needs at least one BabyStep");
  if (episode.path.size() < steps.size()) {
    throw Error(ErrorCode::infeasible, "episode " + episode.episode_id + " has fewer states than BabySteps");
  }
  return align_scores(psi_matrix(model, world, episode, steps));
}

AlignmentResult brute_force_align(const LandmarkModel& model, const WorldGraph& world, const Episode& episode,
                                  std::span<const BabyStep> steps) {
  if (steps.empty()) throw Error(ErrorCode::invalid_argument, "alignment needs at least one BabyStep");
  if (episode.path.size() < steps.size()) {
    throw Error(ErrorCode::infeasible, "episode " + episode.episode_id + " has fewer states than BabySteps");
  }
  return brute_force_align_scores(psi_matrix(model, world, episode, steps));
}

double boundary_f1(std::span<const int> predicted, std::span<const int> gold) {
  auto internal = [](std::span<const int> b) {
    std::vector<int> out(b.begin(), b.end());
    if (!out.empty()) out.pop_back();
    return out;
  };
  const auto p = internal(predicted), g = internal(gold);
  if (p.empty() && g.empty()) return 1.0;
  int hits = 0;
  for (int b : p) hits += std::count(g.begin(), g.end(), b) > 0 ? 1 : 0;
  if (hits == 0) return 0.0;
  const double precision = static_cast<double>(hits) / static_cast<double>(p.size());
  const double recall = static_cast<double>(hits) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<int> gold_boundaries(std::span<const GoldSegment> gold) {
  std::vector<int> out;
  for (const auto& g : gold) out.push_back(g.path_end);
  return out;
}

nlohmann::json landmark_model_to_json(const LandmarkModel& model) {
  nlohmann::json weights = nlohmann::json::array();
  for (Eigen::Index r = 0; r < model.weights.rows(); ++r) {
    std::vector<double> row(model.weights.cols());
    for (Eigen::Index c = 0; c < model.weights.cols(); ++c) row[static_cast<std::size_t>(c)] = model.weights(r, c);
    weights.push_back(row);
  }
  std::vector<double> bias(model.bias.data(), model.bias.data() + model.bias.size());
  return {{"format", kModelFormat}, {"version", kModelVersion}, {"vocab", model.vocab},
          {"feature_dim", model.weights.cols()}, {"weights", weights}, {"bias", bias}};
}

LandmarkModel landmark_model_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kModelFormat || doc.at("version").get<int>() != kModelVersion) {
      throw Error(ErrorCode::schema_violation, "unsupported landmark model format or version");
    }
    auto model = LandmarkModel::zeros(doc.at("vocab").get<std::vector<std::string>>());
    const auto& weights = doc.at("weights");
    if (doc.at("feature_dim").get<Eigen::Index>() != model.weights.cols() ||
        static_cast<Eigen::Index>(weights.size()) != model.weights.rows()) {
      throw Error(ErrorCode::schema_violation, "landmark model shape does not match its vocabulary");
    }
    for (Eigen::Index r = 0; r < model.weights.rows(); ++r) {
      const auto row = weights[static_cast<std::size_t>(r)].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != model.weights.cols()) {
        throw Error(ErrorCode::schema_violation, "landmark model row has the wrong width");
      }
      for (Eigen::Index c = 0; c < model.weights.cols(); ++c) model.weights(r, c) = row[static_cast<std::size_t>(c)];
    }
    const auto bias = doc.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(bias.size()) != model.bias.size()) {
      throw Error(ErrorCode::schema_violation, "landmark model bias has the wrong size");
    }
    for (std::size_t i = 0; i < bias.size(); ++i) model.bias[static_cast<Eigen::Index>(i)] = bias[i];
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("landmark model: ") + e.what());
  }
}

void save_landmark_model(const LandmarkModel& model, const std::filesystem::path& path) {
  write_text_file_atomic(path, landmark_model_to_json(model).dump() + "\n");
}

LandmarkModel load_landmark_model(const std::filesystem::path& path) {
  try {
    return landmark_model_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::schema_violation, path.string() + ": " + e.what());
  }
}

}  // namespace babywalk
