#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "babywalk/dataset.hpp"
#include "babywalk/instruction.hpp"
#include "babywalk/world.hpp"
#include "json.hpp"

namespace babywalk {

/// Flattened observation layout: directional grid then local landmarks.
int observation_feature_dim(int vocab_size);
/// Indices of the non-zero (all 1.0) entries of the flattened observation.
std::vector<int> observation_features(const Observation& obs);

/// Linear per-state landmark scorer.
struct LandmarkModel {
  std::vector<std::string> vocab;
  Eigen::MatrixXd weights;  // vocab x feature_dim
  Eigen::VectorXd bias;     // vocab

  static LandmarkModel zeros(std::vector<std::string> vocab);
  int vocab_size() const { return static_cast<int>(vocab.size()); }
  bool finite() const { return weights.allFinite() && bias.allFinite(); }
  friend bool operator==(const LandmarkModel& a, const LandmarkModel& b) {
    return a.vocab == b.vocab && a.weights == b.weights && a.bias == b.bias;
  }
};

struct LandmarkTrainOptions {
  int epochs = 300;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  double init_scale = 0.01;
};

/// Full-batch gradient descent on the summed trajectory-level BCE between
/// max-pooled per-state logits and the instruction's landmark labels.
/// `loss_history`, when given, receives the loss before every epoch and
/// after the last one (epochs + 1 values).
LandmarkModel train_landmark_model(std::span<const Episode> episodes, const WorldIndex& worlds,
                                   const Lexicon& lexicon, const LandmarkTrainOptions& options,
                                   std::vector<double>* loss_history = nullptr);

double landmark_loss(const LandmarkModel& model, std::span<const Episode> episodes, const WorldIndex& worlds,
                     const Lexicon& lexicon);

/// Vocabulary indices named by a list of landmark phrases.
std::vector<int> vocab_indices(const std::vector<std::string>& vocab, std::span<const std::string> phrases);

Eigen::VectorXd landmark_logits(const LandmarkModel& model, const Observation& obs);

/// Vocabulary indices of a step's landmarks (de-duplicated, unknown words dropped).
std::vector<int> step_landmark_indices(const LandmarkModel& model, const BabyStep& step);

/// Mean logit of the step's landmarks; 0 when none are in the vocabulary.
double psi(const LandmarkModel& model, const Observation& obs, const BabyStep& step);

struct AlignmentResult {
  std::vector<int> boundaries;  // exclusive end index of each segment
  double potential = 0.0;
  std::optional<Eigen::MatrixXd> table;
  std::uint64_t inner_steps = 0;  // max-candidates examined by the DP

  std::vector<PathSpan> spans() const;
};

/// DP over a precomputed score matrix: scores(t, m) scores ending step m at
/// state t (0-based). Ties go to the smallest end index.
AlignmentResult align_scores(const Eigen::MatrixXd& scores, bool keep_table = false);
/// Exhaustive search with the same tie-break; |Y| <= 14 and M <= 5.
AlignmentResult brute_force_align_scores(const Eigen::MatrixXd& scores);

Eigen::MatrixXd psi_matrix(const LandmarkModel& model, const WorldGraph& world, const Episode& episode,
                           std::span<const BabyStep> steps);

AlignmentResult align(const LandmarkModel& model, const WorldGraph& world, const Episode& episode,
                      std::span<const BabyStep> steps);
AlignmentResult brute_force_align(const LandmarkModel& model, const WorldGraph& world, const Episode& episode,
                                  std::span<const BabyStep> steps);

/// F1 of internal boundaries (the final one is always shared and excluded).
double boundary_f1(std::span<const int> predicted, std::span<const int> gold);
/// Exclusive end indices of gold segments.
std::vector<int> gold_boundaries(std::span<const GoldSegment> gold);

nlohmann::json landmark_model_to_json(const LandmarkModel& model);
LandmarkModel landmark_model_from_json(const nlohmann::json& doc);
void save_landmark_model(const LandmarkModel& model, const std::filesystem::path& path);
LandmarkModel load_landmark_model(const std::filesystem::path& path);

}  // namespace babywalk
