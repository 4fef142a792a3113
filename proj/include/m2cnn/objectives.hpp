#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "m2cnn/autodiff.hpp"
#include "m2cnn/model.hpp"

namespace m2cnn {

/// One evaluated mini-batch: labels y_i, regression scores and class
/// probabilities (row-major m x k).
struct LossBatch {
  std::size_t k = 5;
  std::vector<int> labels;
  std::vector<double> scores;
  std::vector<double> probs;

  std::size_t m() const { return labels.size(); }
  /// Throws ContractError / LabelError.
  void validate() const;
};

/// Probability floor used before taking logs.
inline constexpr double kProbFloor = 1e-12;

/// -(1/m) sum_i log Prob_{y_i}
double cross_entropy(const LossBatch& batch);
/// (1/m) sum_i (score_i - y_i)^2
double mse(const LossBatch& batch);
/// lambda * sum ||W||^2 over decayed (weight) tensors.
double weight_decay(const ParamStore& params, double lambda);
/// cross_entropy + mse + weight_decay.
double total_loss(const LossBatch& batch, const ParamStore& params, double lambda);

/// Which terms of the joint objective are optimised.
enum class LossMode { multitask, ce_only, mse_only };
std::string_view loss_mode_name(LossMode mode);
LossMode parse_loss_mode(std::string_view text);

struct LossTerms {
  Var total;
  Var ce;
  Var mse;
  Var reg;
};

/// Differentiable joint loss for a recorded forward pass. The reported ce and
/// mse are always computed; mode decides which enter the total.
LossTerms joint_loss(const ForwardResult& fwd, std::span<const int> labels, double lambda,
                     LossMode mode = LossMode::multitask);

/// Clamp to [0, k-1] then round half away from zero. Throws ValueError for
/// non-finite scores.
int predict_from_score(double score, std::size_t k = 5);
/// Argmax, ties to the lowest index.
int predict_from_probs(std::span<const double> probs);

/// 1 - sum(w*O) / sum(w*E) with w_ij = (i-j)^2 / (k-1)^2. Throws
/// DegenerateRatingsError when sum(w*E) == 0, ContractError / LabelError on
/// malformed input.
double quadratic_weighted_kappa(std::span<const int> truth, std::span<const int> pred, std::size_t k);

struct EvalReport {
  std::size_t k = 5;
  std::size_t n = 0;
  std::vector<std::vector<std::size_t>> confusion;  // rows = truth, cols = score-head prediction
  std::vector<std::size_t> class_counts;            // truth per class
  double qwk_scores = 0.0;
  double qwk_probs = 0.0;
};

/// Scores are one per instance; probs row-major n x k.
EvalReport evaluate(std::span<const double> scores, std::span<const double> probs, std::span<const int> truth,
                    std::size_t k = 5);
/// Same, from already-decided class predictions.
EvalReport evaluate_predictions(std::span<const int> score_classes, std::span<const int> prob_classes,
                                std::span<const int> truth, std::size_t k = 5);

void to_json(nlohmann::json& j, const EvalReport& report);
void from_json(const nlohmann::json& j, EvalReport& report);
/// Aligned text table, truth down the side, prediction across the top.
std::string confusion_table(const EvalReport& report);

}  // namespace m2cnn
