#include "m2cnn/objectives.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "m2cnn/error.hpp"

namespace m2cnn {

void LossBatch::validate() const {
  if (labels.empty()) throw ContractError("loss batch must hold at least one instance");
  if (scores.size() != labels.size()) {
    throw ContractError(fmt::format("{} labels but {} scores", labels.size(), scores.size()));
  }
  if (probs.size() != labels.size() * k) {
    throw ContractError(fmt::format("probs must be {}x{}, got {} values", labels.size(), k, probs.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw LabelError(fmt::format("label {} at index {} outside [0,{})", labels[i], i, k));
    }
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += probs[i * k + j];
    if (std::abs(s - 1.0) > 1e-9) throw ContractError(fmt::format("probability row {} sums to {}", i, s));
  }
}

double cross_entropy(const LossBatch& batch) {
  batch.validate();
  double s = 0.0;
  for (std::size_t i = 0; i < batch.m(); ++i) {
    const double p = batch.probs[i * batch.k + static_cast<std::size_t>(batch.labels[i])];
    s += std::log(std::max(p, kProbFloor));
  }
  return -s / static_cast<double>(batch.m());
}

double mse(const LossBatch& batch) {
  batch.validate();
  double s = 0.0;
  for (std::size_t i = 0; i < batch.m(); ++i) {
    const double d = batch.scores[i] - static_cast<double>(batch.labels[i]);
    s += d * d;
  }
  return s / static_cast<double>(batch.m());
}

double weight_decay(const ParamStore& params, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError(fmt::format("lambda must be >= 0, got {}", lambda));
  double s = 0.0;
  for (const auto& e : params.entries()) {
    if (!is_decayed(e.name)) continue;
    double t = 0.0;
    for (double v : e.tensor.data()) t += v * v;
    s += t;
  }
  return lambda * s;
}

double total_loss(const LossBatch& batch, const ParamStore& params, double lambda) {
  return cross_entropy(batch) + mse(batch) + weight_decay(params, lambda);
}

std::string_view loss_mode_name(LossMode mode) {
  switch (mode) {
    case LossMode::multitask: return "multitask";
    case LossMode::ce_only: return "ce_only";
    case LossMode::mse_only: return "mse_only";
  }
  return "?";
}

LossMode parse_loss_mode(std::string_view text) {
  if (text == "multitask") return LossMode::multitask;
  if (text == "ce_only") return LossMode::ce_only;
  if (text == "mse_only") return LossMode::mse_only;
  throw ParameterError(fmt::format("unknown loss mode '{}' (expected multitask, ce_only or mse_only)", text));
}

LossTerms joint_loss(const ForwardResult& fwd, std::span<const int> labels, double lambda, LossMode mode) {
  if (!(lambda >= 0.0)) throw ParameterError(fmt::format("lambda must be >= 0, got {}", lambda));
  LossTerms t;
  t.ce = cross_entropy(fwd.logits, labels);
  t.mse = mean_squared_error(fwd.scores, labels);
  // Summed per tensor, then across tensors in store order, matching
  // weight_decay() exactly.
  Graph& g = fwd.logits.graph();
  Var reg = g.constant(Tensor::scalar(0.0));
  for (const auto& [name, var] : fwd.params) {
    if (is_decayed(name)) reg = add(reg, sum_squares(var));
  }
  t.reg = scale(reg, lambda);
  switch (mode) {
    case LossMode::multitask: t.total = add(add(t.ce, t.mse), t.reg); break;
    case LossMode::ce_only: t.total = add(t.ce, t.reg); break;
    case LossMode::mse_only: t.total = add(t.mse, t.reg); break;
  }
  return t;
}

int predict_from_score(double score, std::size_t k) {
  if (!std::isfinite(score)) throw ValueError(fmt::format("score {} is not finite", score));
  const double clamped = std::clamp(score, 0.0, static_cast<double>(k - 1));
  return static_cast<int>(std::round(clamped));
}

int predict_from_probs(std::span<const double> probs) {
  if (probs.empty()) throw ContractError("empty probability vector");
  std::size_t best = 0;
  for (std::size_t j = 1; j < probs.size(); ++j)
    if (probs[j] > probs[best]) best = j;
  return static_cast<int>(best);
}

namespace {

void check_labels(std::span<const int> v, std::size_t k, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0 || static_cast<std::size_t>(v[i]) >= k) {
      throw LabelError(fmt::format("{} label {} at index {} outside [0,{})", what, v[i], i, k));
    }
  }
}

}  // namespace

double quadratic_weighted_kappa(std::span<const int> truth, std::span<const int> pred, std::size_t k) {
  if (k < 2) throw ContractError("kappa needs at least two classes");
  if (truth.empty() || truth.size() != pred.size()) {
    throw ContractError(fmt::format("kappa needs equal-length nonempty ratings, got {} and {}", truth.size(),
                                    pred.size()));
  }
  check_labels(truth, k, "truth");
  check_labels(pred, k, "prediction");
  std::vector<double> observed(k * k, 0.0), row(k, 0.0), col(k, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(pred[i]);
    observed[t * k + p] += 1.0;
    row[t] += 1.0;
    col[p] += 1.0;
  }
  const double n = static_cast<double>(truth.size());
  const double norm = static_cast<double>((k - 1) * (k - 1));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double d = static_cast<double>(i) - static_cast<double>(j);
      const double w = d * d / norm;
      num += w * observed[i * k + j];
      den += w * row[i] * col[j] / n;
    }
  }
  if (den == 0.0) {
    throw DegenerateRatingsError("kappa undefined: both ratings are the same single class");
  }
  return 1.0 - num / den;
}

EvalReport evaluate_predictions(std::span<const int> score_classes, std::span<const int> prob_classes,
                                std::span<const int> truth, std::size_t k) {
  if (score_classes.size() != truth.size() || prob_classes.size() != truth.size()) {
    throw ContractError(fmt::format("evaluate: {} truths, {} score predictions, {} probability predictions",
                                    truth.size(), score_classes.size(), prob_classes.size()));
  }
  EvalReport r;
  r.k = k;
  r.n = truth.size();
  r.qwk_scores = quadratic_weighted_kappa(truth, score_classes, k);
  r.qwk_probs = quadratic_weighted_kappa(truth, prob_classes, k);
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  r.class_counts.assign(k, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(score_classes[i])];
    ++r.class_counts[static_cast<std::size_t>(truth[i])];
  }
  return r;
}

EvalReport evaluate(std::span<const double> scores, std::span<const double> probs, std::span<const int> truth,
                    std::size_t k) {
  if (scores.size() != truth.size() || probs.size() != truth.size() * k) {
    throw ContractError(fmt::format("evaluate: {} truths but {} scores and {} probabilities", truth.size(),
                                    scores.size(), probs.size()));
  }
  std::vector<int> by_score(truth.size()), by_prob(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    by_score[i] = predict_from_score(scores[i], k);
    by_prob[i] = predict_from_probs(probs.subspan(i * k, k));
  }
  return evaluate_predictions(by_score, by_prob, truth, k);
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"k", r.k},
                     {"n", r.n},
                     {"qwk_scores", r.qwk_scores},
                     {"qwk_probs", r.qwk_probs},
                     {"class_counts", r.class_counts},
                     {"confusion", r.confusion}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("k").get_to(r.k);
  j.at("n").get_to(r.n);
  j.at("qwk_scores").get_to(r.qwk_scores);
  j.at("qwk_probs").get_to(r.qwk_probs);
  j.at("class_counts").get_to(r.class_counts);
  j.at("confusion").get_to(r.confusion);
}

std::string confusion_table(const EvalReport& r) {
  std::size_t width = 5;
  for (const auto& row : r.confusion)
    for (auto v : row) width = std::max(width, fmt::formatted_size("{}", v) + 1);
  std::string out = fmt::format("{:>{}}", "t\\p", 6);
  for (std::size_t j = 0; j < r.k; ++j) out += fmt::format("{:>{}}", j, width);
  out += '\n';
  for (std::size_t i = 0; i < r.k; ++i) {
    out += fmt::format("{:>{}}", i, 6);
    for (std::size_t j = 0; j < r.k; ++j) out += fmt::format("{:>{}}", r.confusion[i][j], width);
    out += '\n';
  }
  return out;
}

}  // namespace m2cnn
