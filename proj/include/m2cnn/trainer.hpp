#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "m2cnn/dataio.hpp"
#include "m2cnn/model.hpp"
#include "m2cnn/objectives.hpp"

namespace m2cnn {

struct TrainConfig {
  double lr_pretrained = 1e-4;  // tensors carried over from an earlier stage
  double lr_fresh = 1e-3;       // newly initialised tensors
  double momentum = 0.9;
  std::size_t batch_size = 16;
  std::size_t steps = 100;
  double lambda = 4e-5;  // weight decay coefficient
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::multitask;
  bool hflip = false;
  std::size_t eval_every = 0;  // 0: every max(steps / 20, 10) steps
  double clip_norm = 0.0;      // global gradient norm cap; 0 disables

  /// Throws ConfigurationError.
  void validate() const;
  std::size_t eval_interval(std::size_t stage_steps) const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct ScheduleStage {
  std::size_t resolution = 0;
  std::size_t steps = 0;
  std::optional<std::filesystem::path> warm_start;
};

void to_json(nlohmann::json& j, const ScheduleStage& stage);
void from_json(const nlohmann::json& j, ScheduleStage& stage);

struct StepRecord {
  std::size_t step;
  double total;
  double ce;
  double mse;
  double reg;
  double grad_norm;  // before clipping
};

struct EvalRecord {
  std::size_t step;
  std::optional<double> qwk_scores;  // empty when the ratings were degenerate
  std::optional<double> qwk_probs;
};

struct StageRecord {
  std::size_t index;
  std::size_t resolution;
  Route route;
  std::size_t first_step;
  std::size_t last_step;
  std::uint64_t macs_per_image;
  double wall_seconds;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::vector<StageRecord> stages;

  void append(const TrainLog& other);
  /// "step,total,ce,mse,reg,grad_norm", 17 significant digits.
  std::string to_csv() const;
  /// Wall-clock is left out unless asked for, so repeated runs serialise to
  /// identical bytes.
  nlohmann::json to_json(bool include_timing = false) const;
};

/// Velocity buffers for momentum SGD, aligned with a ParamStore.
class MomentumSgd {
 public:
  explicit MomentumSgd(const ParamStore& params);

  /// v <- momentum * v + g;  p <- p - lr(group) * v, where g is first scaled
  /// down to norm clip_norm if its global norm exceeds it. Throws
  /// DivergenceError naming the first tensor with a non-finite gradient,
  /// before touching any parameter. Returns the unclipped global norm.
  double step(ParamStore& params, const std::vector<std::vector<double>>& grads, const TrainConfig& cfg);

 private:
  std::vector<std::vector<double>> velocity_;
};

struct Predictions {
  std::vector<double> scores;
  std::vector<double> probs;  // n x k
};

/// Forward passes in chunks, no gradients.
Predictions predict(const ArchConfig& arch, const ParamStore& params, const Dataset& data, std::size_t chunk = 32);
EvalReport evaluate_model(const ArchConfig& arch, const ParamStore& params, const Dataset& data);

using ProgressFn = std::function<void(const std::string&)>;

struct StageResult {
  ParamStore params;
  TrainLog log;
};

struct TrainContext {
  ArchConfig arch;
  TrainConfig train;
  const Dataset* eval = nullptr;  // periodic evaluation; skipped when null
  ProgressFn progress;
};

/// Runs exactly stage.steps optimiser steps on data (all images at
/// stage.resolution). Parameters come from warm (transferred to the stage's
/// route), else from stage.warm_start, else fresh initialisation.
StageResult train_stage(const ScheduleStage& stage, const TrainContext& ctx, const Dataset& data,
                        const ParamStore* warm = nullptr, std::size_t stage_index = 0, std::size_t first_step = 0);

using DataProvider = std::function<const Dataset&(std::size_t resolution)>;
using EvalProvider = std::function<const Dataset*(std::size_t resolution)>;

/// Stage resolutions must be non-decreasing; each stage after the first
/// warm-starts from its predecessor through transfer_params.
StageResult run_schedule(const std::vector<ScheduleStage>& stages, const TrainContext& ctx, const DataProvider& data,
                         const EvalProvider& eval = {});

void validate_schedule(const std::vector<ScheduleStage>& stages, const ArchConfig& arch);

}  // namespace m2cnn
