#include "m2cnn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "m2cnn/checkpoint.hpp"
#include "m2cnn/error.hpp"
#include "m2cnn/kernels.hpp"
#include "m2cnn/rng.hpp"

namespace m2cnn {

void TrainConfig::validate() const {
  if (!(lr_pretrained >= 0.0) || !(lr_fresh >= 0.0)) {
    throw ConfigurationError(fmt::format("learning rates must be non-negative, got {} and {}", lr_pretrained, lr_fresh));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigurationError(fmt::format("momentum must be in [0,1), got {}", momentum));
  if (batch_size < 1) throw ConfigurationError("batch_size must be >= 1");
  if (steps < 1) throw ConfigurationError("steps must be >= 1");
  if (!(lambda >= 0.0)) throw ConfigurationError(fmt::format("lambda must be >= 0, got {}", lambda));
  if (!(clip_norm >= 0.0)) throw ConfigurationError(fmt::format("clip_norm must be >= 0, got {}", clip_norm));
}

std::size_t TrainConfig::eval_interval(std::size_t stage_steps) const {
  return eval_every != 0 ? eval_every : std::max<std::size_t>(stage_steps / 20, 10);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr_pretrained", c.lr_pretrained}, {"lr_fresh", c.lr_fresh},
                     {"momentum", c.momentum},           {"batch_size", c.batch_size},
                     {"steps", c.steps},                 {"lambda", c.lambda},
                     {"seed", c.seed},                   {"loss_mode", loss_mode_name(c.loss_mode)},
                     {"hflip", c.hflip},                 {"eval_every", c.eval_every},
                     {"clip_norm", c.clip_norm}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known{"lr_pretrained", "lr_fresh", "momentum",  "batch_size", "steps",
                                           "lambda",        "seed",     "loss_mode", "hflip",      "eval_every", "clip_norm"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigurationError(fmt::format("unknown training key '{}'", key));
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("lr_pretrained", c.lr_pretrained);
  get("lr_fresh", c.lr_fresh);
  get("momentum", c.momentum);
  get("batch_size", c.batch_size);
  get("steps", c.steps);
  get("lambda", c.lambda);
  get("seed", c.seed);
  get("hflip", c.hflip);
  get("eval_every", c.eval_every);
  get("clip_norm", c.clip_norm);
  if (j.contains("loss_mode")) c.loss_mode = parse_loss_mode(j.at("loss_mode").get<std::string>());
}

void to_json(nlohmann::json& j, const ScheduleStage& s) {
  j = nlohmann::json{{"resolution", s.resolution}, {"steps", s.steps}};
  if (s.warm_start) j["warm_start"] = s.warm_start->string();
}

void from_json(const nlohmann::json& j, ScheduleStage& s) {
  j.at("resolution").get_to(s.resolution);
  j.at("steps").get_to(s.steps);
  if (j.contains("warm_start") && !j.at("warm_start").is_null()) s.warm_start = j.at("warm_start").get<std::string>();
}

void TrainLog::append(const TrainLog& other) {
  steps.insert(steps.end(), other.steps.begin(), other.steps.end());
  evals.insert(evals.end(), other.evals.begin(), other.evals.end());
  stages.insert(stages.end(), other.stages.begin(), other.stages.end());
}

std::string TrainLog::to_csv() const {
  std::string out = "step,total,ce,mse,reg,grad_norm\n";
  for (const auto& s : steps) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", s.step, s.total, s.ce, s.mse, s.reg, s.grad_norm);
  }
  return out;
}

nlohmann::json TrainLog::to_json(bool include_timing) const {
  nlohmann::json j;
  j["steps"] = nlohmann::json::array();
  for (const auto& s : steps) {
    j["steps"].push_back({{"step", s.step}, {"total", s.total}, {"ce", s.ce}, {"mse", s.mse}, {"reg", s.reg},
                           {"grad_norm", s.grad_norm}});
  }
  j["evals"] = nlohmann::json::array();
  for (const auto& e : evals) {
    nlohmann::json r{{"step", e.step}};
    r["qwk_scores"] = e.qwk_scores ? nlohmann::json(*e.qwk_scores) : nlohmann::json(nullptr);
    r["qwk_probs"] = e.qwk_probs ? nlohmann::json(*e.qwk_probs) : nlohmann::json(nullptr);
    j["evals"].push_back(std::move(r));
  }
  j["stages"] = nlohmann::json::array();
  for (const auto& s : stages) {
    nlohmann::json r{{"index", s.index},           {"resolution", s.resolution}, {"route", route_name(s.route)},
                     {"first_step", s.first_step}, {"last_step", s.last_step},   {"macs_per_image", s.macs_per_image}};
    if (include_timing) r["wall_seconds"] = s.wall_seconds;
    j["stages"].push_back(std::move(r));
  }
  return j;
}

MomentumSgd::MomentumSgd(const ParamStore& params) {
  for (const auto& e : params.entries()) velocity_.emplace_back(e.tensor.size(), 0.0);
}

double MomentumSgd::step(ParamStore& params, const std::vector<std::vector<double>>& grads, const TrainConfig& cfg) {
  auto entries = params.entries();
  if (grads.size() != entries.size() || velocity_.size() != entries.size()) {
    throw ContractError(fmt::format("optimizer: {} parameters, {} gradients, {} velocity buffers", entries.size(),
                                    grads.size(), velocity_.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (grads[i].size() != entries[i].tensor.size()) {
      throw ContractError(fmt::format("optimizer: gradient for '{}' has {} elements, expected {}", entries[i].name,
                                      grads[i].size(), entries[i].tensor.size()));
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) throw DivergenceError(fmt::format("non-finite gradient in '{}'", entries[i].name));
    }
  }
  double sum_sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g) sum_sq += x * x;
  }
  const double norm = std::sqrt(sum_sq);
  if (!std::isfinite(norm)) throw DivergenceError("gradient norm overflowed");
  const double scale = cfg.clip_norm > 0.0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const double lr = entries[i].group == ParamGroup::pretrained ? cfg.lr_pretrained : cfg.lr_fresh;
    auto& v = velocity_[i];
    auto p = entries[i].tensor.data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = cfg.momentum * v[k] + scale * grads[i][k];
      p[k] -= lr * v[k];
    }
  }
  return norm;
}

Predictions predict(const ArchConfig& arch, const ParamStore& params, const Dataset& data, std::size_t chunk) {
  Predictions out;
  if (data.empty()) return out;
  const Route route = select_route(data[0].pixels.height, data[0].pixels.width, arch);
  const Network net(arch, route, params);
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    Graph g;
    const auto fwd = net.forward(g, dataset_tensor(data, begin, end), false);
    const Tensor probs = kernels::softmax(fwd.logits.value());
    out.scores.insert(out.scores.end(), fwd.scores.value().data().begin(), fwd.scores.value().data().end());
    out.probs.insert(out.probs.end(), probs.data().begin(), probs.data().end());
  }
  return out;
}

EvalReport evaluate_model(const ArchConfig& arch, const ParamStore& params, const Dataset& data) {
  const auto p = predict(arch, params, data);
  const auto truth = grades_of(data);
  return evaluate(p.scores, p.probs, truth, arch.num_classes);
}

namespace {

std::optional<double> safe_kappa(std::span<const int> truth, std::span<const int> pred, std::size_t k) {
  try {
    return quadratic_weighted_kappa(truth, pred, k);
  } catch (const DegenerateRatingsError&) {
    return std::nullopt;
  }
}

EvalRecord eval_record(const ArchConfig& arch, const ParamStore& params, const Dataset& data, std::size_t step) {
  const auto p = predict(arch, params, data);
  const auto truth = grades_of(data);
  std::vector<int> by_score, by_prob;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    by_score.push_back(predict_from_score(p.scores[i], arch.num_classes));
    by_prob.push_back(predict_from_probs(std::span(p.probs).subspan(i * arch.num_classes, arch.num_classes)));
  }
  return {step, safe_kappa(truth, by_score, arch.num_classes), safe_kappa(truth, by_prob, arch.num_classes)};
}

std::string fmt_kappa(const std::optional<double>& k) { return k ? fmt::format("{:.4f}", *k) : std::string("n/a"); }

}  // namespace

StageResult train_stage(const ScheduleStage& stage, const TrainContext& ctx, const Dataset& data,
                        const ParamStore* warm, std::size_t stage_index, std::size_t first_step) {
  ctx.arch.validate();
  TrainConfig cfg = ctx.train;
  cfg.steps = stage.steps;
  cfg.validate();
  if (data.empty()) throw ConfigurationError("training data is empty");
  for (const auto& item : data) {
    if (item.pixels.height != stage.resolution || item.pixels.width != stage.resolution) {
      throw ConfigurationError(fmt::format("stage expects {0}x{0} images but '{1}' is {2}x{3}", stage.resolution,
                                           item.id, item.pixels.height, item.pixels.width));
    }
  }
  const Route route = select_route(stage.resolution, stage.resolution, ctx.arch);

  StageResult result;
  if (warm) {
    result.params = transfer_params(*warm, route, ctx.arch, cfg.seed);
  } else if (stage.warm_start) {
    const Checkpoint ck = load_checkpoint(*stage.warm_start);
    if (!(ck.arch == ctx.arch)) {
      throw ConfigurationError(
          fmt::format("warm-start checkpoint {} was trained with a different architecture", stage.warm_start->string()));
    }
    result.params = transfer_params(ck.params, route, ctx.arch, cfg.seed);
  } else {
    result.params = init_params(ctx.arch, route, cfg.seed);
  }

  const Network net(ctx.arch, route, result.params);
  MomentumSgd optimizer(result.params);
  const std::uint64_t shuffle_seed = mix_seed(cfg.seed, 0x5EED0000ULL + stage_index);
  const std::size_t interval = cfg.eval_interval(stage.steps);
  const auto started = std::chrono::steady_clock::now();

  std::uint64_t epoch = 0;
  auto epoch_batches = batches(data, cfg.batch_size, shuffle_seed, epoch, cfg.hflip);
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < stage.steps; ++s) {
    if (cursor == epoch_batches.size()) {
      epoch_batches = batches(data, cfg.batch_size, shuffle_seed, ++epoch, cfg.hflip);
      cursor = 0;
    }
    const Batch& batch = epoch_batches[cursor++];
    Graph g;
    const auto fwd = net.forward(g, batch_tensor(data, batch));
    const auto loss = joint_loss(fwd, batch.labels, cfg.lambda, cfg.loss_mode);
    const double total = loss.total.value().item();
    const std::size_t step = first_step + s;
    if (!std::isfinite(total)) throw DivergenceError(fmt::format("total loss became {} at step {}", total, step));
    g.backward(loss.total);
    std::vector<std::vector<double>> grads;
    grads.reserve(fwd.params.size());
    for (const auto& [name, var] : fwd.params) grads.emplace_back(var.grad().begin(), var.grad().end());
    const double norm = optimizer.step(result.params, grads, cfg);
    result.log.steps.push_back(
        {step, total, loss.ce.value().item(), loss.mse.value().item(), loss.reg.value().item(), norm});

    if (ctx.eval && !ctx.eval->empty() && ((s + 1) % interval == 0 || s + 1 == stage.steps)) {
      result.log.evals.push_back(eval_record(ctx.arch, result.params, *ctx.eval, step));
      if (ctx.progress) {
        const auto& e = result.log.evals.back();
        ctx.progress(fmt::format("stage {} step {} loss {:.4f} qwk(scores) {} qwk(probs) {}", stage_index, step, total,
                                 fmt_kappa(e.qwk_scores), fmt_kappa(e.qwk_probs)));
      }
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  result.log.stages.push_back({stage_index, stage.resolution, route, first_step, first_step + stage.steps - 1,
                               shape_plan(ctx.arch, stage.resolution, stage.resolution).macs, seconds});
  if (ctx.progress) {
    ctx.progress(fmt::format("stage {} ({}px, route {}) finished {} steps in {:.1f}s", stage_index, stage.resolution,
                             route_name(route), stage.steps, seconds));
  }
  return result;
}

void validate_schedule(const std::vector<ScheduleStage>& stages, const ArchConfig& arch) {
  if (stages.empty()) throw ConfigurationError("schedule has no stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].steps < 1) throw ConfigurationError(fmt::format("stage {} must run at least one step", i));
    try {
      select_route(stages[i].resolution, stages[i].resolution, arch);
    } catch (const DimensionError& e) {
      throw ConfigurationError(fmt::format("stage {}: {}", i, e.what()));
    }
    if (i > 0 && stages[i].resolution < stages[i - 1].resolution) {
      throw ConfigurationError(fmt::format("stage resolutions must not decrease: stage {} is {}px after {}px", i,
                                           stages[i].resolution, stages[i - 1].resolution));
    }
    if (i > 0 && stages[i].warm_start) {
      throw ConfigurationError(fmt::format("only the first stage may name a warm-start checkpoint (stage {})", i));
    }
  }
}

StageResult run_schedule(const std::vector<ScheduleStage>& stages, const TrainContext& ctx, const DataProvider& data,
                         const EvalProvider& eval) {
  validate_schedule(stages, ctx.arch);
  StageResult merged;
  std::size_t next_step = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    TrainContext stage_ctx = ctx;
    stage_ctx.eval = eval ? eval(stages[i].resolution) : ctx.eval;
    StageResult r = train_stage(stages[i], stage_ctx, data(stages[i].resolution), i == 0 ? nullptr : &merged.params, i,
                                next_step);
    next_step += stages[i].steps;
    merged.params = std::move(r.params);
    merged.log.append(r.log);
  }
  return merged;
}

}  // namespace m2cnn
