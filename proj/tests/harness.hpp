#pragma once

// Training runs shared by the trainer tests and the acceptance binary.

#include <cstdint>
#include <vector>

#include "m2cnn/dataio.hpp"
#include "m2cnn/model.hpp"
#include "m2cnn/objectives.hpp"
#include "m2cnn/run_config.hpp"
#include "m2cnn/trainer.hpp"

namespace harness {

// Total loss over a whole dataset in one forward pass.
inline double dataset_loss(const m2cnn::ArchConfig& arch, const m2cnn::ParamStore& params, const m2cnn::Dataset& data,
                           const m2cnn::TrainConfig& cfg) {
  const std::size_t res = data.front().pixels.height;
  const m2cnn::Network net(arch, m2cnn::select_route(res, res, arch), params);
  m2cnn::Graph g;
  const auto fwd = net.forward(g, m2cnn::dataset_tensor(data, 0, data.size()), false);
  const auto labels = m2cnn::grades_of(data);
  return m2cnn::joint_loss(fwd, labels, cfg.lambda, cfg.loss_mode).total.value().item();
}

inline m2cnn::Dataset tiny_set(std::uint64_t seed, std::size_t resolution = 32) {
  m2cnn::SynthSpec spec;
  spec.resolution = resolution;
  spec.counts = {2, 2, 2, 1, 1};
  spec.seed = seed;
  return m2cnn::generate_synthetic(spec);
}

struct OverfitResult {
  double initial = 0.0;
  double final = 0.0;
};

// Eight images, one full batch per step, desk hyperparameters.
inline OverfitResult overfit(std::uint64_t seed, std::size_t steps) {
  const m2cnn::RunConfig desk = m2cnn::RunConfig::desk();
  const m2cnn::Dataset data = tiny_set(seed);
  m2cnn::TrainContext ctx{desk.arch, desk.train, nullptr, {}};
  ctx.train.seed = seed;
  ctx.train.batch_size = data.size();
  const auto initial = m2cnn::init_params(desk.arch, m2cnn::Route::small, seed);
  const auto r = m2cnn::train_stage({32, steps, {}}, ctx, data);
  return {dataset_loss(desk.arch, initial, data, ctx.train), dataset_loss(desk.arch, r.params, data, ctx.train)};
}

}  // namespace harness
