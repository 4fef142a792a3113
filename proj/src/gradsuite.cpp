#include "m2cnn/gradsuite.hpp"

#include <functional>

#include <fmt/format.h>

#include "m2cnn/autodiff.hpp"
#include "m2cnn/error.hpp"
#include "m2cnn/rng.hpp"

namespace m2cnn {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double spread = 1.0) {
  Tensor t(shape);
  for (auto& v : t.values()) v = rng.uniform(-spread, spread);
  return t;
}

std::vector<int> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<int> out(n);
  for (auto& v : out) v = static_cast<int>(rng.below(k));
  return out;
}

struct Family {
  const char* name;
  std::function<std::pair<GraphBuilder, std::vector<Tensor>>(Rng&)> make;
};

const std::vector<Family>& families() {
  static const std::vector<Family> all{
      {"conv-relu-sumsq",
       [](Rng& rng) {
         const std::size_t n = 1 + rng.below(2), s = 4 + rng.below(3), cin = 1 + rng.below(3), cout = 1 + rng.below(3);
         const std::size_t stride = 1 + rng.below(2);
         const Padding pad = rng.below(2) ? Padding::same : Padding::valid;
         std::vector<Tensor> in{random_tensor({n, s, s, cin}, rng), random_tensor({3, 3, cin, cout}, rng),
                                random_tensor({cout}, rng, 0.1)};
         GraphBuilder b = [=](Graph&, std::span<const Var> v) {
           return sum_squares(relu(conv2d(v[0], v[1], v[2], stride, pad)));
         };
         return std::make_pair(b, in);
       }},
      {"conv-pool-dense-ce",
       [](Rng& rng) {
         const std::size_t n = 2, s = 6 + rng.below(3), cin = 1 + rng.below(2), c = 2 + rng.below(2), k = 3 + rng.below(3);
         auto labels = random_labels(n, k, rng);
         std::vector<Tensor> in{random_tensor({n, s, s, cin}, rng), random_tensor({3, 3, cin, c}, rng),
                                random_tensor({c}, rng, 0.1), random_tensor({c, k}, rng), random_tensor({k}, rng)};
         GraphBuilder b = [=](Graph&, std::span<const Var> v) {
           Var h = relu(conv2d(v[0], v[1], v[2], 1, Padding::valid));
           Var p = avgpool_global(maxpool2d(h, 2 + (s % 2), 2));
           return cross_entropy(dense(p, v[3], v[4]), labels);
         };
         return std::make_pair(b, in);
       }},
      {"dense-softmax-weighted",
       [](Rng& rng) {
         const std::size_t n = 1 + rng.below(3), d = 2 + rng.below(4), k = 2 + rng.below(4);
         Tensor w = random_tensor({n, k}, rng);
         std::vector<Tensor> in{random_tensor({n, d}, rng), random_tensor({d, k}, rng), random_tensor({k}, rng)};
         GraphBuilder b = [=](Graph& g, std::span<const Var> v) {
           return sum(mul(softmax(dense(v[0], v[1], v[2])), g.constant(w)));
         };
         return std::make_pair(b, in);
       }},
      {"dense-mse",
       [](Rng& rng) {
         const std::size_t n = 2 + rng.below(3), d = 2 + rng.below(4);
         auto labels = random_labels(n, 5, rng);
         std::vector<Tensor> in{random_tensor({n, d}, rng), random_tensor({d, 1}, rng), random_tensor({1}, rng)};
         GraphBuilder b = [=](Graph&, std::span<const Var> v) {
           return mean_squared_error(reshape(dense(v[0], v[1], v[2]), {n}), labels);
         };
         return std::make_pair(b, in);
       }},
      {"residual-cell-ce-mse",
       [](Rng& rng) {
         const std::size_t n = 2, s = 4 + rng.below(2), c = 2 + rng.below(2);
         auto labels = random_labels(n, 5, rng);
         std::vector<Tensor> in{random_tensor({n, s, s, c}, rng),  random_tensor({3, 3, c, c}, rng, 0.5),
                                random_tensor({c}, rng, 0.1),      random_tensor({3, 3, c, c}, rng, 0.5),
                                random_tensor({c}, rng, 0.1),      random_tensor({c, 5}, rng),
                                random_tensor({5}, rng),           random_tensor({c, 1}, rng),
                                random_tensor({1}, rng)};
         GraphBuilder b = [=](Graph&, std::span<const Var> v) {
           Var branch = conv2d(relu(conv2d(v[0], v[1], v[2], 1, Padding::same)), v[3], v[4], 1, Padding::same);
           Var x = relu(add(v[0], scale(branch, 0.2)));
           Var p = avgpool_global(x);
           Var ce = cross_entropy(dense(p, v[5], v[6]), labels);
           Var se = mean_squared_error(reshape(dense(p, v[7], v[8]), {n}), labels);
           return add(ce, se);
         };
         return std::make_pair(b, in);
       }},
      {"total-loss",
       [](Rng& rng) {
         const std::size_t n = 2 + rng.below(2), s = 5 + rng.below(3), c = 2 + rng.below(2);
         const double lambda = rng.uniform(1e-3, 1e-1);
         auto labels = random_labels(n, 5, rng);
         std::vector<Tensor> in{random_tensor({n, s, s, 3}, rng), random_tensor({3, 3, 3, c}, rng),
                                random_tensor({c}, rng, 0.1),     random_tensor({c, 1}, rng),
                                random_tensor({1}, rng),          random_tensor({c, 5}, rng),
                                random_tensor({5}, rng)};
         GraphBuilder b = [=](Graph&, std::span<const Var> v) {
           Var p = avgpool_global(relu(conv2d(v[0], v[1], v[2], 2, Padding::valid)));
           Var ce = cross_entropy(dense(p, v[5], v[6]), labels);
           Var se = mean_squared_error(reshape(dense(p, v[3], v[4]), {n}), labels);
           Var reg = scale(add(add(sum_squares(v[1]), sum_squares(v[3])), sum_squares(v[5])), lambda);
           return add(add(ce, se), reg);
         };
         return std::make_pair(b, in);
       }},
  };
  return all;
}

}  // namespace

std::size_t gradient_family_count() { return families().size(); }

GradCase run_gradient_case(std::size_t family, std::uint64_t seed, double h) {
  if (family >= families().size()) throw ParameterError(fmt::format("no gradient family {}", family));
  Rng rng(mix_seed(seed, family));
  auto [build, inputs] = families()[family].make(rng);
  GradCase out;
  out.family = families()[family].name;
  for (const auto& t : inputs) out.parameters += t.size();
  out.max_rel_error = grad_check(build, inputs, h);
  return out;
}

std::vector<GradCase> gradient_suite(std::size_t count, std::uint64_t seed, double h) {
  std::vector<GradCase> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(run_gradient_case(i % families().size(), mix_seed(seed, i), h));
  }
  return out;
}

}  // namespace m2cnn
