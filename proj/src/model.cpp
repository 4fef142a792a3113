#include "m2cnn/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "m2cnn/error.hpp"
#include "m2cnn/rng.hpp"

namespace m2cnn {

std::string_view route_name(Route route) {
  switch (route) {
    case Route::small: return "small";
    case Route::medium: return "medium";
    case Route::large: return "large";
  }
  return "?";
}

Route parse_route(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "small") return Route::small;
  if (lower == "medium") return Route::medium;
  if (lower == "large") return Route::large;
  throw ParameterError(fmt::format("unknown route '{}' (expected small, medium or large)", text));
}

int route_depth(Route route) { return static_cast<int>(route); }

ArchConfig ArchConfig::desk() { return ArchConfig{}; }

ArchConfig ArchConfig::full() {
  ArchConfig cfg;
  cfg.n1 = 10;
  cfg.n2 = 20;
  cfg.n3 = 10;
  cfg.n4 = 5;
  cfg.stem_channels = 64;
  cfg.block_a_channels = 320;
  cfg.block_b_channels = 1088;
  cfg.medium_min = 350;
  cfg.large_min = 700;
  return cfg;
}

void to_json(nlohmann::json& j, const ArchConfig& c) {
  j = nlohmann::json{{"n1", c.n1},
                     {"n2", c.n2},
                     {"n3", c.n3},
                     {"n4", c.n4},
                     {"stem_channels", c.stem_channels},
                     {"block_a_channels", c.block_a_channels},
                     {"block_b_channels", c.block_b_channels},
                     {"medium_min", c.medium_min},
                     {"large_min", c.large_min},
                     {"num_classes", c.num_classes},
                     {"residual_scale", c.residual_scale}};
}

void from_json(const nlohmann::json& j, ArchConfig& c) {
  static const std::set<std::string> known{"n1",         "n2",        "n3",          "n4",
                                           "stem_channels", "block_a_channels", "block_b_channels",
                                           "medium_min", "large_min", "num_classes", "residual_scale"};
  if (!j.is_object()) throw ConfigurationError("architecture must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigurationError(fmt::format("unknown architecture key '{}'", key));
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n1", c.n1);
  get("n2", c.n2);
  get("n3", c.n3);
  get("n4", c.n4);
  get("stem_channels", c.stem_channels);
  get("block_a_channels", c.block_a_channels);
  get("block_b_channels", c.block_b_channels);
  get("medium_min", c.medium_min);
  get("large_min", c.large_min);
  get("num_classes", c.num_classes);
  get("residual_scale", c.residual_scale);
}

std::size_t reduction_output_size(std::size_t s) {
  if (s < 3) throw DimensionError(fmt::format("reduction cell needs a spatial extent of at least 3, got {}", s));
  return (s - 3) / 2 + 1;
}

std::vector<std::size_t> reduction_chain(std::size_t before_switch, Route route) {
  std::vector<std::size_t> chain{before_switch};
  for (int i = 0; i < route_depth(route); ++i) chain.push_back(reduction_output_size(chain.back()));
  return chain;
}

namespace {

struct Block {
  std::string name;
  LayerKind kind;
  std::size_t cin;
  std::size_t cout;
  std::size_t stride;
  Padding padding;
};

std::vector<Block> blocks_for(const ArchConfig& cfg, Route route) {
  std::vector<Block> b;
  const std::size_t s = cfg.stem_channels, a = cfg.block_a_channels, w = cfg.block_b_channels;
  b.push_back({"stem.conv1", LayerKind::stem, 3, s, 2, Padding::valid});
  b.push_back({"stem.conv2", LayerKind::stem, s, s, 2, Padding::valid});
  b.push_back({"stem.conv3", LayerKind::stem, s, a, 2, Padding::valid});
  for (int i = 0; i < cfg.n1; ++i) b.push_back({fmt::format("normal_a.{}", i), LayerKind::normal, a, a, 1, Padding::same});
  b.push_back({"reduction_a", LayerKind::reduction, a, w, 2, Padding::valid});
  for (int i = 0; i < cfg.n2; ++i) b.push_back({fmt::format("normal_b.{}", i), LayerKind::normal, w, w, 1, Padding::same});
  if (route_depth(route) >= 1) {
    b.push_back({"medial.reduction_b", LayerKind::reduction, w, w, 2, Padding::valid});
    for (int i = 0; i < cfg.n3; ++i)
      b.push_back({fmt::format("medial.normal_c.{}", i), LayerKind::normal, w, w, 1, Padding::same});
  }
  if (route_depth(route) >= 2) {
    b.push_back({"large.reduction_b", LayerKind::reduction, w, w, 2, Padding::valid});
    for (int i = 0; i < cfg.n4; ++i)
      b.push_back({fmt::format("large.normal_c.{}", i), LayerKind::normal, w, w, 1, Padding::same});
  }
  return b;
}

std::size_t last_normal_b(const std::vector<Block>& blocks) {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].name.starts_with("normal_b.")) idx = i;
  return idx;
}

constexpr std::size_t kKernel = 3;

}  // namespace

void ArchConfig::validate() const {
  if (n1 < 1 || n2 < 1 || n3 < 1 || n4 < 1) {
    throw ConfigurationError(fmt::format("cell counts must be >= 1, got n1={} n2={} n3={} n4={}", n1, n2, n3, n4));
  }
  if (stem_channels < 1 || block_a_channels < 1 || block_b_channels < 1) {
    throw ConfigurationError("channel widths must be >= 1");
  }
  if (num_classes < 2) throw ConfigurationError(fmt::format("num_classes must be >= 2, got {}", num_classes));
  if (!(medium_min > 0 && medium_min < large_min)) {
    throw ConfigurationError(
        fmt::format("route thresholds must satisfy 0 < medium_min < large_min, got ({}, {})", medium_min, large_min));
  }
  if (!std::isfinite(residual_scale)) throw ConfigurationError("residual_scale must be finite");
  // The threshold of each deeper route must be able to traverse that route.
  try {
    shape_plan(*this, medium_min, medium_min, Route::medium);
    shape_plan(*this, large_min, large_min, Route::large);
  } catch (const DimensionError& e) {
    throw ConfigurationError(fmt::format("route thresholds too small for the architecture: {}", e.what()));
  }
}

ShapePlan shape_plan(const ArchConfig& cfg, std::size_t h, std::size_t w, Route route) {
  ShapePlan plan;
  plan.route = route;
  const auto blocks = blocks_for(cfg, route);
  const std::size_t switch_idx = last_normal_b(blocks);
  std::size_t ch = h, cw = w;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Block& b = blocks[i];
    try {
      const auto g = kernels::conv_geometry(ch, cw, kKernel, kKernel, b.stride, b.padding);
      const std::uint64_t per_conv = static_cast<std::uint64_t>(g.out_h) * g.out_w * kKernel * kKernel * b.cin * b.cout;
      plan.macs += b.kind == LayerKind::normal ? 2 * per_conv : per_conv;
      ch = g.out_h;
      cw = g.out_w;
    } catch (const DimensionError&) {
      throw DimensionError(fmt::format("layer {} underflows: input {}x{} is smaller than its 3x3 kernel "
                                       "(network input {}x{}, route {})",
                                       b.name, ch, cw, h, w, route_name(route)));
    }
    plan.layers.push_back({b.name, b.kind, ch, cw, b.cout});
    if (i == switch_idx) plan.before_switch = std::min(ch, cw);
  }
  plan.at_pool = std::min(ch, cw);
  const std::size_t width = cfg.block_b_channels;
  plan.layers.push_back({"avgpool", LayerKind::pool, 1, 1, width});
  plan.layers.push_back({"head.score", LayerKind::head, 1, 1, 1});
  plan.layers.push_back({"head.class", LayerKind::head, 1, 1, cfg.num_classes});
  plan.macs += static_cast<std::uint64_t>(width) * (1 + cfg.num_classes);
  return plan;
}

std::size_t stem_minimum(const ArchConfig& cfg) {
  for (std::size_t s = 1;; ++s) {
    try {
      shape_plan(cfg, s, s, Route::small);
      return s;
    } catch (const DimensionError&) {
    }
  }
}

Route select_route(std::size_t h, std::size_t w, const ArchConfig& cfg) {
  const std::size_t m = std::min(h, w);
  const std::size_t minimum = stem_minimum(cfg);
  if (m < minimum) {
    throw DimensionError(fmt::format("input {}x{} is below the stem minimum of {}x{}", h, w, minimum, minimum));
  }
  if (m < cfg.medium_min) return Route::small;
  if (m < cfg.large_min) return Route::medium;
  return Route::large;
}

ShapePlan shape_plan(const ArchConfig& cfg, std::size_t h, std::size_t w) {
  return shape_plan(cfg, h, w, select_route(h, w, cfg));
}

std::string_view group_name(ParamGroup group) { return group == ParamGroup::pretrained ? "pretrained" : "fresh"; }

ParamGroup parse_group(std::string_view text) {
  if (text == "pretrained") return ParamGroup::pretrained;
  if (text == "fresh") return ParamGroup::fresh;
  throw FormatError(fmt::format("unknown parameter group '{}'", text));
}

void ParamStore::add(std::string name, Tensor tensor, ParamGroup group) {
  if (index_.contains(name)) throw ConfigurationError(fmt::format("duplicate parameter name '{}'", name));
  index_.emplace(name, entries_.size());
  tensor.set_requires_grad(true);
  entries_.push_back({std::move(name), std::move(tensor), group});
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const ParamEntry& ParamStore::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigurationError(fmt::format("missing parameter '{}'", name));
  return entries_[it->second];
}

ParamEntry& ParamStore::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigurationError(fmt::format("missing parameter '{}'", name));
  return entries_[it->second];
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

std::size_t ParamStore::count(ParamGroup group) const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [group](const ParamEntry& e) { return e.group == group; }));
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.name != y.name || x.group != y.group || !(x.tensor == y.tensor)) return false;
  }
  return true;
}

bool is_decayed(std::string_view name) { return name.ends_with(".kernel") || name.ends_with(".weight"); }

std::vector<ParamSpec> param_specs(const ArchConfig& cfg, Route route) {
  std::vector<ParamSpec> specs;
  auto conv = [&](const std::string& prefix, std::size_t cin, std::size_t cout) {
    specs.push_back({prefix + ".kernel", {kKernel, kKernel, cin, cout}, kKernel * kKernel * cin});
    specs.push_back({prefix + ".bias", {cout}, kKernel * kKernel * cin});
  };
  for (const auto& b : blocks_for(cfg, route)) {
    if (b.kind == LayerKind::normal) {
      conv(b.name + ".conv1", b.cin, b.cout);
      conv(b.name + ".conv2", b.cout, b.cout);
    } else {
      conv(b.name, b.cin, b.cout);
    }
  }
  const std::size_t w = cfg.block_b_channels;
  specs.push_back({"head.score.weight", {w, 1}, w});
  specs.push_back({"head.score.bias", {1}, w});
  specs.push_back({"head.class.weight", {w, cfg.num_classes}, w});
  specs.push_back({"head.class.bias", {cfg.num_classes}, w});
  return specs;
}

Tensor he_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(shape);
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

namespace {

std::uint64_t name_hash(std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor init_tensor(const ParamSpec& spec, std::uint64_t seed) {
  if (!is_decayed(spec.name)) return Tensor(spec.shape, 0.0);
  return he_uniform(spec.shape, spec.fan_in, mix_seed(seed, name_hash(spec.name)));
}

}  // namespace

ParamStore init_params(const ArchConfig& cfg, Route route, std::uint64_t seed) {
  cfg.validate();
  ParamStore store;
  for (const auto& spec : param_specs(cfg, route)) store.add(spec.name, init_tensor(spec, seed), ParamGroup::fresh);
  return store;
}

ParamStore transfer_params(const ParamStore& src, Route dst_route, const ArchConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto specs = param_specs(cfg, dst_route);
  std::map<std::string, const ParamSpec*, std::less<>> wanted;
  for (const auto& s : specs) wanted.emplace(s.name, &s);
  for (const auto& e : src.entries()) {
    auto it = wanted.find(e.name);
    if (it == wanted.end()) {
      throw ConfigurationError(
          fmt::format("cannot transfer '{}': route {} has no such parameter", e.name, route_name(dst_route)));
    }
    if (e.tensor.shape() != it->second->shape) {
      throw ConfigurationError(fmt::format("cannot transfer '{}': shape {} but route {} expects {}", e.name,
                                           shape_string(e.tensor.shape()), route_name(dst_route),
                                           shape_string(it->second->shape)));
    }
  }
  ParamStore dst;
  for (const auto& spec : specs) {
    if (src.contains(spec.name)) {
      dst.add(spec.name, src.at(spec.name).tensor, ParamGroup::pretrained);
    } else {
      dst.add(spec.name, init_tensor(spec, seed), ParamGroup::fresh);
    }
  }
  return dst;
}

Route infer_route(const ParamStore& params, const ArchConfig& cfg) {
  const auto names = params.names();
  const std::set<std::string> have(names.begin(), names.end());
  for (Route r : {Route::small, Route::medium, Route::large}) {
    std::set<std::string> want;
    for (const auto& s : param_specs(cfg, r)) want.insert(s.name);
    if (want == have) return r;
  }
  throw ConfigurationError("parameter names do not match any route of the architecture");
}

Network::Network(const ArchConfig& cfg, Route route, const ParamStore& params)
    : cfg_(cfg), route_(route), params_(&params) {
  cfg_.validate();
  for (const auto& spec : param_specs(cfg_, route_)) {
    if (!params.contains(spec.name)) {
      throw ConfigurationError(
          fmt::format("route {} needs parameter '{}' which the store lacks", route_name(route_), spec.name));
    }
    const auto& t = params.at(spec.name).tensor;
    if (t.shape() != spec.shape) {
      throw ConfigurationError(fmt::format("parameter '{}' has shape {}, expected {}", spec.name,
                                           shape_string(t.shape()), shape_string(spec.shape)));
    }
  }
}

Network build_network(const ArchConfig& cfg, Route route, const ParamStore& params) {
  return Network(cfg, route, params);
}

namespace {

using VarMap = std::map<std::string, Var, std::less<>>;

Var apply_block(const Block& b, Var in, const VarMap& vars, const ArchConfig& cfg) {
  auto conv = [&](Var x, const std::string& prefix, std::size_t stride, Padding pad) {
    return conv2d(x, vars.at(prefix + ".kernel"), vars.at(prefix + ".bias"), stride, pad);
  };
  if (b.kind == LayerKind::normal) {
    Var branch = conv(relu(conv(in, b.name + ".conv1", 1, Padding::same)), b.name + ".conv2", 1, Padding::same);
    Var x = relu(add(in, scale(branch, cfg.residual_scale)));
    if (x.shape() != in.shape()) {
      throw ContractError(fmt::format("normal cell {} changed shape {} -> {}", b.name, shape_string(in.shape()),
                                      shape_string(x.shape())));
    }
    return x;
  }
  Var x = relu(conv(in, b.name, b.stride, b.padding));
  if (b.kind == LayerKind::reduction && !(x.shape()[1] < in.shape()[1] && x.shape()[2] < in.shape()[2])) {
    throw ContractError(fmt::format("reduction cell {} did not reduce {} -> {}", b.name, shape_string(in.shape()),
                                    shape_string(x.shape())));
  }
  return x;
}

void check_input(const Tensor& batch) {
  if (batch.rank() != 4 || batch.dim(3) != 3) {
    throw DimensionError(fmt::format("network input must be [N,H,W,3], got {}", shape_string(batch.shape())));
  }
}

}  // namespace

ForwardResult Network::forward(Graph& graph, const Tensor& batch, bool trainable) const {
  check_input(batch);
  const Route r = select_route(batch.dim(1), batch.dim(2), cfg_);
  if (r != route_) {
    throw DimensionError(fmt::format("batch of {}x{} selects route {}, but this network was built for route {}",
                                     batch.dim(1), batch.dim(2), route_name(r), route_name(route_)));
  }

  ForwardResult result;
  VarMap vars;
  for (const auto& spec : param_specs(cfg_, route_)) {
    const Tensor& t = params_->at(spec.name).tensor;
    Var v = trainable ? graph.parameter(t) : graph.constant(t);
    vars.emplace(spec.name, v);
    result.params.emplace_back(spec.name, v);
  }

  Var x = graph.constant(batch);
  const auto blocks = blocks_for(cfg_, route_);
  const std::size_t switch_idx = last_normal_b(blocks);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    Var in = x;
    x = apply_block(blocks[i], in, vars, cfg_);
    result.cells.push_back({blocks[i].name, blocks[i].kind, in, x});
    if (i == switch_idx) result.switch_activation = x;
  }

  result.pooled = avgpool_global(x);
  const std::size_t n = batch.dim(0);
  result.scores = reshape(dense(result.pooled, vars.at("head.score.weight"), vars.at("head.score.bias")), {n});
  result.logits = dense(result.pooled, vars.at("head.class.weight"), vars.at("head.class.bias"));
  return result;
}

Tensor Network::switch_activation(const Tensor& batch) const {
  check_input(batch);
  if (batch.dim(1) < stem_minimum(cfg_) || batch.dim(2) < stem_minimum(cfg_)) {
    throw DimensionError(fmt::format("input {}x{} is below the stem minimum {}", batch.dim(1), batch.dim(2),
                                     stem_minimum(cfg_)));
  }
  Graph graph;
  VarMap vars;
  for (const auto& spec : param_specs(cfg_, route_)) vars.emplace(spec.name, graph.constant(params_->at(spec.name).tensor));
  const auto blocks = blocks_for(cfg_, route_);
  const std::size_t switch_idx = last_normal_b(blocks);
  Var x = graph.constant(batch);
  for (std::size_t i = 0; i <= switch_idx; ++i) x = apply_block(blocks[i], x, vars, cfg_);
  return x.value();
}

}  // namespace m2cnn
