#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "m2cnn/autodiff.hpp"
#include "m2cnn/tensor.hpp"

namespace m2cnn {

/// Network path selected by input resolution. Small stops after Normal-B,
/// Medium adds the medial image cells (Reduction-B + N3 Normal-C), Large adds
/// a second Reduction-B + N4 Normal-C on top of that.
enum class Route { small, medium, large };

std::string_view route_name(Route route);
/// Accepts "small", "medium", "large" (case-insensitive). Throws ParameterError.
Route parse_route(std::string_view text);
int route_depth(Route route);

/// Declarative description of the multi-cell network.
///
/// Cell internals are a desk-scale stand-in for Inception-ResNet-v2:
///  - stem: three 3x3 stride-2 valid convolutions (3 -> stem -> stem -> block_a)
///  - normal cell: relu(x + residual_scale * conv(relu(conv(x)))), 3x3 same
///  - Reduction-A: 3x3 stride-2 valid convolution, block_a -> block_b channels
///  - Reduction-B: 3x3 stride-2 valid convolution, block_b -> block_b channels
/// Every route therefore pools a block_b-wide feature vector, which lets the
/// dual head be shared by all routes.
struct ArchConfig {
  int n1 = 2;  // Normal-A cells
  int n2 = 2;  // Normal-B cells
  int n3 = 2;  // Normal-C cells in the medial image cells
  int n4 = 1;  // Normal-C cells after the second Reduction-B
  std::size_t stem_channels = 8;
  std::size_t block_a_channels = 16;
  std::size_t block_b_channels = 32;
  std::size_t medium_min = 64;   // min(h, w) at which the Medium route starts
  std::size_t large_min = 128;   // min(h, w) at which the Large route starts
  std::size_t num_classes = 5;
  double residual_scale = 0.2;

  /// Small enough to train on synthetic data in minutes.
  static ArchConfig desk();
  /// Full-size cell counts (10, 20, 10, 5) and switch thresholds (350, 700).
  static ArchConfig full();

  /// Throws ConfigurationError.
  void validate() const;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

void to_json(nlohmann::json& j, const ArchConfig& cfg);
/// Missing keys keep their desk defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ArchConfig& cfg);

/// floor((s - 3) / 2) + 1: one 3x3 stride-2 valid reduction. Throws
/// DimensionError for s < 3.
std::size_t reduction_output_size(std::size_t s);

/// Spatial size at average pooling given the size at the switch point:
/// zero, one or two reductions for Small, Medium, Large.
std::vector<std::size_t> reduction_chain(std::size_t before_switch, Route route);

/// Smallest square input the stem and the Small path accept.
std::size_t stem_minimum(const ArchConfig& cfg);

/// Small if min(h,w) < medium_min, Medium if below large_min, else Large.
/// Throws DimensionError below stem_minimum(cfg).
Route select_route(std::size_t h, std::size_t w, const ArchConfig& cfg);

enum class LayerKind { stem, normal, reduction, pool, head };

struct LayerShape {
  std::string name;
  LayerKind kind;
  std::size_t height;
  std::size_t width;
  std::size_t channels;
};

struct ShapePlan {
  Route route = Route::small;
  std::vector<LayerShape> layers;
  std::size_t before_switch = 0;  // spatial size after Normal-B
  std::size_t at_pool = 0;        // spatial size entering average pooling
  std::uint64_t macs = 0;         // multiply-accumulates per image, forward pass
};

/// Output extent of every layer. Throws DimensionError naming the first layer
/// that would drop below 1x1.
ShapePlan shape_plan(const ArchConfig& cfg, std::size_t h, std::size_t w);
ShapePlan shape_plan(const ArchConfig& cfg, std::size_t h, std::size_t w, Route route);

enum class ParamGroup { pretrained, fresh };
std::string_view group_name(ParamGroup group);
ParamGroup parse_group(std::string_view text);

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamGroup group = ParamGroup::fresh;
};

/// Named trainable tensors in insertion order. The order is the network's
/// construction order, which fixes checkpoint layout and update order.
class ParamStore {
 public:
  /// Throws ConfigurationError on a duplicate name.
  void add(std::string name, Tensor tensor, ParamGroup group);

  bool contains(std::string_view name) const;
  const ParamEntry& at(std::string_view name) const;
  ParamEntry& at(std::string_view name);

  std::span<const ParamEntry> entries() const { return entries_; }
  std::span<ParamEntry> entries() { return entries_; }
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;
  std::size_t count(ParamGroup group) const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Weight tensors take part in weight decay; biases do not.
bool is_decayed(std::string_view name);

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in;
};

/// Every trainable tensor the route needs, in construction order. Small's
/// list is a prefix-closed subset of Medium's, which is a subset of Large's.
std::vector<ParamSpec> param_specs(const ArchConfig& cfg, Route route);

/// He-uniform weights, zero biases, all tagged fresh. Each tensor is seeded
/// from (seed, name), so a tensor's initial value does not depend on route.
ParamStore init_params(const ArchConfig& cfg, Route route, std::uint64_t seed);
Tensor he_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed);

/// Copies every tensor of src bitwise (tagged pretrained) into a store laid out
/// for dst_route and initialises the remainder fresh. Throws
/// ConfigurationError if src holds a name or shape dst_route does not have.
ParamStore transfer_params(const ParamStore& src, Route dst_route, const ArchConfig& cfg, std::uint64_t seed);

/// Route whose parameter set is exactly the store's name set.
Route infer_route(const ParamStore& params, const ArchConfig& cfg);

struct CellOutput {
  std::string name;
  LayerKind kind;
  Var input;
  Var output;
};

struct ForwardResult {
  Var scores;             // [N]
  Var logits;             // [N, num_classes]
  Var switch_activation;  // output of the last Normal-B cell
  Var pooled;             // [N, block_b_channels]
  std::vector<CellOutput> cells;
  std::vector<std::pair<std::string, Var>> params;  // store order
};

/// A route-specific view of the network over a parameter store. The store is
/// referenced, not copied; it must outlive the network.
class Network {
 public:
  /// Throws ConfigurationError if any parameter is missing or misshapen.
  Network(const ArchConfig& cfg, Route route, const ParamStore& params);

  Route route() const { return route_; }
  const ArchConfig& config() const { return cfg_; }

  /// Records the forward pass for a [N,H,W,3] batch on the tape. Parameters
  /// become trainable leaves when trainable is true. Throws DimensionError if
  /// the batch resolution selects a different route.
  ForwardResult forward(Graph& graph, const Tensor& batch, bool trainable = true) const;

  /// Output of the last Normal-B cell. Every cell up to that point is shared
  /// by all routes, so any input the stem accepts is allowed, whatever route
  /// its size would select.
  Tensor switch_activation(const Tensor& batch) const;

 private:
  ArchConfig cfg_;
  Route route_;
  const ParamStore* params_;
};

Network build_network(const ArchConfig& cfg, Route route, const ParamStore& params);

}  // namespace m2cnn
