#include "m2cnn/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "m2cnn/error.hpp"

namespace m2cnn {

const Tensor& Var::value() const { return graph_->value(id_); }

std::span<const double> Var::grad() const { return graph_->grad_of(id_); }

Var Graph::constant(Tensor value) {
  value.set_requires_grad(false);
  value.clear_grad();
  nodes_.push_back({"constant", {}, std::move(value), nullptr});
  return {this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor value) {
  value.set_requires_grad(true);
  value.clear_grad();
  nodes_.push_back({"parameter", {}, std::move(value), nullptr});
  return {this, nodes_.size() - 1};
}

Var Graph::record(std::string_view op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  bool needs_grad = false;
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ContractError(fmt::format("{}: input id {} not yet recorded", op, id));
    needs_grad = needs_grad || nodes_[id].value.requires_grad();
  }
  value.set_requires_grad(needs_grad);
  value.clear_grad();
  nodes_.push_back({std::string(op), std::move(inputs), std::move(value), needs_grad ? std::move(backward) : nullptr});
  return {this, nodes_.size() - 1};
}

std::span<const double> Graph::grad_of(std::size_t id) const {
  const Tensor& t = nodes_.at(id).value;
  if (!t.has_grad()) throw ContractError(fmt::format("node {} ({}) has no gradient", id, nodes_[id].op));
  return t.grad();
}

std::span<double> Graph::input_grad(std::size_t id) {
  Tensor& t = nodes_.at(id).value;
  if (!t.requires_grad()) return {};
  return t.grad();
}

void Graph::backward(Var output) {
  if (output.id() >= nodes_.size() || &output.graph() != this) throw ContractError("backward: foreign variable");
  if (nodes_[output.id()].value.size() != 1) {
    throw ContractError(fmt::format("backward needs a scalar output, got shape {}",
                                    shape_string(nodes_[output.id()].value.shape())));
  }
  for (auto& node : nodes_) {
    if (node.value.requires_grad()) {
      auto g = node.value.ensure_grad();
      std::fill(g.begin(), g.end(), 0.0);
    } else {
      node.value.clear_grad();
    }
  }
  if (!nodes_[output.id()].value.requires_grad()) return;
  nodes_[output.id()].value.grad()[0] = 1.0;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

namespace {

void require_same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) throw ContractError(fmt::format("{}: operands belong to different graphs", op));
}

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var conv2d(Var input, Var kernel, Var bias, std::size_t stride, Padding padding) {
  require_same_graph(input, kernel, "conv2d");
  require_same_graph(input, bias, "conv2d");
  Graph& g = input.graph();
  Tensor out = kernels::conv2d(input.value(), kernel.value(), bias.value(), stride, padding);
  return g.record("conv2d", {input.id(), kernel.id(), bias.id()}, std::move(out),
                  [stride, padding](Graph& g, std::size_t self) {
                    const auto in = g.inputs(self);
                    kernels::conv2d_backward(g.value(in[0]), g.value(in[1]), g.grad_of(self), stride, padding,
                                             g.input_grad(in[0]), g.input_grad(in[1]), g.input_grad(in[2]));
                  });
}

Var maxpool2d(Var input, std::size_t window, std::size_t stride) {
  Graph& g = input.graph();
  std::vector<std::size_t> argmax;
  Tensor out = kernels::maxpool2d(input.value(), window, stride, &argmax);
  return g.record("maxpool2d", {input.id()}, std::move(out),
                  [argmax = std::move(argmax)](Graph& g, std::size_t self) {
                    auto gi = g.input_grad(g.inputs(self)[0]);
                    const auto go = g.grad_of(self);
                    for (std::size_t o = 0; o < go.size(); ++o) gi[argmax[o]] += go[o];
                  });
}

Var avgpool_global(Var input) {
  Graph& g = input.graph();
  Tensor out = kernels::avgpool_global(input.value());
  return g.record("avgpool_global", {input.id()}, std::move(out), [](Graph& g, std::size_t self) {
    const std::size_t src = g.inputs(self)[0];
    const Shape& s = g.value(src).shape();
    const std::size_t area = s[1] * s[2], c = s[3];
    auto gi = g.input_grad(src);
    const auto go = g.grad_of(self);
    for (std::size_t b = 0; b < s[0]; ++b) {
      for (std::size_t p = 0; p < area; ++p) {
        for (std::size_t ch = 0; ch < c; ++ch) gi[(b * area + p) * c + ch] += go[b * c + ch] / static_cast<double>(area);
      }
    }
  });
}

Var dense(Var input, Var weight, Var bias) {
  require_same_graph(input, weight, "dense");
  require_same_graph(input, bias, "dense");
  Graph& g = input.graph();
  Tensor out = kernels::dense(input.value(), weight.value(), bias.value());
  return g.record("dense", {input.id(), weight.id(), bias.id()}, std::move(out), [](Graph& g, std::size_t self) {
    const auto ids = g.inputs(self);
    const Tensor& x = g.value(ids[0]);
    const Tensor& w = g.value(ids[1]);
    const std::size_t n = x.dim(0), f = x.dim(1), o = w.dim(1);
    const auto go = g.grad_of(self);
    if (auto gx = g.input_grad(ids[0]); !gx.empty()) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < f; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < o; ++j) s += go[r * o + j] * w[i * o + j];
          gx[r * f + i] += s;
        }
    }
    if (auto gw = g.input_grad(ids[1]); !gw.empty()) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < f; ++i)
          for (std::size_t j = 0; j < o; ++j) gw[i * o + j] += x[r * f + i] * go[r * o + j];
    }
    if (auto gb = g.input_grad(ids[2]); !gb.empty()) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < o; ++j) gb[j] += go[r * o + j];
    }
  });
}

Var relu(Var x) {
  Graph& g = x.graph();
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return g.record("relu", {x.id()}, std::move(out), [](Graph& g, std::size_t self) {
    auto gi = g.input_grad(g.inputs(self)[0]);
    const auto go = g.grad_of(self);
    const Tensor& y = g.value(self);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (y[i] > 0.0) gi[i] += go[i];
  });
}

Var softmax(Var logits) {
  Graph& g = logits.graph();
  Tensor out = kernels::softmax(logits.value());
  return g.record("softmax", {logits.id()}, std::move(out), [](Graph& g, std::size_t self) {
    auto gi = g.input_grad(g.inputs(self)[0]);
    const auto go = g.grad_of(self);
    const Tensor& p = g.value(self);
    const std::size_t k = p.shape().back();
    for (std::size_t r = 0; r < p.size() / k; ++r) {
      double dotp = 0.0;
      for (std::size_t j = 0; j < k; ++j) dotp += go[r * k + j] * p[r * k + j];
      for (std::size_t j = 0; j < k; ++j) gi[r * k + j] += p[r * k + j] * (go[r * k + j] - dotp);
    }
  });
}

Var add(Var a, Var b) {
  require_same_graph(a, b, "add");
  if (a.shape() != b.shape()) {
    throw DimensionError(
        fmt::format("add: shape {} vs {}", shape_string(a.shape()), shape_string(b.shape())));
  }
  Graph& g = a.graph();
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return g.record("add", {a.id(), b.id()}, std::move(out), [](Graph& g, std::size_t self) {
    const auto ids = g.inputs(self);
    const auto go = g.grad_of(self);
    if (auto ga = g.input_grad(ids[0]); !ga.empty()) add_into(ga, go);
    if (auto gb = g.input_grad(ids[1]); !gb.empty()) add_into(gb, go);
  });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b, "mul");
  if (a.shape() != b.shape()) {
    throw DimensionError(
        fmt::format("mul: shape {} vs {}", shape_string(a.shape()), shape_string(b.shape())));
  }
  Graph& g = a.graph();
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return g.record("mul", {a.id(), b.id()}, std::move(out), [](Graph& g, std::size_t self) {
    const auto ids = g.inputs(self);
    const auto go = g.grad_of(self);
    const Tensor& av = g.value(ids[0]);
    const Tensor& bv = g.value(ids[1]);
    if (auto ga = g.input_grad(ids[0]); !ga.empty())
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    if (auto gb = g.input_grad(ids[1]); !gb.empty())
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
  });
}

Var scale(Var x, double factor) {
  Graph& g = x.graph();
  Tensor out = x.value();
  for (auto& v : out.values()) v *= factor;
  return g.record("scale", {x.id()}, std::move(out), [factor](Graph& g, std::size_t self) {
    auto gi = g.input_grad(g.inputs(self)[0]);
    const auto go = g.grad_of(self);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * factor;
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = x.graph();
  Tensor out = x.value().reshaped(std::move(shape));
  return g.record("reshape", {x.id()}, std::move(out), [](Graph& g, std::size_t self) {
    add_into(g.input_grad(g.inputs(self)[0]), g.grad_of(self));
  });
}

Var sum(Var x) {
  Graph& g = x.graph();
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return g.record("sum", {x.id()}, Tensor::scalar(s), [](Graph& g, std::size_t self) {
    auto gi = g.input_grad(g.inputs(self)[0]);
    const double go = g.grad_of(self)[0];
    for (auto& v : gi) v += go;
  });
}

Var sum_squares(Var x) {
  Graph& g = x.graph();
  double s = 0.0;
  for (double v : x.value().data()) s += v * v;
  return g.record("sum_squares", {x.id()}, Tensor::scalar(s), [](Graph& g, std::size_t self) {
    const std::size_t src = g.inputs(self)[0];
    auto gi = g.input_grad(src);
    const double go = g.grad_of(self)[0];
    const Tensor& xv = g.value(src);
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += 2.0 * xv[i] * go;
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw DimensionError("cross_entropy expects logits of shape [N,K]");
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (labels.size() != n) {
    throw DimensionError(fmt::format("cross_entropy: {} rows but {} labels", n, labels.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw LabelError(fmt::format("label {} at row {} outside [0,{})", labels[i], i, k));
    }
  }
  Tensor logp = kernels::log_softmax(z);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += logp[i * k + static_cast<std::size_t>(labels[i])];
  std::vector<int> owned(labels.begin(), labels.end());
  Graph& g = logits.graph();
  return g.record("cross_entropy", {logits.id()}, Tensor::scalar(-s / static_cast<double>(n)),
                  [logp = std::move(logp), owned = std::move(owned), n, k](Graph& g, std::size_t self) {
                    auto gi = g.input_grad(g.inputs(self)[0]);
                    const double go = g.grad_of(self)[0] / static_cast<double>(n);
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < k; ++j) {
                        const double p = std::exp(logp[i * k + j]);
                        const double target = static_cast<std::size_t>(owned[i]) == j ? 1.0 : 0.0;
                        gi[i * k + j] += go * (p - target);
                      }
                    }
                  });
}

Var mean_squared_error(Var scores, std::span<const int> labels) {
  const Tensor& y = scores.value();
  if (y.size() != labels.size()) {
    throw DimensionError(fmt::format("mean_squared_error: {} scores but {} labels", y.size(), labels.size()));
  }
  const std::size_t n = y.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = y[i] - static_cast<double>(labels[i]);
    s += d * d;
  }
  std::vector<int> owned(labels.begin(), labels.end());
  Graph& g = scores.graph();
  return g.record("mean_squared_error", {scores.id()}, Tensor::scalar(s / static_cast<double>(n)),
                  [owned = std::move(owned), n](Graph& g, std::size_t self) {
                    const std::size_t src = g.inputs(self)[0];
                    auto gi = g.input_grad(src);
                    const Tensor& yv = g.value(src);
                    const double go = g.grad_of(self)[0] * 2.0 / static_cast<double>(n);
                    for (std::size_t i = 0; i < n; ++i) gi[i] += go * (yv[i] - static_cast<double>(owned[i]));
                  });
}

double max_relative_error(const GradientComparison& cmp) {
  double worst = 0.0;
  for (std::size_t t = 0; t < cmp.analytic.size(); ++t) {
    for (std::size_t i = 0; i < cmp.analytic[t].size(); ++i) {
      const double ga = cmp.analytic[t][i];
      const double gn = cmp.numeric[t][i];
      const double denom = std::max({std::abs(ga), std::abs(gn), 1e-8});
      worst = std::max(worst, std::abs(ga - gn) / denom);
    }
  }
  return worst;
}

namespace {

double evaluate_scalar(const GraphBuilder& build, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.parameter(t));
  Var out = build(g, vars);
  if (out.value().size() != 1) {
    throw ContractError(fmt::format("grad_check needs a scalar output, got shape {}", shape_string(out.shape())));
  }
  return out.value()[0];
}

}  // namespace

GradientComparison compare_gradients(const GraphBuilder& build, std::span<const Tensor> inputs, double h) {
  if (!(h > 0.0)) throw ParameterError("finite-difference step must be positive");
  GradientComparison cmp;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.parameter(t));
    Var out = build(g, vars);
    g.backward(out);
    for (auto v : vars) {
      Tensor grad(v.shape());
      std::copy(v.grad().begin(), v.grad().end(), grad.data().begin());
      cmp.analytic.push_back(std::move(grad));
    }
  }
  std::vector<Tensor> work(inputs.begin(), inputs.end());
  for (std::size_t t = 0; t < work.size(); ++t) {
    Tensor numeric(work[t].shape());
    for (std::size_t i = 0; i < work[t].size(); ++i) {
      const double orig = work[t][i];
      work[t][i] = orig + h;
      const double fp = evaluate_scalar(build, work);
      work[t][i] = orig - h;
      const double fm = evaluate_scalar(build, work);
      work[t][i] = orig;
      numeric[i] = (fp - fm) / (2.0 * h);
    }
    cmp.numeric.push_back(std::move(numeric));
  }
  return cmp;
}

double grad_check(const GraphBuilder& build, std::span<const Tensor> inputs, double h) {
  return max_relative_error(compare_gradients(build, inputs, h));
}

}  // namespace m2cnn
