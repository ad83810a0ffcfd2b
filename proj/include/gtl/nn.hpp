#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gtl/errors.hpp"
#include "gtl/rng.hpp"

namespace gtl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

enum class Activation { relu, tanh };
enum class Head { softmax_ce, sigmoid_bce };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
inline std::string_view to_string(Head h) { return h == Head::softmax_ce ? "softmax_ce" : "sigmoid_bce"; }

inline std::optional<Activation> parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  return std::nullopt;
}

inline std::optional<Head> parse_head(std::string_view s) {
  if (s == "softmax_ce") return Head::softmax_ce;
  if (s == "sigmoid_bce") return Head::sigmoid_bce;
  return std::nullopt;
}

struct NetworkSpec {
  std::vector<std::size_t> layer_sizes;
  Activation hidden_activation = Activation::tanh;
  Head output_head = Head::softmax_ce;
  std::uint64_t init_seed = 0;

  std::size_t layer_count() const { return layer_sizes.empty() ? 0 : layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }

  void validate() const {
    if (layer_sizes.size() < 2)
      throw config_error("network.layer_sizes", "needs at least an input and an output size");
    for (std::size_t i = 0; i < layer_sizes.size(); ++i)
      if (layer_sizes[i] == 0)
        throw config_error("network.layer_sizes[" + std::to_string(i) + "]", "must be >= 1");
  }

  NetworkSpec with_output_dim(std::size_t n) const {
    NetworkSpec s = *this;
    s.layer_sizes.back() = n;
    return s;
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// One dense layer: weights are fan_in x fan_out, biases have fan_out entries.
// The tag separates parameters, gradients and guidance values at the type
// level while sharing one layout.
template <class Tag>
struct Layer {
  Matrix weights;
  RowVector biases;

  std::size_t fan_in() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t fan_out() const { return static_cast<std::size_t>(weights.cols()); }

  friend bool operator==(const Layer& a, const Layer& b) {
    return a.weights.rows() == b.weights.rows() && a.weights.cols() == b.weights.cols() &&
           a.biases.size() == b.biases.size() && a.weights == b.weights && a.biases == b.biases;
  }
};

template <class Tag>
struct LayerStack {
  std::vector<Layer<Tag>> layers;

  std::size_t size() const { return layers.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.biases.size());
    return n;
  }

  template <class Other>
  bool congruent(const LayerStack<Other>& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weights.rows() != o.layers[i].weights.rows() ||
          layers[i].weights.cols() != o.layers[i].weights.cols() ||
          layers[i].biases.size() != o.layers[i].biases.size())
        return false;
    }
    return true;
  }

  // First n layers.
  LayerStack prefix(std::size_t n) const {
    LayerStack out;
    out.layers.assign(layers.begin(), layers.begin() + static_cast<std::ptrdiff_t>(std::min(n, layers.size())));
    return out;
  }

  friend bool operator==(const LayerStack&, const LayerStack&) = default;
};

struct param_tag {};
struct grad_tag {};

using ParamSet = LayerStack<param_tag>;
using GradSet = LayerStack<grad_tag>;

template <class To, class From>
LayerStack<To> filled_like(const LayerStack<From>& src, double value) {
  LayerStack<To> out;
  out.layers.reserve(src.layers.size());
  for (const auto& l : src.layers)
    out.layers.push_back({Matrix::Constant(l.weights.rows(), l.weights.cols(), value),
                          RowVector::Constant(l.biases.size(), value)});
  return out;
}

template <class A, class B>
void require_congruent(const LayerStack<A>& a, const LayerStack<B>& b, std::string_view what) {
  if (!a.congruent(b)) throw shape_error(std::string(what) + ": layer shapes are not congruent");
}

// Visits every value in layer order, weights (row-major) before biases.
template <class Tag, class F>
void for_each_value(const LayerStack<Tag>& s, F&& f) {
  for (const auto& l : s.layers) {
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) f(l.weights.data()[i]);
    for (Eigen::Index i = 0; i < l.biases.size(); ++i) f(l.biases[i]);
  }
}

template <class Tag>
std::vector<double> flatten(const LayerStack<Tag>& s) {
  std::vector<double> out;
  out.reserve(s.parameter_count());
  for_each_value(s, [&](double v) { out.push_back(v); });
  return out;
}

// Batch of examples. Targets are one-hot rows for softmax_ce and bit rows for
// sigmoid_bce.
struct Batch {
  Matrix inputs;
  Matrix targets;

  std::size_t rows() const { return static_cast<std::size_t>(inputs.rows()); }
};

namespace detail {

inline Layer<param_tag> glorot_layer(std::size_t fan_in, std::size_t fan_out, rng& gen) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Layer<param_tag> l{Matrix(fan_in, fan_out), RowVector::Zero(static_cast<Eigen::Index>(fan_out))};
  for (Eigen::Index i = 0; i < l.weights.size(); ++i) l.weights.data()[i] = gen.uniform(-s, s);
  return l;
}

inline void check_inputs(const NetworkSpec& spec, const Matrix& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != spec.input_dim())
    throw shape_error("input has " + std::to_string(inputs.cols()) + " columns, network expects " +
                      std::to_string(spec.input_dim()));
}

inline void check_params(const NetworkSpec& spec, const ParamSet& p) {
  if (p.size() != spec.layer_count()) throw shape_error("parameter set has wrong number of layers");
  for (std::size_t k = 0; k < p.size(); ++k) {
    const auto& l = p.layers[k];
    if (l.fan_in() != spec.layer_sizes[k] || l.fan_out() != spec.layer_sizes[k + 1] ||
        static_cast<std::size_t>(l.biases.size()) != spec.layer_sizes[k + 1])
      throw shape_error("layer " + std::to_string(k) + " does not match the network spec");
  }
}

inline void activate(Activation a, Matrix& z) {
  if (a == Activation::relu)
    z = z.cwiseMax(0.0);
  else
    z = z.unaryExpr([](double v) { return std::tanh(v); });
}

inline void softmax_rows(Matrix& z) {
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    const double m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
  }
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Pre-activations per layer plus the activations feeding each layer.
struct trace {
  std::vector<Matrix> inputs;  // inputs[k] feeds layer k
  std::vector<Matrix> pre;     // pre[k] = inputs[k] * W_k + b_k
};

inline trace forward_trace(const ParamSet& params, const NetworkSpec& spec, const Matrix& x) {
  trace t;
  t.inputs.reserve(params.size());
  t.pre.reserve(params.size());
  t.inputs.push_back(x);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& l = params.layers[k];
    Matrix z = t.inputs[k] * l.weights;
    z.rowwise() += l.biases;
    if (!z.allFinite()) throw numeric_error("non-finite pre-activation in layer " + std::to_string(k));
    t.pre.push_back(std::move(z));
    if (k + 1 < params.size()) {
      Matrix a = t.pre.back();
      activate(spec.hidden_activation, a);
      t.inputs.push_back(std::move(a));
    }
  }
  return t;
}

}  // namespace detail

// Glorot-uniform weights, zero biases, fully determined by spec.init_seed.
inline ParamSet init_params(const NetworkSpec& spec) {
  spec.validate();
  rng gen(spec.init_seed);
  ParamSet p;
  for (std::size_t k = 0; k + 1 < spec.layer_sizes.size(); ++k)
    p.layers.push_back(detail::glorot_layer(spec.layer_sizes[k], spec.layer_sizes[k + 1], gen));
  return p;
}

// Replaces the output layer with a freshly initialized one of width n_out.
inline ParamSet replace_head(ParamSet params, std::size_t n_out, std::uint64_t seed) {
  if (params.layers.empty()) throw argument_error("replace_head: empty parameter set");
  if (n_out == 0) throw argument_error("replace_head: output width must be >= 1");
  rng gen(seed);
  auto& head = params.layers.back();
  head = detail::glorot_layer(head.fan_in(), n_out, gen);
  return params;
}

inline void validate_batch(const NetworkSpec& spec, const Batch& b) {
  if (b.inputs.rows() == 0) throw argument_error("batch is empty");
  detail::check_inputs(spec, b.inputs);
  if (b.targets.rows() != b.inputs.rows() || static_cast<std::size_t>(b.targets.cols()) != spec.output_dim())
    throw shape_error("targets do not match inputs / output width");
}

namespace detail {

// Mean head loss computed from logits; writes dLoss/dlogits when delta is set.
inline double head_loss(Head head, const Matrix& z, const Matrix& y, Matrix* delta) {
  const auto rows = static_cast<double>(z.rows());
  double loss = 0.0;
  if (delta) delta->resize(z.rows(), z.cols());
  if (head == Head::softmax_ce) {
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const double m = z.row(r).maxCoeff();
      const double lse = m + std::log((z.row(r).array() - m).exp().sum());
      for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const double logp = z(r, c) - lse;
        loss -= y(r, c) * logp;
        if (delta) (*delta)(r, c) = (std::exp(logp) - y(r, c)) / rows;
      }
    }
    return loss / rows;
  }
  const double n = rows * static_cast<double>(z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      const double v = z(r, c);
      loss += std::max(v, 0.0) - v * y(r, c) + std::log1p(std::exp(-std::abs(v)));
      if (delta) (*delta)(r, c) = (sigmoid(v) - y(r, c)) / n;
    }
  return loss / n;
}

inline Matrix head_output(Head head, Matrix z) {
  if (head == Head::softmax_ce)
    softmax_rows(z);
  else
    z = z.unaryExpr([](double v) { return sigmoid(v); });
  return z;
}

}  // namespace detail

inline Matrix forward(const ParamSet& params, const NetworkSpec& spec, const Matrix& inputs) {
  detail::check_params(spec, params);
  detail::check_inputs(spec, inputs);
  auto t = detail::forward_trace(params, spec, inputs);
  return detail::head_output(spec.output_head, std::move(t.pre.back()));
}

struct LossAndGrad {
  double loss = 0.0;
  GradSet grads;
};

// Mean loss over the batch and its exact gradient by a reverse-mode sweep.
inline LossAndGrad loss_and_grad(const ParamSet& params, const NetworkSpec& spec, const Batch& batch) {
  detail::check_params(spec, params);
  validate_batch(spec, batch);
  auto t = detail::forward_trace(params, spec, batch.inputs);
  Matrix delta;
  const double loss = detail::head_loss(spec.output_head, t.pre.back(), batch.targets, &delta);
  if (!std::isfinite(loss))
    throw numeric_error("non-finite loss at output layer " + std::to_string(params.size() - 1));

  GradSet g;
  g.layers.resize(params.size());
  for (std::size_t k = params.size(); k-- > 0;) {
    g.layers[k].weights = t.inputs[k].transpose() * delta;
    g.layers[k].biases = delta.colwise().sum();
    if (k == 0) break;
    Matrix back = delta * params.layers[k].weights.transpose();
    if (spec.hidden_activation == Activation::relu)
      back = back.cwiseProduct(t.pre[k - 1].unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    else
      back = back.cwiseProduct(t.inputs[k].unaryExpr([](double a) { return 1.0 - a * a; }));
    if (!back.allFinite()) throw numeric_error("non-finite gradient in layer " + std::to_string(k - 1));
    delta = std::move(back);
  }
  return {loss, std::move(g)};
}

// Velocity buffer for momentum SGD; empty until the first step.
struct MomentumState {
  std::optional<GradSet> velocity;
};

// Plain SGD (momentum == 0) or heavy-ball momentum: v' = m*v + g, p' = p - lr*v'.
// Any guidance mask must already be folded into grads.
inline ParamSet sgd_step(ParamSet params, const GradSet& grads, double lr, MomentumState* state = nullptr,
                         double momentum = 0.0) {
  if (!(lr >= 0.0)) throw argument_error("sgd_step: learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw argument_error("sgd_step: momentum must be in [0, 1)");
  require_congruent(params, grads, "sgd_step");
  if (momentum == 0.0 || state == nullptr) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      params.layers[k].weights -= lr * grads.layers[k].weights;
      params.layers[k].biases -= lr * grads.layers[k].biases;
    }
    return params;
  }
  if (!state->velocity) state->velocity = filled_like<grad_tag>(grads, 0.0);
  auto& v = *state->velocity;
  require_congruent(v, grads, "sgd_step velocity");
  for (std::size_t k = 0; k < params.size(); ++k) {
    v.layers[k].weights = momentum * v.layers[k].weights + grads.layers[k].weights;
    v.layers[k].biases = momentum * v.layers[k].biases + grads.layers[k].biases;
    params.layers[k].weights -= lr * v.layers[k].weights;
    params.layers[k].biases -= lr * v.layers[k].biases;
  }
  return params;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Row accuracy: argmax match (ties -> lowest index) for softmax_ce, all bits
// strictly above 0.5 matching the target bits for sigmoid_bce.
inline double accuracy_of(Head head, const Matrix& outputs, const Matrix& targets) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols())
    throw shape_error("accuracy: outputs and targets differ in shape");
  if (outputs.rows() == 0) throw argument_error("accuracy: no rows");
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < outputs.rows(); ++r) {
    if (head == Head::softmax_ce) {
      Eigen::Index po = 0, pt = 0;
      for (Eigen::Index c = 1; c < outputs.cols(); ++c) {
        if (outputs(r, c) > outputs(r, po)) po = c;
        if (targets(r, c) > targets(r, pt)) pt = c;
      }
      hits += (po == pt);
    } else {
      bool all = true;
      for (Eigen::Index c = 0; c < outputs.cols() && all; ++c)
        all = (outputs(r, c) > 0.5) == (targets(r, c) > 0.5);
      hits += all;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(outputs.rows());
}

inline Evaluation evaluate(const ParamSet& params, const NetworkSpec& spec, const Batch& data) {
  if (data.inputs.rows() == 0) throw argument_error("evaluate: empty data");
  detail::check_params(spec, params);
  validate_batch(spec, data);
  auto t = detail::forward_trace(params, spec, data.inputs);
  const double loss = detail::head_loss(spec.output_head, t.pre.back(), data.targets, nullptr);
  const Matrix out = detail::head_output(spec.output_head, std::move(t.pre.back()));
  return {loss, accuracy_of(spec.output_head, out, data.targets)};
}

// Fraction of parameters whose absolute change exceeds tol.
inline double changed_fraction(const ParamSet& before, const ParamSet& after, double tol = 1e-8) {
  require_congruent(before, after, "changed_fraction");
  std::size_t changed = 0, total = 0;
  for (std::size_t k = 0; k < before.size(); ++k) {
    changed += static_cast<std::size_t>(
        ((before.layers[k].weights - after.layers[k].weights).array().abs() > tol).count());
    changed += static_cast<std::size_t>(
        ((before.layers[k].biases - after.layers[k].biases).array().abs() > tol).count());
    total += static_cast<std::size_t>(before.layers[k].weights.size() + before.layers[k].biases.size());
  }
  return total == 0 ? 0.0 : static_cast<double>(changed) / static_cast<double>(total);
}

}  // namespace gtl
