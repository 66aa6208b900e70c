/* Copyright 2026 The AOD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef AOD_GRAD_ENGINE_HPP_
#define AOD_GRAD_ENGINE_HPP_

// Dense kernel for the probe networks: 3-layer ReLU MLPs with a sigmoid
// head, exact manual backprop of mean BCE, gradient reversal, AdamW and a
// central-difference gradient check. Everything is templated on the scalar so
// training runs in float and verification re-runs the same code in double.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aod/error.hpp"
#include "aod/rng.hpp"

namespace aod {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr double kBceClamp = 1e-7;

template <typename T>
struct DenseLayer {
  Matrix<T> weights;  // out x in
  Vector<T> bias;     // out

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }

  template <typename U>
  DenseLayer<U> cast() const {
    return {weights.template cast<U>(), bias.template cast<U>()};
  }
};

// Three affine layers: in -> hidden -> hidden -> 1, ReLU between them and a
// sigmoid on the scalar output.
template <typename T>
struct ProbeMLP {
  DenseLayer<T> layer1;
  DenseLayer<T> layer2;
  DenseLayer<T> layer3;
  // Bumped by every optimizer step; activation caches remember it.
  std::uint64_t revision = 0;

  int input_width() const { return static_cast<int>(layer1.in_dim()); }
  int hidden_width() const { return static_cast<int>(layer1.out_dim()); }

  static ProbeMLP zeros(int in, int hidden) {
    require(in > 0 && hidden > 0, ErrorKind::kInvalidArgument, "probe widths must be positive");
    ProbeMLP net;
    net.layer1 = {Matrix<T>::Zero(hidden, in), Vector<T>::Zero(hidden)};
    net.layer2 = {Matrix<T>::Zero(hidden, hidden), Vector<T>::Zero(hidden)};
    net.layer3 = {Matrix<T>::Zero(1, hidden), Vector<T>::Zero(1)};
    return net;
  }

  // Fan-in scaled uniform weights in [-sqrt(1/in), sqrt(1/in)], zero biases.
  static ProbeMLP init(int in, int hidden, std::uint64_t seed) {
    ProbeMLP net = zeros(in, hidden);
    Rng rng(seed);
    for (DenseLayer<T>* layer : {&net.layer1, &net.layer2, &net.layer3}) {
      const double bound = std::sqrt(1.0 / static_cast<double>(layer->in_dim()));
      T* w = layer->weights.data();
      for (Eigen::Index i = 0; i < layer->weights.size(); ++i) {
        w[i] = static_cast<T>(rng.uniform(-bound, bound));
      }
    }
    return net;
  }

  template <typename U>
  ProbeMLP<U> cast() const {
    ProbeMLP<U> out;
    out.layer1 = layer1.template cast<U>();
    out.layer2 = layer2.template cast<U>();
    out.layer3 = layer3.template cast<U>();
    return out;
  }

  std::array<std::span<T>, 6> parameters() {
    return {as_span(layer1.weights), as_span(layer1.bias), as_span(layer2.weights),
            as_span(layer2.bias),    as_span(layer3.weights), as_span(layer3.bias)};
  }

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(layer1.weights.size() + layer1.bias.size() +
                                    layer2.weights.size() + layer2.bias.size() +
                                    layer3.weights.size() + layer3.bias.size());
  }

 private:
  template <typename M>
  static std::span<T> as_span(M& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
  }
};

template <typename T>
struct ParamGrads {
  DenseLayer<T> layer1;
  DenseLayer<T> layer2;
  DenseLayer<T> layer3;
  Matrix<T> input;  // batch x in, d(loss)/d(input row)

  std::array<std::span<const T>, 6> parameters() const {
    return {as_span(layer1.weights), as_span(layer1.bias), as_span(layer2.weights),
            as_span(layer2.bias),    as_span(layer3.weights), as_span(layer3.bias)};
  }

 private:
  template <typename M>
  static std::span<const T> as_span(const M& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
  }
};

template <typename T>
struct ProbeCache {
  const ProbeMLP<T>* owner = nullptr;
  std::uint64_t revision = 0;
  Matrix<T> input;
  Matrix<T> pre1, act1, pre2, act2;
  Vector<T> logits;
  Vector<T> probs;

  Eigen::Index batch() const { return input.rows(); }
};

template <typename T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

// Rows of x are samples.
template <typename T>
ProbeCache<T> probe_forward(const ProbeMLP<T>& net, const Matrix<T>& x) {
  if (x.cols() != net.input_width()) {
    fail(ErrorKind::kDimensionMismatch,
         "dimension mismatch: probe expects " + std::to_string(net.input_width()) +
             " inputs, got " + std::to_string(x.cols()));
  }
  if (!x.allFinite()) fail(ErrorKind::kNonFinite, "non-finite input");
  ProbeCache<T> c;
  c.owner = &net;
  c.revision = net.revision;
  c.input = x;
  c.pre1 = x * net.layer1.weights.transpose();
  c.pre1.rowwise() += net.layer1.bias.transpose();
  c.act1 = c.pre1.cwiseMax(T(0));
  c.pre2 = c.act1 * net.layer2.weights.transpose();
  c.pre2.rowwise() += net.layer2.bias.transpose();
  c.act2 = c.pre2.cwiseMax(T(0));
  c.logits = c.act2 * net.layer3.weights.row(0).transpose();
  c.logits.array() += net.layer3.bias(0);
  c.probs = c.logits.unaryExpr([](T z) { return sigmoid(z); });
  return c;
}

template <typename T>
ProbeCache<T> probe_forward(const ProbeMLP<T>& net, std::span<const T> x) {
  Matrix<T> row(1, static_cast<Eigen::Index>(x.size()));
  std::copy(x.begin(), x.end(), row.data());
  return probe_forward(net, row);
}

// -(y log p + (1-y) log(1-p)) with p clamped to [1e-7, 1-1e-7].
inline double bce_loss(double p, int y) {
  const double pc = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
  return y != 0 ? -std::log(pc) : -std::log(1.0 - pc);
}

template <typename T>
double mean_bce(const ProbeCache<T>& cache, std::span<const std::uint8_t> labels) {
  require(static_cast<Eigen::Index>(labels.size()) == cache.batch(), ErrorKind::kShapeMismatch,
          "label count does not match batch");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < cache.batch(); ++i) {
    sum += bce_loss(static_cast<double>(cache.probs(i)), labels[i]);
  }
  return sum / static_cast<double>(cache.batch());
}

// Gradients of mean BCE over the cached batch, multiplied by `scale`. The
// clamp is part of the loss, so saturated samples contribute zero.
template <typename T>
ParamGrads<T> probe_backward(const ProbeMLP<T>& net, const ProbeCache<T>& cache,
                             std::span<const std::uint8_t> labels, T scale = T(1)) {
  if (cache.owner != &net || cache.revision != net.revision ||
      cache.input.cols() != net.input_width() || cache.pre1.cols() != net.hidden_width()) {
    fail(ErrorKind::kStaleCache, "activation cache does not belong to this network state");
  }
  const Eigen::Index batch = cache.batch();
  require(static_cast<Eigen::Index>(labels.size()) == batch, ErrorKind::kShapeMismatch,
          "label count does not match batch");

  Vector<T> g_logit(batch);
  const T inv_batch = scale / static_cast<T>(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double p = static_cast<double>(cache.probs(i));
    const bool clamped = p < kBceClamp || p > 1.0 - kBceClamp;
    g_logit(i) = clamped ? T(0) : (cache.probs(i) - static_cast<T>(labels[i])) * inv_batch;
  }

  ParamGrads<T> g;
  g.layer3.weights = g_logit.transpose() * cache.act2;
  g.layer3.bias = Vector<T>::Constant(1, g_logit.sum());

  Matrix<T> d_pre2 = g_logit * net.layer3.weights.row(0);
  d_pre2.array() *= (cache.pre2.array() > T(0)).template cast<T>();
  g.layer2.weights = d_pre2.transpose() * cache.act1;
  g.layer2.bias = d_pre2.colwise().sum().transpose();

  Matrix<T> d_pre1 = d_pre2 * net.layer2.weights;
  d_pre1.array() *= (cache.pre1.array() > T(0)).template cast<T>();
  g.layer1.weights = d_pre1.transpose() * cache.input;
  g.layer1.bias = d_pre1.colwise().sum().transpose();

  g.input = d_pre1 * net.layer1.weights;
  return g;
}

// Backward half of a gradient reversal layer: -lambda * grad. The forward
// half is the identity, so callers pass activations through unchanged.
template <typename T>
std::vector<T> grl_transform(std::span<const T> grad, double lambda) {
  require(lambda >= 0.0, ErrorKind::kInvalidArgument, "GRL lambda must be non-negative");
  std::vector<T> out(grad.size());
  const T factor = static_cast<T>(-lambda);
  for (std::size_t i = 0; i < grad.size(); ++i) out[i] = factor * grad[i];
  return out;
}

template <typename Derived>
auto grl_transform(const Eigen::MatrixBase<Derived>& grad, double lambda) {
  using T = typename Derived::Scalar;
  require(lambda >= 0.0, ErrorKind::kInvalidArgument, "GRL lambda must be non-negative");
  return (grad * static_cast<T>(-lambda)).eval();
}

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct AdamWState {
  explicit AdamWState(AdamWHyper h = {}) : hyper(h) {}

  AdamWHyper hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first;
  std::vector<std::vector<T>> second;
};

// Decoupled weight decay AdamW with bias correction. Moments are created
// zero-filled on the first call and shape-checked on every later one.
template <typename T>
void adamw_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads,
                AdamWState<T>& state) {
  require(params.size() == grads.size(), ErrorKind::kShapeMismatch,
          "parameter and gradient group counts differ");
  if (state.first.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.first.emplace_back(p.size(), T(0));
      state.second.emplace_back(p.size(), T(0));
    }
  }
  require(state.first.size() == params.size(), ErrorKind::kShapeMismatch,
          "optimizer state was built for a different parameter set");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(params[k].size() == grads[k].size() && state.first[k].size() == params[k].size(),
            ErrorKind::kShapeMismatch, "parameter/gradient/moment shapes differ");
  }

  const auto& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(h.beta1, t);
  const double bias2_sqrt = std::sqrt(1.0 - std::pow(h.beta2, t));
  const T decay = static_cast<T>(1.0 - h.lr * h.weight_decay);
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T step_size = static_cast<T>(h.lr / bias1);
  const T eps = static_cast<T>(h.eps);
  const T inv_bias2_sqrt = static_cast<T>(1.0 / bias2_sqrt);

  for (std::size_t k = 0; k < params.size(); ++k) {
    T* p = params[k].data();
    const T* g = grads[k].data();
    T* m = state.first[k].data();
    T* v = state.second[k].data();
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      p[i] *= decay;
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_bias2_sqrt + eps);
    }
  }
}

template <typename T>
void adamw_step(ProbeMLP<T>& net, const ParamGrads<T>& grads, AdamWState<T>& state) {
  const auto p = net.parameters();
  const auto g = grads.parameters();
  adamw_step<T>(std::span<const std::span<T>>(p), std::span<const std::span<const T>>(g), state);
  ++net.revision;
}

template <typename T>
void adamw_step(Vector<T>& param, const Vector<T>& grad, AdamWState<T>& state) {
  const std::array<std::span<T>, 1> p{std::span<T>(param.data(), param.size())};
  const std::array<std::span<const T>, 1> g{std::span<const T>(grad.data(), grad.size())};
  adamw_step<T>(std::span<const std::span<T>>(p), std::span<const std::span<const T>>(g), state);
}

template <typename T>
std::vector<T> flatten_parameters(ProbeMLP<T>& net) {
  std::vector<T> out;
  out.reserve(net.parameter_count());
  for (auto s : net.parameters()) out.insert(out.end(), s.begin(), s.end());
  return out;
}

template <typename T>
void assign_parameters(ProbeMLP<T>& net, std::span<const T> flat) {
  require(flat.size() == net.parameter_count(), ErrorKind::kShapeMismatch,
          "flat parameter vector has the wrong length");
  std::size_t offset = 0;
  for (auto s : net.parameters()) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), s.size(), s.begin());
    offset += s.size();
  }
}

template <typename T>
std::vector<T> flatten_gradients(const ParamGrads<T>& grads) {
  std::vector<T> out;
  for (auto s : grads.parameters()) out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Worst relative error between `analytic` and central differences
// (f(x+eps) - f(x-eps)) / 2eps, with denominator max(|a|, |b|, 1e-8).
double finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                         std::span<const double> params, std::span<const double> analytic,
                         double eps = 1e-3);

}  // namespace aod

#endif  // AOD_GRAD_ENGINE_HPP_
