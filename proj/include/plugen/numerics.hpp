#pragma once

// Dense-network numerics: MLP forward/backward, Adam, central differences.
// Everything runs in double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "plugen/error.hpp"

namespace plugen {

using Vec = std::vector<double>;
using Rng = std::mt19937_64;

inline constexpr double kLeakySlope = 0.01;

/// splitmix64 finalizer, used to derive independent streams from one seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(mix_seed(seed, stream));
}

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Vec weights;  // row-major, out x in
  Vec bias;     // out

  DenseLayer() = default;
  DenseLayer(std::size_t in_size, std::size_t out_size)
      : in(in_size), out(out_size), weights(in_size * out_size, 0.0), bias(out_size, 0.0) {}

  double& w(std::size_t row, std::size_t col) { return weights[row * in + col]; }
  double w(std::size_t row, std::size_t col) const { return weights[row * in + col]; }

  bool consistent() const { return weights.size() == in * out && bias.size() == out; }
  std::size_t param_count() const { return weights.size() + bias.size(); }
};

/// Activation record of one forward pass: the input of every layer and every
/// pre-activation. pre.back() is the network output.
struct MlpCache {
  std::vector<Vec> inputs;
  std::vector<Vec> pre;
};

/// Stack of dense layers with leaky-rectifier activations between them and
/// none after the last.
struct Mlp {
  std::vector<DenseLayer> layers;

  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> ls) : layers(std::move(ls)) {
    require(chains(), "mlp: layer dimensions do not chain");
  }

  /// Dense layers of sizes sizes[0] -> sizes[1] -> ... -> sizes.back().
  static Mlp zeros(std::span<const std::size_t> sizes) {
    require(sizes.size() >= 2, "mlp: need at least input and output size");
    Mlp m;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) m.layers.emplace_back(sizes[i], sizes[i + 1]);
    return m;
  }

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero bias.
  static Mlp random(std::span<const std::size_t> sizes, Rng& rng) {
    Mlp m = zeros(sizes);
    for (auto& layer : m.layers) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& w : layer.weights) w = u(rng);
    }
    return m;
  }

  Mlp zeros_like() const {
    Mlp m;
    for (const auto& l : layers) m.layers.emplace_back(l.in, l.out);
    return m;
  }

  bool chains() const {
    if (layers.empty()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (!layers[i].consistent()) return false;
      if (i > 0 && layers[i - 1].out != layers[i].in) return false;
    }
    return true;
  }

  std::size_t input_size() const { return layers.front().in; }
  std::size_t output_size() const { return layers.back().out; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
  }

  /// Visits parameter tensors in storage order (per layer: weights, bias).
  template <class F>
  void for_each_tensor(F&& f) {
    for (auto& l : layers) {
      f(std::span<double>(l.weights));
      f(std::span<double>(l.bias));
    }
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for (const auto& l : layers) {
      f(std::span<const double>(l.weights));
      f(std::span<const double>(l.bias));
    }
  }

  void set_zero() {
    for_each_tensor([](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
  }

  void add_scaled(const Mlp& other, double scale) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& a = layers[i];
      const auto& b = other.layers[i];
      for (std::size_t j = 0; j < a.weights.size(); ++j) a.weights[j] += scale * b.weights[j];
      for (std::size_t j = 0; j < a.bias.size(); ++j) a.bias[j] += scale * b.bias[j];
    }
  }
};

namespace detail {

inline double leaky(double v) { return v > 0.0 ? v : kLeakySlope * v; }
inline double leaky_grad(double v) { return v > 0.0 ? 1.0 : kLeakySlope; }

inline void dense_apply(const DenseLayer& layer, std::span<const double> x, Vec& y) {
  y.assign(layer.bias.begin(), layer.bias.end());
  const double* w = layer.weights.data();
  for (std::size_t r = 0; r < layer.out; ++r) {
    double acc = 0.0;
    const double* row = w + r * layer.in;
    for (std::size_t c = 0; c < layer.in; ++c) acc += row[c] * x[c];
    y[r] += acc;
  }
}

}  // namespace detail

/// Forward pass that fills `cache` in place (buffers are reused across calls).
inline void mlp_forward_into(const Mlp& mlp, std::span<const double> x, MlpCache& cache) {
  if (x.size() != mlp.input_size())
    throw ContractViolation("mlp_forward: input length " + std::to_string(x.size()) +
                            " != layer input size " + std::to_string(mlp.input_size()));
  const std::size_t n = mlp.layers.size();
  cache.inputs.resize(n);
  cache.pre.resize(n);
  cache.inputs[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < n; ++l) {
    detail::dense_apply(mlp.layers[l], cache.inputs[l], cache.pre[l]);
    if (l + 1 < n) {
      auto& next = cache.inputs[l + 1];
      next.resize(cache.pre[l].size());
      for (std::size_t i = 0; i < next.size(); ++i) next[i] = detail::leaky(cache.pre[l][i]);
    }
  }
}

struct MlpOutput {
  Vec y;
  MlpCache cache;
};

inline MlpOutput mlp_forward(const Mlp& mlp, std::span<const double> x) {
  MlpOutput out;
  mlp_forward_into(mlp, x, out.cache);
  out.y = out.cache.pre.back();
  return out;
}

/// Reverse pass for the scalar dy . y. Adds parameter gradients into `grads`
/// (which must be shaped like `mlp`) and returns dx.
inline Vec mlp_backward_accumulate(const Mlp& mlp, const MlpCache& cache, std::span<const double> dy,
                                   Mlp& grads) {
  const std::size_t n = mlp.layers.size();
  if (cache.pre.size() != n || cache.inputs.size() != n)
    throw ContractViolation("mlp_backward: cache depth does not match network");
  if (dy.size() != mlp.output_size() || cache.pre.back().size() != mlp.output_size())
    throw ContractViolation("mlp_backward: cotangent/cache shape mismatch");
  if (grads.layers.size() != n) throw ContractViolation("mlp_backward: gradient shape mismatch");

  Vec delta(dy.begin(), dy.end());
  Vec prev;
  for (std::size_t l = n; l-- > 0;) {
    const DenseLayer& layer = mlp.layers[l];
    DenseLayer& g = grads.layers[l];
    const Vec& in = cache.inputs[l];
    if (in.size() != layer.in || cache.pre[l].size() != layer.out)
      throw ContractViolation("mlp_backward: stale cache at layer " + std::to_string(l));
    for (std::size_t r = 0; r < layer.out; ++r) {
      const double d = delta[r];
      g.bias[r] += d;
      if (d == 0.0) continue;
      double* grow = g.weights.data() + r * layer.in;
      for (std::size_t c = 0; c < layer.in; ++c) grow[c] += d * in[c];
    }
    prev.assign(layer.in, 0.0);
    for (std::size_t r = 0; r < layer.out; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      const double* row = layer.weights.data() + r * layer.in;
      for (std::size_t c = 0; c < layer.in; ++c) prev[c] += row[c] * d;
    }
    if (l > 0) {
      const Vec& pre_prev = cache.pre[l - 1];
      for (std::size_t c = 0; c < prev.size(); ++c) prev[c] *= detail::leaky_grad(pre_prev[c]);
    }
    delta.swap(prev);
  }
  return delta;
}

struct MlpGradients {
  Vec dx;
  Mlp grads;
};

inline MlpGradients mlp_backward(const Mlp& mlp, const MlpCache& cache, std::span<const double> dy) {
  MlpGradients out;
  out.grads = mlp.zeros_like();
  out.dx = mlp_backward_accumulate(mlp, cache, dy, out.grads);
  return out;
}

struct AdamHyper {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Vec m;
  Vec v;
  std::uint64_t step = 0;
  AdamHyper hyper;

  AdamState() = default;
  AdamState(std::size_t n, AdamHyper h) : m(n, 0.0), v(n, 0.0), hyper(h) {}
};

/// One bias-corrected Adam update. A zero gradient leaves its parameter
/// bit-identical.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw ContractViolation("adam_step: shape mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw TrainingError("adam_step: non-finite gradient at index " + std::to_string(i));

  ++state.step;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    if (state.m[i] == 0.0) continue;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= h.learning_rate * mhat / (std::sqrt(vhat) + h.epsilon);
  }
}

/// Central-difference gradient of f at x.
inline Vec finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                            std::span<const double> x, double h) {
  require(h > 0.0, "finite_diff_grad: step must be positive");
  Vec probe(x.begin(), x.end());
  Vec g(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// |a - b| / max(|a|, |b|, floor)
inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace plugen
