#pragma once

// Frozen generative backbones G: Z -> X.
//  - SyntheticBackbone: entangled latents z = M t from known factors t, a
//    smooth invertible observation map, and an exact oracle back to t.
//  - ToyAutoencoder: small deterministic MLP autoencoder.
//  - latent_recover: gradient-descent inversion of a decoder-only G.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "plugen/error.hpp"
#include "plugen/numerics.hpp"
#include "plugen/priors.hpp"
#include "plugen/training.hpp"

namespace plugen {

template <class G>
concept Decoder = requires(const G& g, const Vec& z) {
  { g.decode(z) } -> std::convertible_to<Vec>;
};

template <class G>
concept DifferentiableDecoder = Decoder<G> && requires(const G& g, const Vec& z, const Vec& dx) {
  { g.pullback(z, dx) } -> std::convertible_to<Vec>;
};

template <class E>
concept Encoder = requires(const E& e, const Vec& x) {
  { e.encode(x) } -> std::convertible_to<Vec>;
};

/// Row-major dense matrix helpers for the backbone's linear maps.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  Vec apply(std::span<const double> x) const {
    Vec y(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) acc += (*this)(r, c) * x[c];
      y[r] = acc;
    }
    return y;
  }
  Vec apply_transpose(std::span<const double> y) const {
    Vec x(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) x[c] += (*this)(r, c) * y[r];
    return x;
  }
};

/// Columns orthonormalized by two passes of modified Gram-Schmidt.
inline Matrix orthonormal_columns(std::size_t rows, std::size_t cols, Rng& rng) {
  require(cols <= rows, "orthonormal_columns: need cols <= rows");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix q(rows, cols);
  for (double& v : q.data) v = normal(rng);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < cols; ++j) {
      for (std::size_t i = 0; i < j; ++i) {
        double dot = 0.0;
        for (std::size_t r = 0; r < rows; ++r) dot += q(r, i) * q(r, j);
        for (std::size_t r = 0; r < rows; ++r) q(r, j) -= dot * q(r, i);
      }
      double norm = 0.0;
      for (std::size_t r = 0; r < rows; ++r) norm += q(r, j) * q(r, j);
      norm = std::sqrt(norm);
      for (std::size_t r = 0; r < rows; ++r) q(r, j) /= norm;
    }
  }
  return q;
}

/// Determinant sign of a square matrix by Gaussian elimination with pivoting.
inline int determinant_sign(const Matrix& m) {
  Matrix a = m;
  const std::size_t n = a.rows;
  int sign = 1;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (a(piv, col) == 0.0) return 0;
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(piv, c), a(col, c));
      sign = -sign;
    }
    if (a(col, col) < 0.0) sign = -sign;
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
    }
  }
  return sign;
}

/// Standard normal quantile by bisection on the CDF.
inline double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "normal_quantile: p must be in (0, 1)");
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::numbers::sqrt2) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct SyntheticConfig {
  std::size_t dims = 8;       // N
  std::size_t k_labels = 3;   // K
  std::size_t obs_dims = 12;  // D_x
  std::uint64_t seed = 1;
  std::vector<LabelKind> kinds;   // empty = all binary
  Vec positive_rates;             // per binary attribute; empty = 0.5
  double continuous_scale = 1.0;  // y = clamp(scale * t, -1, 1)
  double nonlinearity = 0.1;      // x = A z + nonlinearity * tanh(A z)
  bool identity_mixing = false;
  bool identity_observation = false;  // x = z (requires D_x = N)
};

struct SynthSample {
  Vec x;
  Vec z;
  Vec t;
  LabelVector y;
};

class SyntheticBackbone {
 public:
  static constexpr double kOracleResidual = 1e-6;

  explicit SyntheticBackbone(SyntheticConfig cfg) : cfg_(std::move(cfg)) {
    const std::size_t n = cfg_.dims, k = cfg_.k_labels;
    require(k >= 1 && k < n, "synthetic backbone: need 1 <= K < N");
    if (cfg_.kinds.empty()) cfg_.kinds.assign(k, LabelKind::binary);
    if (cfg_.positive_rates.empty()) cfg_.positive_rates.assign(k, 0.5);
    require(cfg_.kinds.size() == k && cfg_.positive_rates.size() == k,
            "synthetic backbone: per-attribute settings must have length K");
    if (cfg_.identity_observation) cfg_.obs_dims = n;
    require(cfg_.obs_dims >= n, "synthetic backbone: need D_x >= N");

    Rng rng = make_rng(cfg_.seed, 0x4D4958ULL);
    if (cfg_.identity_mixing) {
      mixing_ = Matrix::identity(n);
    } else {
      mixing_ = orthonormal_columns(n, n, rng);
      if (determinant_sign(mixing_) < 0)
        for (std::size_t r = 0; r < n; ++r) mixing_(r, n - 1) = -mixing_(r, n - 1);
    }
    Rng obs_rng = make_rng(cfg_.seed, 0x4F4253ULL);
    observation_ = cfg_.identity_observation ? Matrix::identity(n) : orthonormal_columns(cfg_.obs_dims, n, obs_rng);

    thresholds_.assign(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      if (cfg_.kinds[i] != LabelKind::binary) continue;
      const double p = cfg_.positive_rates[i];
      require(p > 0.0 && p < 1.0, "synthetic backbone: positive rate must be in (0, 1)");
      thresholds_[i] = p == 0.5 ? 0.0 : normal_quantile(1.0 - p);
    }
  }

  const SyntheticConfig& config() const { return cfg_; }
  std::size_t dims() const { return cfg_.dims; }
  std::size_t k_labels() const { return cfg_.k_labels; }
  std::size_t obs_dims() const { return cfg_.obs_dims; }
  const std::vector<LabelKind>& kinds() const { return cfg_.kinds; }
  const Matrix& mixing() const { return mixing_; }
  const Matrix& observation() const { return observation_; }
  const Vec& thresholds() const { return thresholds_; }

  double nonlinearity() const { return cfg_.identity_observation ? 0.0 : cfg_.nonlinearity; }

  /// G(z)
  Vec decode(const Vec& z) const {
    require(z.size() == dims(), "synthetic decode: dimension mismatch");
    Vec w = observation_.apply(z);
    const double a = nonlinearity();
    for (double& v : w) v = v + a * std::tanh(v);
    return w;
  }

  /// Vector-Jacobian product of G at z.
  Vec pullback(const Vec& z, const Vec& dx) const {
    Vec w = observation_.apply(z);
    const double a = nonlinearity();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double th = std::tanh(w[i]);
      w[i] = dx[i] * (1.0 + a * (1.0 - th * th));
    }
    return observation_.apply_transpose(w);
  }

  /// Exact encoder on the range of G; the residual of the left inverse is
  /// written to `residual` when given.
  Vec encode_unchecked(const Vec& x, double* residual = nullptr) const {
    require(x.size() == obs_dims(), "synthetic encode: dimension mismatch");
    const double a = nonlinearity();
    Vec w(x);
    if (a != 0.0) {
      // w + a tanh(w) = x elementwise; contraction with factor |a| < 1
      for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x[i];
        for (int it = 0; it < 50; ++it) {
          const double next = x[i] - a * std::tanh(v);
          const double delta = std::abs(next - v);
          v = next;
          if (delta <= 1e-12 * std::max(1.0, std::abs(v))) break;
        }
        w[i] = v;
      }
    }
    Vec z = observation_.apply_transpose(w);
    if (residual) {
      const Vec back = observation_.apply(z);
      double r = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) r = std::max(r, std::abs(back[i] - w[i]));
      *residual = r;
    }
    return z;
  }

  Vec encode(const Vec& x) const {
    double residual = 0.0;
    Vec z = encode_unchecked(x, &residual);
    if (!(residual <= kOracleResidual))
      throw OracleError("synthetic encode: input is off the backbone range (residual " +
                        std::to_string(residual) + ")");
    return z;
  }

  Vec factors_from_latent(const Vec& z) const { return mixing_.apply_transpose(z); }
  Vec latent_from_factors(const Vec& t) const { return mixing_.apply(t); }

  /// Ground-truth factors t of an on-range observation.
  Vec oracle_factors(const Vec& x) const { return factors_from_latent(encode(x)); }

  /// Least-squares factors for observations that may be off-range (e.g. the
  /// output of a learned decoder).
  Vec projected_factors(const Vec& x) const { return factors_from_latent(encode_unchecked(x)); }

  double label_from_factor(std::size_t attr, double t) const {
    if (cfg_.kinds[attr] == LabelKind::binary) return t > thresholds_[attr] ? 1.0 : 0.0;
    return std::clamp(cfg_.continuous_scale * t, -1.0, 1.0);
  }

  LabelVector labels_from_factors(const Vec& t) const {
    LabelVector y(k_labels());
    for (std::size_t i = 0; i < k_labels(); ++i) y[i] = label_from_factor(i, t[i]);
    return y;
  }

  /// Signed score whose sign agrees with the binary label of attr.
  double label_score(std::size_t attr, double t) const { return t - thresholds_[attr]; }

  /// Order-dependent hash of every fixed parameter.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](double v) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = (h ^ bits) * 1099511628211ULL;
    };
    for (double v : mixing_.data) mix(v);
    for (double v : observation_.data) mix(v);
    for (double v : thresholds_) mix(v);
    return h;
  }

 private:
  SyntheticConfig cfg_;
  Matrix mixing_;
  Matrix observation_;
  Vec thresholds_;
};

/// n i.i.d. draws t ~ N(0, I), z = M t, x = G(z), y = labels(t).
inline std::vector<SynthSample> synth_generate(const SyntheticBackbone& bk, std::size_t n, std::uint64_t seed) {
  require(n >= 1, "synth_generate: n must be >= 1");
  Rng rng = make_rng(seed, 0x53594E54ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<SynthSample> out(n);
  for (auto& s : out) {
    s.t.resize(bk.dims());
    for (double& v : s.t) v = normal(rng);
    s.z = bk.latent_from_factors(s.t);
    s.x = bk.decode(s.z);
    s.y = bk.labels_from_factors(s.t);
  }
  return out;
}

/// Sets each label entry MISSING with probability 1 - coverage, drawn per
/// (example, attribute) from a dedicated stream.
inline void apply_label_coverage(LatentDataset& data, double coverage, std::uint64_t seed) {
  require(coverage > 0.0 && coverage <= 1.0, "label coverage must be in (0, 1]");
  if (coverage == 1.0) return;
  Rng rng = make_rng(seed, 0x4D41534BULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& row : data.labels)
    for (auto& y : row)
      if (u(rng) >= coverage) y = kMissing;
}

/// Latent codes and labels of generated data, encoded through `encoder`.
template <Encoder E>
LatentDataset make_latent_dataset(const E& encoder, const std::vector<SynthSample>& samples,
                                  std::vector<LabelKind> kinds, std::size_t dims, double coverage,
                                  std::uint64_t seed) {
  LatentDataset data;
  data.dims = dims;
  data.k_labels = kinds.size();
  data.kinds = std::move(kinds);
  for (const auto& s : samples) {
    data.latents.push_back(encoder.encode(s.x));
    data.labels.push_back(s.y);
  }
  apply_label_coverage(data, coverage, seed);
  data.validate();
  return data;
}

inline LatentDataset make_latent_dataset(const SyntheticBackbone& bk, std::size_t n, std::uint64_t seed,
                                         double label_coverage) {
  const auto samples = synth_generate(bk, n, seed);
  LatentDataset data;
  data.dims = bk.dims();
  data.k_labels = bk.k_labels();
  data.kinds = bk.kinds();
  for (const auto& s : samples) {
    data.latents.push_back(s.z);
    data.labels.push_back(s.y);
  }
  apply_label_coverage(data, label_coverage, seed);
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------

struct AeConfig {
  std::size_t hidden = 32;
  std::size_t depth = 2;  // dense layers per network; 1 = linear
  std::uint64_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double latent_reg = 1e-3;
  std::uint64_t seed = 0;
};

/// Deterministic regularized autoencoder.
struct ToyAutoencoder {
  Mlp encoder;
  Mlp decoder;
  bool trained = false;

  static ToyAutoencoder create(std::size_t obs_dims, std::size_t latent_dims, const AeConfig& cfg) {
    require(cfg.depth >= 1, "autoencoder: depth must be >= 1");
    Rng rng = make_rng(cfg.seed, 0x41454E43ULL);
    auto sizes = [&](std::size_t in, std::size_t out) {
      std::vector<std::size_t> s{in};
      for (std::size_t d = 0; d + 1 < cfg.depth; ++d) s.push_back(cfg.hidden);
      s.push_back(out);
      return s;
    };
    ToyAutoencoder ae;
    ae.encoder = Mlp::random(sizes(obs_dims, latent_dims), rng);
    ae.decoder = Mlp::random(sizes(latent_dims, obs_dims), rng);
    return ae;
  }

  std::size_t obs_dims() const { return encoder.input_size(); }
  std::size_t latent_dims() const { return encoder.output_size(); }

  Vec encode(const Vec& x) const {
    require(trained, "autoencoder: encode before training");
    return mlp_forward(encoder, x).y;
  }
  Vec decode(const Vec& z) const {
    require(trained, "autoencoder: decode before training");
    return mlp_forward(decoder, z).y;
  }
  Vec pullback(const Vec& z, const Vec& dx) const {
    const auto out = mlp_forward(decoder, z);
    Mlp scratch = decoder.zeros_like();
    return mlp_backward_accumulate(decoder, out.cache, dx, scratch);
  }
};

inline Vec flatten(const Mlp& a, const Mlp& b) {
  Vec out;
  a.for_each_tensor([&](std::span<const double> t) { out.insert(out.end(), t.begin(), t.end()); });
  b.for_each_tensor([&](std::span<const double> t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

inline void assign(Mlp& a, Mlp& b, std::span<const double> p) {
  std::size_t off = 0;
  auto put = [&](std::span<double> t) {
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(off), p.begin() + static_cast<std::ptrdiff_t>(off + t.size()),
              t.begin());
    off += t.size();
  };
  a.for_each_tensor(put);
  b.for_each_tensor(put);
}

/// Mean over examples of |dec(enc(x)) - x|^2 / D_x + latent_reg * |enc(x)|^2.
inline double ae_loss(const ToyAutoencoder& ae, const std::vector<Vec>& xs, double latent_reg) {
  double total = 0.0;
  for (const auto& x : xs) {
    const Vec z = mlp_forward(ae.encoder, x).y;
    const Vec r = mlp_forward(ae.decoder, z).y;
    double se = 0.0, zz = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) se += (r[i] - x[i]) * (r[i] - x[i]);
    for (double v : z) zz += v * v;
    total += se / static_cast<double>(x.size()) + latent_reg * zz;
  }
  return total / static_cast<double>(xs.size());
}

/// Mean squared reconstruction error per coordinate.
inline double ae_reconstruction_mse(const ToyAutoencoder& ae, const std::vector<Vec>& xs) {
  return ae_loss(ae, xs, 0.0);
}

struct AeTrainResult {
  ToyAutoencoder ae;
  Vec history;  // mean loss per epoch
};

inline AeTrainResult ae_train(ToyAutoencoder ae, const std::vector<Vec>& xs, const AeConfig& cfg) {
  require(!xs.empty(), "ae_train: empty data");
  require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.learning_rate > 0.0, "ae_train: invalid config");
  for (const auto& x : xs) require(x.size() == ae.obs_dims(), "ae_train: observation dimension mismatch");

  Vec params = flatten(ae.encoder, ae.decoder);
  AdamState adam(params.size(), AdamHyper{cfg.learning_rate, 0.9, 0.999, 1e-8});
  Mlp genc = ae.encoder.zeros_like(), gdec = ae.decoder.zeros_like();
  std::vector<std::size_t> order(xs.size());
  AeTrainResult result;
  MlpCache ec, dc;
  const double inv_dx = 1.0 / static_cast<double>(ae.obs_dims());

  for (std::uint64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng stream = make_rng(cfg.seed, 0x41455348ULL + epoch);
    std::shuffle(order.begin(), order.end(), stream);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      genc.set_zero();
      gdec.set_zero();
      for (std::size_t b = start; b < stop; ++b) {
        const Vec& x = xs[order[b]];
        mlp_forward_into(ae.encoder, x, ec);
        const Vec z = ec.pre.back();
        mlp_forward_into(ae.decoder, z, dc);
        const Vec& r = dc.pre.back();
        Vec dr(r.size());
        double se = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) {
          se += (r[i] - x[i]) * (r[i] - x[i]);
          dr[i] = 2.0 * (r[i] - x[i]) * inv_dx * scale;
        }
        double zz = 0.0;
        for (double v : z) zz += v * v;
        epoch_loss += se * inv_dx + cfg.latent_reg * zz;
        Vec dz = mlp_backward_accumulate(ae.decoder, dc, dr, gdec);
        for (std::size_t i = 0; i < z.size(); ++i) dz[i] += 2.0 * cfg.latent_reg * z[i] * scale;
        mlp_backward_accumulate(ae.encoder, ec, dz, genc);
      }
      const Vec g = flatten(genc, gdec);
      adam_step(params, g, adam);
      assign(ae.encoder, ae.decoder, params);
    }
    epoch_loss /= static_cast<double>(xs.size());
    if (!std::isfinite(epoch_loss))
      throw TrainingError("ae_train: divergence at epoch " + std::to_string(epoch));
    result.history.push_back(epoch_loss);
  }
  ae.trained = true;
  result.ae = std::move(ae);
  return result;
}

// ---------------------------------------------------------------------------

struct RecoveryConfig {
  std::size_t steps = 500;
  double learning_rate = 1e-2;
};

struct RecoveryResult {
  Vec z;
  double loss = 0.0;          // |G(z) - x|^2 at the returned iterate
  double initial_loss = 0.0;  // at z = 0
};

/// Adam on z (from z = 0) minimizing |G(z) - x|^2 for a frozen G. Returns
/// the best iterate seen.
template <DifferentiableDecoder G>
RecoveryResult latent_recover(const G& g, const Vec& x, std::size_t latent_dims, const RecoveryConfig& cfg = {}) {
  require(cfg.steps >= 1, "latent_recover: steps must be >= 1");
  Vec z(latent_dims, 0.0);
  AdamState adam(latent_dims, AdamHyper{cfg.learning_rate, 0.9, 0.999, 1e-8});
  auto loss_and_residual = [&](const Vec& at, Vec& residual) {
    const Vec r = g.decode(at);
    if (r.size() != x.size()) throw DimensionError("latent_recover: decoder output dimension mismatch");
    residual.resize(r.size());
    double l = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      residual[i] = r[i] - x[i];
      l += residual[i] * residual[i];
    }
    return l;
  };
  Vec residual;
  RecoveryResult best;
  best.z = z;
  best.loss = best.initial_loss = loss_and_residual(z, residual);
  if (!std::isfinite(best.loss)) throw RecoveryError("latent_recover: non-finite loss at init");
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (double& r : residual) r *= 2.0;
    const Vec grad = g.pullback(z, residual);
    adam_step(z, grad, adam);
    const double l = loss_and_residual(z, residual);
    if (!std::isfinite(l)) throw RecoveryError("latent_recover: non-finite loss at step " + std::to_string(step));
    if (l < best.loss) {
      best.loss = l;
      best.z = z;
    }
  }
  return best;
}

}  // namespace plugen
