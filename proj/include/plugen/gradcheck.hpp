#pragma once

// Finite-difference verification of every analytic derivative: conditioner
// parameters, the flow log-determinant, the training loss (binary,
// continuous and missing labels) and decoder pullbacks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plugen/backbone.hpp"
#include "plugen/flow.hpp"
#include "plugen/numerics.hpp"
#include "plugen/priors.hpp"
#include "plugen/training.hpp"

namespace plugen {

inline constexpr double kGradcheckTolerance = 1e-4;
// Gradients below this magnitude are compared in absolute terms.
inline constexpr double kGradcheckFloor = 1e-6;

struct SuiteResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_err = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<SuiteResult> suites;
  bool passed() const {
    return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed; });
  }
  double max_rel_err() const {
    double m = 0.0;
    for (const auto& s : suites) m = std::max(m, s.max_rel_err);
    return m;
  }
};

inline nlohmann::json to_json(const GradcheckReport& r) {
  nlohmann::json suites = nlohmann::json::array();
  for (const auto& s : r.suites)
    suites.push_back({{"name", s.name}, {"checked", s.checked}, {"max_rel_err", s.max_rel_err}, {"passed", s.passed}});
  return {{"schema_version", 1},
          {"tolerance", kGradcheckTolerance},
          {"passed", r.passed()},
          {"max_rel_err", r.max_rel_err()},
          {"suites", suites}};
}

namespace detail {

/// Sign pattern of every hidden pre-activation an evaluation passes through.
using KinkSignature = std::vector<bool>;

/// Five-point derivative of f along coordinate i. When a signature function
/// is given and the stencil crosses an activation kink, the step is halved.
inline double stencil_derivative(const std::function<double(std::span<const double>)>& f,
                                 const std::function<KinkSignature(std::span<const double>)>& signature, Vec& x,
                                 std::size_t i, double h) {
  const double orig = x[i];
  KinkSignature base;
  if (signature) base = signature(x);
  for (int attempt = 0; attempt < 8; ++attempt, h *= 0.5) {
    bool smooth = true;
    double f_at[4];
    const double offsets[4] = {-2.0, -1.0, 1.0, 2.0};
    for (int j = 0; j < 4; ++j) {
      x[i] = orig + offsets[j] * h;
      if (signature && smooth && signature(x) != base) smooth = false;
      f_at[j] = f(x);
    }
    x[i] = orig;
    if (smooth || attempt == 7) return (f_at[0] - 8.0 * f_at[1] + 8.0 * f_at[2] - f_at[3]) / (12.0 * h);
  }
  return 0.0;
}

inline void record(SuiteResult& s, double analytic, double numeric) {
  s.max_rel_err = std::max(s.max_rel_err, relative_error(analytic, numeric, kGradcheckFloor));
  ++s.checked;
}

inline void finish(SuiteResult& s) { s.passed = s.checked > 0 && s.max_rel_err <= kGradcheckTolerance; }

inline void randomize(NiceFlow& f, Rng& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  f.for_each_tensor([&](std::span<double> t) {
    for (double& v : t) v = u(rng);
  });
}

inline KinkSignature mlp_signature(const Mlp& mlp, std::span<const double> x) {
  MlpCache cache;
  mlp_forward_into(mlp, x, cache);
  KinkSignature sig;
  for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l)
    for (double p : cache.pre[l]) sig.push_back(p > 0.0);
  return sig;
}

inline KinkSignature flow_signature(const NiceFlow& flow, std::span<const double> z) {
  double ld = 0.0;
  InverseTrace trace;
  flow_inverse_traced(flow, z, ld, &trace);
  KinkSignature sig;
  for (const auto& c : trace.caches)
    for (std::size_t l = 0; l + 1 < c.pre.size(); ++l)
      for (double p : c.pre[l]) sig.push_back(p > 0.0);
  return sig;
}

/// log|det| by LU with partial pivoting.
inline double log_abs_det(std::vector<Vec> a) {
  const std::size_t n = a.size();
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    const double d = a[c][c];
    if (d == 0.0) return -std::numeric_limits<double>::infinity();
    acc += std::log(std::abs(d));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / d;
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return acc;
}

}  // namespace detail

/// Parameter and input gradients of a random MLP under a random linear readout.
inline SuiteResult gradcheck_mlp(std::uint64_t seed) {
  SuiteResult s{"mlp_parameters"};
  Rng rng = make_rng(seed, 1);
  const std::vector<std::size_t> sizes{5, 16, 16, 4};
  Mlp mlp = Mlp::random(sizes, rng);
  std::normal_distribution<double> n01;
  Vec x(5), w(4);
  for (double& v : x) v = n01(rng);
  for (double& v : w) v = n01(rng);
  const MlpOutput out = mlp_forward(mlp, x);
  const MlpGradients g = mlp_backward(mlp, out.cache, w);
  const Vec analytic = [&] {
    Vec flat;
    g.grads.for_each_tensor([&](std::span<const double> t) { flat.insert(flat.end(), t.begin(), t.end()); });
    return flat;
  }();

  Vec params;
  mlp.for_each_tensor([&](std::span<const double> t) { params.insert(params.end(), t.begin(), t.end()); });
  auto load = [&](std::span<const double> p) {
    Mlp m = mlp;
    std::size_t off = 0;
    m.for_each_tensor([&](std::span<double> t) {
      std::copy(p.begin() + static_cast<std::ptrdiff_t>(off), p.begin() + static_cast<std::ptrdiff_t>(off + t.size()),
                t.begin());
      off += t.size();
    });
    return m;
  };
  auto readout = [&](const Mlp& m, std::span<const double> in) {
    const Vec y = mlp_forward(m, in).y;
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
    return acc;
  };
  std::function<double(std::span<const double>)> f = [&](std::span<const double> p) { return readout(load(p), x); };
  std::function<detail::KinkSignature(std::span<const double>)> sig = [&](std::span<const double> p) {
    return detail::mlp_signature(load(p), x);
  };
  for (std::size_t i = 0; i < params.size(); ++i)
    detail::record(s, analytic[i], detail::stencil_derivative(f, sig, params, i, 1e-4));

  std::function<double(std::span<const double>)> fx = [&](std::span<const double> in) { return readout(mlp, in); };
  std::function<detail::KinkSignature(std::span<const double>)> sx = [&](std::span<const double> in) {
    return detail::mlp_signature(mlp, in);
  };
  for (std::size_t i = 0; i < x.size(); ++i) detail::record(s, g.dx[i], detail::stencil_derivative(fx, sx, x, i, 1e-4));
  detail::finish(s);
  return s;
}

/// Analytic log-determinant of the inverse flow against the determinant of
/// its finite-difference Jacobian, for each N in `dims_list`.
inline SuiteResult gradcheck_log_det(std::uint64_t seed, const std::vector<std::size_t>& dims_list = {4, 6, 8},
                                     std::size_t trials = 3) {
  SuiteResult s{"log_det"};
  for (std::size_t n : dims_list) {
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng = make_rng(seed, 100 * n + t);
      NiceFlow flow = NiceFlow::create({n, 1, 4, 3, 16}, rng);
      detail::randomize(flow, rng, 0.5);
      std::normal_distribution<double> n01;
      Vec z(n);
      for (double& v : z) v = n01(rng);
      const double analytic = flow_inverse(flow, z).log_det;
      std::vector<Vec> jac(n, Vec(n));
      std::function<detail::KinkSignature(std::span<const double>)> sig = [&](std::span<const double> p) {
        return detail::flow_signature(flow, p);
      };
      for (std::size_t out = 0; out < n; ++out) {
        std::function<double(std::span<const double>)> f = [&](std::span<const double> p) {
          double ld = 0.0;
          return flow_inverse_traced(flow, p, ld, nullptr)[out];
        };
        for (std::size_t in = 0; in < n; ++in) jac[out][in] = detail::stencil_derivative(f, sig, z, in, 1e-4);
      }
      const double numeric = detail::log_abs_det(jac);
      detail::record(s, std::exp(analytic), std::exp(numeric));
    }
  }
  detail::finish(s);
  return s;
}

/// Toy problem for the loss check: attribute 0 binary, 1 continuous, 2
/// binary with a skewed prior, with missing entries in every attribute.
struct GradcheckProblem {
  NiceFlow flow;
  std::vector<LabelSpec> specs;
  LatentDataset data;
  Vec sigmas;
};

inline GradcheckProblem make_gradcheck_problem(std::uint64_t seed, std::size_t dims = 6, std::size_t width = 12) {
  GradcheckProblem p;
  Rng rng = make_rng(seed, 7);
  p.flow = NiceFlow::create({dims, 3, 3, 3, width}, rng);
  detail::randomize(p.flow, rng, 0.4);
  p.data.dims = dims;
  p.data.k_labels = 3;
  p.data.kinds = {LabelKind::binary, LabelKind::continuous, LabelKind::binary};
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const LabelVector rows[] = {
      {1.0, 0.3, 0.0}, {0.0, kMissing, 1.0}, {kMissing, -0.7, kMissing}, {1.0, kMissing, 0.0},
      {0.0, 0.9, kMissing}, {kMissing, kMissing, 1.0},
  };
  for (const auto& y : rows) {
    Vec z(dims);
    for (double& v : z) v = n01(rng);
    p.data.latents.push_back(z);
    p.data.labels.push_back(y);
  }
  LabelSpec b0 = LabelSpec::binary(0.5);
  LabelSpec c1 = LabelSpec::continuous({-0.8, -0.1, 0.4, 0.95});
  LabelSpec b2 = LabelSpec::binary(0.2);
  p.specs = {b0, c1, b2};
  p.sigmas = {0.6, 0.5, 0.45};
  return p;
}

/// Every parameter gradient of the mean training loss.
inline SuiteResult gradcheck_nll(std::uint64_t seed) {
  SuiteResult s{"nll_parameters"};
  GradcheckProblem p = make_gradcheck_problem(seed);
  std::vector<std::size_t> batch(p.data.size());
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
  const LossResult r = nll_loss(p.flow, p.specs, p.data, batch, p.sigmas);
  const Vec analytic = r.grads.flatten();
  Vec params = p.flow.flatten();
  NiceFlow probe = p.flow;
  std::function<double(std::span<const double>)> f = [&](std::span<const double> q) {
    probe.assign(q);
    return evaluate_nll(probe, p.specs, p.data, p.sigmas);
  };
  std::function<detail::KinkSignature(std::span<const double>)> sig = [&](std::span<const double> q) {
    probe.assign(q);
    detail::KinkSignature all;
    for (const auto& z : p.data.latents) {
      auto one = detail::flow_signature(probe, z);
      all.insert(all.end(), one.begin(), one.end());
    }
    return all;
  };
  for (std::size_t i = 0; i < params.size(); ++i)
    detail::record(s, analytic[i], detail::stencil_derivative(f, sig, params, i, 1e-4));
  detail::finish(s);
  return s;
}

/// Input gradient of the inverse flow under a random readout of (v, log_det).
inline SuiteResult gradcheck_flow_input(std::uint64_t seed) {
  SuiteResult s{"flow_input"};
  GradcheckProblem p = make_gradcheck_problem(seed + 1);
  Rng rng = make_rng(seed, 9);
  std::normal_distribution<double> n01;
  Vec dv(p.flow.dims);
  for (double& v : dv) v = n01(rng);
  const double dlogdet = 0.7;
  for (const auto& z0 : p.data.latents) {
    const FlowGradients g = flow_grad(p.flow, z0, dv, dlogdet);
    Vec z = z0;
    std::function<double(std::span<const double>)> f = [&](std::span<const double> q) {
      double ld = 0.0;
      const Vec v = flow_inverse_traced(p.flow, q, ld, nullptr);
      double acc = dlogdet * ld;
      for (std::size_t i = 0; i < dv.size(); ++i) acc += dv[i] * v[i];
      return acc;
    };
    std::function<detail::KinkSignature(std::span<const double>)> sig = [&](std::span<const double> q) {
      return detail::flow_signature(p.flow, q);
    };
    for (std::size_t i = 0; i < z.size(); ++i) detail::record(s, g.dz[i], detail::stencil_derivative(f, sig, z, i, 1e-4));
  }
  detail::finish(s);
  return s;
}

/// Pullback of a differentiable decoder against differences of a random
/// linear readout of its output.
template <DifferentiableDecoder G>
SuiteResult gradcheck_pullback(const std::string& name, const G& g, std::size_t latent_dims, std::uint64_t seed,
                               const std::function<detail::KinkSignature(std::span<const double>)>& sig = {}) {
  SuiteResult s{name};
  Rng rng = make_rng(seed, 11);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 3; ++trial) {
    Vec z(latent_dims);
    for (double& v : z) v = n01(rng);
    const Vec x = g.decode(z);
    Vec w(x.size());
    for (double& v : w) v = n01(rng);
    const Vec analytic = g.pullback(z, w);
    std::function<double(std::span<const double>)> f = [&](std::span<const double> q) {
      const Vec y = g.decode(Vec(q.begin(), q.end()));
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
      return acc;
    };
    for (std::size_t i = 0; i < z.size(); ++i) detail::record(s, analytic[i], detail::stencil_derivative(f, sig, z, i, 1e-4));
  }
  detail::finish(s);
  return s;
}

inline GradcheckReport run_gradchecks(std::uint64_t seed = 0) {
  GradcheckReport r;
  r.suites.push_back(gradcheck_mlp(seed));
  r.suites.push_back(gradcheck_log_det(seed));
  r.suites.push_back(gradcheck_nll(seed));
  r.suites.push_back(gradcheck_flow_input(seed));

  SyntheticConfig sc;
  sc.seed = seed + 1;
  sc.kinds.assign(sc.k_labels, LabelKind::binary);
  SyntheticBackbone bk(sc);
  r.suites.push_back(gradcheck_pullback("synthetic_pullback", bk, sc.dims, seed));

  AeConfig ac;
  ac.seed = seed;
  ToyAutoencoder ae = ToyAutoencoder::create(sc.obs_dims, sc.dims, ac);
  ae.trained = true;
  std::function<detail::KinkSignature(std::span<const double>)> sig = [&](std::span<const double> q) {
    return detail::mlp_signature(ae.decoder, q);
  };
  r.suites.push_back(gradcheck_pullback("autoencoder_pullback", ae, sc.dims, seed, sig));
  return r;
}

}  // namespace plugen
