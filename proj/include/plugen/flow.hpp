#pragma once

// NICE-style invertible flow F: D -> Z. Additive couplings followed by a
// diagonal scaling layer. F^-1 and its log-determinant are exact.

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "plugen/error.hpp"
#include "plugen/numerics.hpp"

namespace plugen {

inline constexpr double kLogScaleClamp = 10.0;

/// Point (c, s) of the factorized space: c holds the K label variables, s the
/// N - K style variables.
struct FactorizedCode {
  Vec c;
  Vec s;

  std::size_t dims() const { return c.size() + s.size(); }

  Vec concat() const {
    Vec v(c);
    v.insert(v.end(), s.begin(), s.end());
    return v;
  }

  static FactorizedCode split(std::span<const double> v, std::size_t k) {
    require(k <= v.size(), "FactorizedCode: label count exceeds dimension");
    return {Vec(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k)),
            Vec(v.begin() + static_cast<std::ptrdiff_t>(k), v.end())};
  }

  bool operator==(const FactorizedCode&) const = default;
};

struct LatentCode {
  Vec z;
  bool operator==(const LatentCode&) const = default;
};

/// Shifts the complement of `mask` by conditioner(x[mask]).
struct CouplingLayer {
  std::vector<bool> mask;           // true = pass-through
  std::vector<std::size_t> pass;    // indices with mask true
  std::vector<std::size_t> shifted; // indices with mask false
  Mlp conditioner;

  CouplingLayer() = default;
  CouplingLayer(std::vector<bool> m, Mlp cond) : mask(std::move(m)), conditioner(std::move(cond)) {
    index_mask();
    require(!pass.empty() && !shifted.empty(),
            "coupling: mask needs at least one pass-through and one shifted coordinate");
    require(conditioner.input_size() == pass.size() && conditioner.output_size() == shifted.size(),
            "coupling: conditioner sizes do not match mask");
  }

  void index_mask() {
    pass.clear();
    shifted.clear();
    for (std::size_t i = 0; i < mask.size(); ++i) (mask[i] ? pass : shifted).push_back(i);
  }
};

struct ScalingLayer {
  Vec log_scale;

  void clamp() {
    for (double& v : log_scale) v = std::clamp(v, -kLogScaleClamp, kLogScaleClamp);
  }
};

struct FlowArch {
  std::size_t dims = 8;
  std::size_t k_labels = 3;
  std::size_t couplings = 4;
  std::size_t depth = 4;   // dense layers per conditioner
  std::size_t width = 256; // hidden width
};

/// Parity mask for coupling `layer`: even indices pass through in layer 0,
/// odd ones in layer 1, and so on.
inline std::vector<bool> parity_mask(std::size_t dims, std::size_t layer) {
  std::vector<bool> m(dims);
  for (std::size_t i = 0; i < dims; ++i) m[i] = (i % 2 == 0) == (layer % 2 == 0);
  return m;
}

struct NiceFlow {
  std::size_t dims = 0;
  std::size_t k_labels = 0;
  std::vector<CouplingLayer> couplings;
  ScalingLayer scaling;

  /// Random hidden layers, zero output layers and zero log-scale: the new
  /// flow is exactly the identity.
  static NiceFlow create(const FlowArch& arch, Rng& rng) {
    require(arch.k_labels >= 1 && arch.k_labels < arch.dims, "flow: need 1 <= K < N");
    require(arch.dims >= 2, "flow: need N >= 2");
    require(arch.couplings >= 1 && arch.depth >= 1, "flow: need at least one coupling of depth >= 1");
    NiceFlow f;
    f.dims = arch.dims;
    f.k_labels = arch.k_labels;
    for (std::size_t l = 0; l < arch.couplings; ++l) {
      auto mask = parity_mask(arch.dims, l);
      std::size_t p = 0;
      for (bool b : mask) p += b;
      std::vector<std::size_t> sizes{p};
      for (std::size_t d = 0; d + 1 < arch.depth; ++d) sizes.push_back(arch.width);
      sizes.push_back(arch.dims - p);
      Mlp cond = Mlp::random(sizes, rng);
      cond.layers.back().weights.assign(cond.layers.back().weights.size(), 0.0);
      cond.layers.back().bias.assign(cond.layers.back().bias.size(), 0.0);
      f.couplings.emplace_back(std::move(mask), std::move(cond));
    }
    f.scaling.log_scale.assign(arch.dims, 0.0);
    return f;
  }

  NiceFlow zeros_like() const {
    NiceFlow g = *this;
    g.set_zero();
    return g;
  }

  void set_zero() {
    for_each_tensor([](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
  }

  /// Parameter tensors in canonical order: couplings in order (each
  /// conditioner layer weights then bias), then log_scale.
  template <class F>
  void for_each_tensor(F&& f) {
    for (auto& c : couplings) c.conditioner.for_each_tensor(f);
    f(std::span<double>(scaling.log_scale));
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for (const auto& c : couplings) c.conditioner.for_each_tensor(f);
    f(std::span<const double>(scaling.log_scale));
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for_each_tensor([&](std::span<const double> t) { n += t.size(); });
    return n;
  }

  Vec flatten() const {
    Vec out;
    out.reserve(param_count());
    for_each_tensor([&](std::span<const double> t) { out.insert(out.end(), t.begin(), t.end()); });
    return out;
  }

  void assign(std::span<const double> params) {
    require(params.size() == param_count(), "flow: parameter blob size mismatch");
    std::size_t off = 0;
    for_each_tensor([&](std::span<double> t) {
      std::copy(params.begin() + static_cast<std::ptrdiff_t>(off),
                params.begin() + static_cast<std::ptrdiff_t>(off + t.size()), t.begin());
      off += t.size();
    });
  }

  /// Structural checks from the type's invariants.
  void validate() const {
    require(k_labels >= 1 && k_labels < dims, "flow: need 1 <= K < N");
    require(scaling.log_scale.size() == dims, "flow: scaling size mismatch");
    for (std::size_t l = 0; l < couplings.size(); ++l) {
      const auto& c = couplings[l];
      require(c.mask.size() == dims, "flow: coupling mask size mismatch");
      require(c.conditioner.chains(), "flow: conditioner does not chain");
      require(c.conditioner.input_size() == c.pass.size() &&
                  c.conditioner.output_size() == c.shifted.size(),
              "flow: conditioner sizes do not match mask");
      if (l > 0)
        for (std::size_t i = 0; i < dims; ++i)
          require(c.mask[i] != couplings[l - 1].mask[i], "flow: coupling masks must alternate");
    }
  }
};

namespace detail {

inline void gather(std::span<const double> v, const std::vector<std::size_t>& idx, Vec& out) {
  out.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
}

inline void check_finite(std::span<const double> v, const std::string& where) {
  if (!all_finite(v)) throw NumericError("non-finite value after " + where);
}

}  // namespace detail

/// z = F(v) on a concatenated (c, s) vector.
inline Vec flow_forward(const NiceFlow& flow, std::span<const double> v) {
  if (v.size() != flow.dims)
    throw ContractViolation("flow_forward: expected dimension " + std::to_string(flow.dims));
  Vec u(v.begin(), v.end());
  Vec sub;
  MlpCache cache;
  for (std::size_t l = 0; l < flow.couplings.size(); ++l) {
    const auto& layer = flow.couplings[l];
    detail::gather(u, layer.pass, sub);
    mlp_forward_into(layer.conditioner, sub, cache);
    const Vec& shift = cache.pre.back();
    for (std::size_t j = 0; j < layer.shifted.size(); ++j) u[layer.shifted[j]] += shift[j];
    detail::check_finite(u, "coupling layer " + std::to_string(l));
  }
  for (std::size_t i = 0; i < u.size(); ++i) u[i] *= std::exp(flow.scaling.log_scale[i]);
  detail::check_finite(u, "scaling layer");
  return u;
}

inline LatentCode flow_forward(const NiceFlow& flow, const FactorizedCode& v) {
  return {flow_forward(flow, std::span<const double>(v.concat()))};
}

/// Everything the reverse pass of F^-1 needs.
struct InverseTrace {
  Vec scaled;                  // z * exp(-log_scale)
  std::vector<MlpCache> caches; // per coupling, indexed like flow.couplings
};

struct InverseResult {
  FactorizedCode v;
  double log_det = 0.0;
};

/// v = F^-1(z) as a flat vector; log_det = log|det dF^-1/dz| = -sum(log_scale).
inline Vec flow_inverse_traced(const NiceFlow& flow, std::span<const double> z, double& log_det,
                               InverseTrace* trace) {
  if (z.size() != flow.dims)
    throw ContractViolation("flow_inverse: expected dimension " + std::to_string(flow.dims));
  if (!all_finite(z)) throw NumericError("flow_inverse: non-finite input");
  Vec u(z.size());
  log_det = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    u[i] = z[i] * std::exp(-flow.scaling.log_scale[i]);
    log_det -= flow.scaling.log_scale[i];
  }
  MlpCache local;
  Vec sub;
  if (trace) {
    trace->scaled = u;
    trace->caches.resize(flow.couplings.size());
  }
  for (std::size_t l = flow.couplings.size(); l-- > 0;) {
    const auto& layer = flow.couplings[l];
    MlpCache& cache = trace ? trace->caches[l] : local;
    detail::gather(u, layer.pass, sub);
    mlp_forward_into(layer.conditioner, sub, cache);
    const Vec& shift = cache.pre.back();
    for (std::size_t j = 0; j < layer.shifted.size(); ++j) u[layer.shifted[j]] -= shift[j];
    detail::check_finite(u, "inverse coupling layer " + std::to_string(l));
  }
  return u;
}

inline InverseResult flow_inverse(const NiceFlow& flow, std::span<const double> z) {
  InverseResult r;
  Vec v = flow_inverse_traced(flow, z, r.log_det, nullptr);
  r.v = FactorizedCode::split(v, flow.k_labels);
  return r;
}

inline InverseResult flow_inverse(const NiceFlow& flow, const LatentCode& z) {
  return flow_inverse(flow, std::span<const double>(z.z));
}

/// Reverse-mode pass through F^-1 for the scalar dv . v + dlogdet * log_det.
/// Parameter gradients are added into `grads` (shaped like `flow`); returns dz.
inline Vec flow_grad_accumulate(const NiceFlow& flow, const InverseTrace& trace,
                                std::span<const double> dv, double dlogdet, NiceFlow& grads) {
  if (dv.size() != flow.dims) throw ContractViolation("flow_grad: cotangent dimension mismatch");
  if (trace.caches.size() != flow.couplings.size() || trace.scaled.size() != flow.dims)
    throw ContractViolation("flow_grad: trace does not match flow");
  Vec g(dv.begin(), dv.end());
  Vec dshift;
  for (std::size_t l = 0; l < flow.couplings.size(); ++l) {
    const auto& layer = flow.couplings[l];
    // u_l[shifted] = u_{l+1}[shifted] - m(u_{l+1}[pass])
    dshift.resize(layer.shifted.size());
    for (std::size_t j = 0; j < layer.shifted.size(); ++j) dshift[j] = -g[layer.shifted[j]];
    Vec dpass = mlp_backward_accumulate(layer.conditioner, trace.caches[l], dshift,
                                        grads.couplings[l].conditioner);
    for (std::size_t j = 0; j < layer.pass.size(); ++j) g[layer.pass[j]] += dpass[j];
  }
  // scaled = z * exp(-log_scale); log_det = -sum(log_scale)
  Vec dz(flow.dims);
  auto& dls = grads.scaling.log_scale;
  for (std::size_t i = 0; i < flow.dims; ++i) {
    dls[i] += -g[i] * trace.scaled[i] - dlogdet;
    dz[i] = g[i] * std::exp(-flow.scaling.log_scale[i]);
  }
  return dz;
}

struct FlowGradients {
  NiceFlow grads;
  Vec dz;
};

/// Gradients of dv . F^-1(z) + dlogdet * log_det with respect to all flow
/// parameters (and z).
inline FlowGradients flow_grad(const NiceFlow& flow, std::span<const double> z,
                               std::span<const double> dv, double dlogdet) {
  InverseTrace trace;
  double log_det = 0.0;
  flow_inverse_traced(flow, z, log_det, &trace);
  FlowGradients out{flow.zeros_like(), {}};
  out.dz = flow_grad_accumulate(flow, trace, dv, dlogdet, out.grads);
  return out;
}

/// Log-determinant of the forward map F.
inline double forward_log_det(const NiceFlow& flow) {
  double s = 0.0;
  for (double v : flow.scaling.log_scale) s += v;
  return s;
}

using CodeEdits = std::map<std::size_t, double>;

/// Copy of v with the listed label variables replaced.
inline FactorizedCode edit_code(const FactorizedCode& v, const CodeEdits& edits) {
  FactorizedCode out = v;
  for (const auto& [idx, value] : edits) {
    if (idx >= v.c.size())
      throw ContractViolation("edit_code: attribute index " + std::to_string(idx) +
                              " is not a label variable (K = " + std::to_string(v.c.size()) + ")");
    out.c[idx] = value;
  }
  return out;
}

}  // namespace plugen
