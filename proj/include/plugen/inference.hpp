#pragma once

// Conditional generation x = G(F(c, s)) and attribute manipulation of
// existing codes via (c, s) = F^-1(z).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "plugen/backbone.hpp"
#include "plugen/error.hpp"
#include "plugen/flow.hpp"
#include "plugen/priors.hpp"

namespace plugen {

/// Per-attribute generation condition: a fixed label value, or std::nullopt
/// to sample the attribute from its marginal.
using Condition = std::vector<Label>;

struct Sample {
  Vec x;
  Vec z;
  Vec c;
  Vec s;
};

inline void check_condition(const Condition& cond, const std::vector<LabelSpec>& specs) {
  if (cond.size() != specs.size())
    throw ContractViolation("condition has " + std::to_string(cond.size()) + " entries, expected " +
                            std::to_string(specs.size()));
  for (std::size_t i = 0; i < cond.size(); ++i) {
    if (!cond[i]) continue;
    if (specs[i].kind == LabelKind::binary && *cond[i] != 0.0 && *cond[i] != 1.0)
      throw ContractViolation("condition " + std::to_string(i) + ": binary attribute needs 0 or 1");
  }
}

struct GenerateOptions {
  Vec sigma_gen;            // per attribute
  double temperature = 1.0; // style prior standard deviation
  std::uint64_t seed = 0;
};

/// Draws (c, s) from the conditional prior and decodes G(F(c, s)). Sample i
/// uses its own stream derived from (seed, i).
template <Decoder G>
std::vector<Sample> generate(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const G& backbone,
                             const Condition& cond, std::size_t n, const GenerateOptions& opt) {
  check_condition(cond, specs);
  require(specs.size() == flow.k_labels, "generate: label spec count != K");
  require(opt.sigma_gen.size() == flow.k_labels, "generate: sigma_gen needs one entry per attribute");
  for (double s : opt.sigma_gen) require(s > 0.0, "generate: sigma_gen must be positive");
  require(opt.temperature > 0.0, "generate: temperature must be positive");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(opt.seed, i);
    Sample smp;
    smp.c.resize(flow.k_labels);
    for (std::size_t k = 0; k < flow.k_labels; ++k) smp.c[k] = sample_label(cond[k], specs[k], opt.sigma_gen[k], rng);
    std::normal_distribution<double> normal(0.0, opt.temperature);
    smp.s.resize(flow.dims - flow.k_labels);
    for (double& v : smp.s) v = normal(rng);
    FactorizedCode code{smp.c, smp.s};
    smp.z = flow_forward(flow, code).z;
    smp.x = backbone.decode(smp.z);
    out.push_back(std::move(smp));
  }
  return out;
}

/// Target for one attribute: an absolute value in D-space, or an offset from
/// the current value.
struct EditTarget {
  double value = 0.0;
  bool relative = false;
};

using EditMap = std::map<std::size_t, EditTarget>;

struct Manipulation {
  Vec x;
  Vec z;
  FactorizedCode before;
  FactorizedCode after;
  std::vector<std::string> warnings;
};

/// Resolves relative edits against the current code and collects warnings
/// for continuous targets outside [-1, 1].
inline CodeEdits resolve_edits(const FactorizedCode& v, const EditMap& edits, const std::vector<LabelSpec>& specs,
                               std::vector<std::string>* warnings) {
  CodeEdits out;
  for (const auto& [idx, target] : edits) {
    if (idx >= v.c.size())
      throw ContractViolation("edit index " + std::to_string(idx) + " out of range (K = " +
                              std::to_string(v.c.size()) + ")");
    const double value = target.relative ? v.c[idx] + target.value : target.value;
    if (warnings && idx < specs.size() && specs[idx].kind == LabelKind::continuous && (value < -1.0 || value > 1.0))
      warnings->push_back("attribute " + std::to_string(idx) + ": target " + std::to_string(value) +
                          " extrapolates beyond [-1, 1]");
    out[idx] = value;
  }
  return out;
}

/// Edits the label variables of latent code z. Labels of the input are never
/// consulted; current attribute values are read off F^-1(z).
template <Decoder G>
Manipulation manipulate(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const G& backbone, const Vec& z,
                        const EditMap& edits) {
  Manipulation m;
  m.before = flow_inverse(flow, z).v;
  m.after = edit_code(m.before, resolve_edits(m.before, edits, specs, &m.warnings));
  m.z = flow_forward(flow, m.after).z;
  m.x = backbone.decode(m.z);
  return m;
}

/// Observation input with an exact encoder.
template <class B>
  requires Decoder<B> && Encoder<B>
Manipulation manipulate_observation(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const B& backbone,
                                    const Vec& x, const EditMap& edits) {
  return manipulate(flow, specs, backbone, backbone.encode(x), edits);
}

/// Observation input for a decoder-only backbone: z is found by latent recovery.
template <DifferentiableDecoder G>
Manipulation manipulate_recovered(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const G& backbone,
                                  const Vec& x, const EditMap& edits, const RecoveryConfig& rc = {}) {
  const RecoveryResult r = latent_recover(backbone, x, flow.dims, rc);
  return manipulate(flow, specs, backbone, r.z, edits);
}

struct InterpolationPoint {
  double value = 0.0;
  Manipulation result;
};

/// Sets c[attr] to `steps` evenly spaced values from `from` to `to`, holding
/// all other coordinates fixed. The last value is exactly `to`.
template <Decoder G>
std::vector<InterpolationPoint> interpolate(const NiceFlow& flow, const std::vector<LabelSpec>& specs,
                                            const G& backbone, const Vec& z, std::size_t attr, double from, double to,
                                            std::size_t steps) {
  require(steps >= 2, "interpolate: steps must be >= 2");
  require(attr < flow.k_labels, "interpolate: attribute index out of range");
  std::vector<InterpolationPoint> out;
  for (std::size_t j = 0; j < steps; ++j) {
    const double value =
        j + 1 == steps ? to : from + (to - from) * static_cast<double>(j) / static_cast<double>(steps - 1);
    out.push_back({value, manipulate(flow, specs, backbone, z, EditMap{{attr, EditTarget{value, false}}})});
  }
  return out;
}

}  // namespace plugen
