#pragma once

// One-dimensional densities of the factorized prior: the two-Gaussian
// conditional for binary labels (with imbalance scaling), the Gaussian for
// continuous labels, the marginals used for missing labels, the standard
// normal style prior and the sigma annealing schedule.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "plugen/error.hpp"
#include "plugen/numerics.hpp"

namespace plugen {

enum class LabelKind { binary, continuous };

inline const char* label_kind_name(LabelKind k) { return k == LabelKind::binary ? "binary" : "continuous"; }

/// A single label entry: 0/1 for binary attributes, a real in [-1, 1] for
/// continuous ones, std::nullopt for a missing value.
using Label = std::optional<double>;
using LabelVector = std::vector<Label>;
inline constexpr Label kMissing = std::nullopt;

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

inline double log_normal_pdf(double x, double mean, double sd) {
  const double d = (x - mean) / sd;
  return -kHalfLog2Pi - std::log(sd) - 0.5 * d * d;
}

/// Exact rational number with int64 parts, used for the weighting identity.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational make(std::int64_t n, std::int64_t d) {
    require(d != 0, "rational: zero denominator");
    if (d < 0) n = -n, d = -d;
    const std::int64_t g = std::gcd(n, d);
    return g == 0 ? Rational{0, 1} : Rational{n / g, d / g};
  }
  friend Rational operator*(Rational a, Rational b) {
    const Rational x = make(a.num, b.den), y = make(b.num, a.den);
    return make(x.num * y.num, x.den * y.den);
  }
  friend Rational operator+(Rational a, Rational b) {
    const std::int64_t l = std::lcm(a.den, b.den);
    return make(a.num * (l / a.den) + b.num * (l / b.den), l);
  }
  bool operator==(const Rational&) const = default;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Per-attribute prior parameters.
struct LabelSpec {
  LabelKind kind = LabelKind::binary;
  double m0 = -1.0;
  double m1 = 1.0;
  double p0 = 0.5;
  double p1 = 0.5;
  // Class counts the proportions were estimated from (0 when set by hand).
  std::int64_t n0 = 0;
  std::int64_t n1 = 0;
  // sigma_y = sigma_t * sqrt(2 p_y) when on; sigma_y = sigma_t when off.
  bool imbalance_scaling = true;
  // Observed labels of a continuous attribute; the marginal of a missing
  // continuous label is the kernel density estimate over these points.
  Vec kde_support;

  static LabelSpec binary(double p1 = 0.5) {
    LabelSpec s;
    s.p1 = p1;
    s.p0 = 1.0 - p1;
    return s;
  }
  static LabelSpec binary_from_counts(std::int64_t n0, std::int64_t n1) {
    require(n0 >= 0 && n1 >= 0 && n0 + n1 > 0, "label spec: invalid class counts");
    LabelSpec s;
    s.n0 = n0;
    s.n1 = n1;
    s.p1 = static_cast<double>(n1) / static_cast<double>(n0 + n1);
    s.p0 = static_cast<double>(n0) / static_cast<double>(n0 + n1);
    return s;
  }
  static LabelSpec continuous(Vec support = {}) {
    LabelSpec s;
    s.kind = LabelKind::continuous;
    s.kde_support = std::move(support);
    return s;
  }

  void validate() const {
    if (kind == LabelKind::binary) {
      require(m0 < m1, "label spec: need m0 < m1");
      require(p0 >= 0.0 && p1 >= 0.0 && std::abs(p0 + p1 - 1.0) <= 1e-12,
              "label spec: class proportions must sum to 1");
    }
  }
};

struct SigmaSchedule {
  double sigma0 = 0.7;
  double gamma = 0.99;
  double sigma_min = 0.05;

  void validate() const {
    require(sigma0 > 0.0, "sigma schedule: sigma0 must be positive");
    require(gamma > 0.0 && gamma <= 1.0, "sigma schedule: gamma must be in (0, 1]");
    require(sigma_min > 0.0, "sigma schedule: sigma_min must be positive");
  }
};

/// max(sigma0 * gamma^epoch, sigma_min)
inline double sigma_at(const SigmaSchedule& s, std::uint64_t epoch) {
  return std::max(s.sigma0 * std::pow(s.gamma, static_cast<double>(epoch)), s.sigma_min);
}

/// Imbalance weighting factor 1 / (2 p) as an exact rational, p = n_class / n_total.
inline Rational weighting_factor(std::int64_t n_class, std::int64_t n_total) {
  return Rational::make(n_total, 2 * n_class);
}

/// p1 * lambda1 + p0 * lambda0, computed exactly from class counts.
inline Rational expected_weighting(std::int64_t n0, std::int64_t n1) {
  const std::int64_t n = n0 + n1;
  return Rational::make(n1, n) * weighting_factor(n1, n) + Rational::make(n0, n) * weighting_factor(n0, n);
}

inline double class_sigma(const LabelSpec& spec, int y, double sigma_t) {
  if (spec.kind != LabelKind::binary) throw ContractViolation("class_sigma: attribute is not binary");
  require(sigma_t > 0.0, "class_sigma: sigma must be positive");
  require(y == 0 || y == 1, "class_sigma: binary label must be 0 or 1");
  if (!spec.imbalance_scaling) return sigma_t;
  return sigma_t * std::sqrt(2.0 * (y == 1 ? spec.p1 : spec.p0));
}

inline double binary_cond_logpdf(double c, int y, const LabelSpec& spec, double sigma_t) {
  if (!(sigma_t > 0.0)) throw ContractViolation("binary_cond_logpdf: sigma must be positive");
  return log_normal_pdf(c, y == 1 ? spec.m1 : spec.m0, class_sigma(spec, y, sigma_t));
}

inline double continuous_cond_logpdf(double c, double y, double sigma) {
  if (!(sigma > 0.0)) throw ContractViolation("continuous_cond_logpdf: sigma must be positive");
  return log_normal_pdf(c, y, sigma);
}

/// Value and derivative with respect to c of a 1-d log density.
struct LogDensity {
  double value = 0.0;
  double dc = 0.0;
};

namespace detail {

/// log sum_k w_k N(c; mean_k, sd_k) and its c-derivative; zero-weight
/// components are skipped.
inline LogDensity log_mixture(double c, std::span<const double> weights, std::span<const double> means,
                              std::span<const double> sds) {
  double best = -std::numeric_limits<double>::infinity();
  thread_local Vec terms;
  terms.assign(weights.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    terms[k] = std::log(weights[k]) + log_normal_pdf(c, means[k], sds[k]);
    best = std::max(best, terms[k]);
  }
  if (!std::isfinite(best)) throw NumericError("mixture log density underflow");
  double total = 0.0, dnum = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    const double r = std::exp(terms[k] - best);
    total += r;
    dnum += r * (means[k] - c) / (sds[k] * sds[k]);
  }
  return {best + std::log(total), dnum / total};
}

}  // namespace detail

inline LogDensity marginal_logpdf_grad(double c, const LabelSpec& spec, double sigma_t) {
  if (!(sigma_t > 0.0)) throw ContractViolation("marginal_logpdf: sigma must be positive");
  if (spec.kind == LabelKind::binary) {
    const double w[2] = {spec.p0, spec.p1};
    const double m[2] = {spec.m0, spec.m1};
    const double sd[2] = {spec.p0 > 0.0 ? class_sigma(spec, 0, sigma_t) : sigma_t,
                          spec.p1 > 0.0 ? class_sigma(spec, 1, sigma_t) : sigma_t};
    return detail::log_mixture(c, w, m, sd);
  }
  if (spec.kde_support.empty())
    throw ContractViolation("marginal_logpdf: continuous attribute has no density support");
  const std::size_t n = spec.kde_support.size();
  thread_local Vec w, sd;
  w.assign(n, 1.0 / static_cast<double>(n));
  sd.assign(n, sigma_t);
  return detail::log_mixture(c, w, spec.kde_support, sd);
}

/// Log density of a missing label: p0 N(m0, sigma0) + p1 N(m1, sigma1) for
/// binary attributes, a kernel density estimate over observed labels for
/// continuous ones.
inline double marginal_logpdf(double c, const LabelSpec& spec, double sigma_t) {
  return marginal_logpdf_grad(c, spec, sigma_t).value;
}

/// Log density of label variable c under its (possibly missing) label.
inline LogDensity label_logpdf_grad(double c, const Label& y, const LabelSpec& spec, double sigma_t) {
  if (!y) return marginal_logpdf_grad(c, spec, sigma_t);
  if (spec.kind == LabelKind::binary) {
    const int cls = *y > 0.5 ? 1 : 0;
    const double sd = class_sigma(spec, cls, sigma_t);
    const double mean = cls ? spec.m1 : spec.m0;
    return {log_normal_pdf(c, mean, sd), (mean - c) / (sd * sd)};
  }
  return {continuous_cond_logpdf(c, *y, sigma_t), (*y - c) / (sigma_t * sigma_t)};
}

inline double style_logpdf(std::span<const double> s) {
  double acc = 0.0;
  for (double v : s) acc += -kHalfLog2Pi - 0.5 * v * v;
  return acc;
}

/// Draw a label variable from its conditional, or from the marginal when the
/// label is missing.
inline double sample_label(const Label& y, const LabelSpec& spec, double sigma_t, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  if (spec.kind == LabelKind::binary) {
    int cls = 0;
    if (y) {
      cls = *y > 0.5 ? 1 : 0;
    } else {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      cls = u(rng) < spec.p1 ? 1 : 0;
    }
    const double mean = cls ? spec.m1 : spec.m0;
    return mean + class_sigma(spec, cls, sigma_t) * normal(rng);
  }
  if (y) return *y + sigma_t * normal(rng);
  if (spec.kde_support.empty())
    throw ContractViolation("sample_label: continuous attribute has no density support");
  std::uniform_int_distribution<std::size_t> pick(0, spec.kde_support.size() - 1);
  const double centre = spec.kde_support[pick(rng)];
  return centre + sigma_t * normal(rng);
}

/// Nearest-mean class; exact ties go to class 0.
inline int classify_label(double c, const LabelSpec& spec) {
  if (spec.kind != LabelKind::binary) throw ContractViolation("classify_label: attribute is not binary");
  return std::abs(c - spec.m1) < std::abs(c - spec.m0) ? 1 : 0;
}

}  // namespace plugen
