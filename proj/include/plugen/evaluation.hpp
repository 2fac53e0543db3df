#pragma once

// Oracle-based evaluation protocols: attribute flips, independent attribute
// sampling (F1/AUC), continuous-attribute distribution shift and the
// disentanglement leakage matrix.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plugen/backbone.hpp"
#include "plugen/error.hpp"
#include "plugen/flow.hpp"
#include "plugen/inference.hpp"
#include "plugen/priors.hpp"

namespace plugen {

/// Ground-truth labeler of observations.
template <class O>
concept FactorOracle = requires(const O& o, const Vec& x, std::size_t i, double t) {
  { o.oracle_factors(x) } -> std::convertible_to<Vec>;
  { o.label_from_factor(i, t) } -> std::convertible_to<double>;
  { o.label_score(i, t) } -> std::convertible_to<double>;
};

/// Oracle for observations produced by a learned decoder: factors come from
/// the least-squares inverse of the synthetic process, so off-range inputs
/// are accepted.
struct ProjectedOracle {
  const SyntheticBackbone* truth;
  Vec oracle_factors(const Vec& x) const { return truth->projected_factors(x); }
  double label_from_factor(std::size_t i, double t) const { return truth->label_from_factor(i, t); }
  double label_score(std::size_t i, double t) const { return truth->label_score(i, t); }
};

// --- binary scores ----------------------------------------------------------

struct BinaryScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.5;
};

/// F1 of predicted against true 0/1 labels; 0 when there are no positives
/// on either side.
inline double f1_score(const std::vector<int>& truth, const std::vector<int>& predicted) {
  require(truth.size() == predicted.size(), "f1_score: size mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] && truth[i]) ++tp;
    else if (predicted[i]) ++fp;
    else if (truth[i]) ++fn;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

/// Area under the ROC curve by the rank-sum method, tied scores sharing
/// their average rank. 0.5 when one class is absent.
inline double auc_score(const std::vector<int>& truth, const std::vector<double>& score) {
  require(truth.size() == score.size(), "auc_score: size mismatch");
  const std::size_t n = truth.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && score[idx[j + 1]] == score[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (truth[i]) {
      pos += 1;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return 0.5;
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

inline BinaryScores binary_scores(const std::vector<int>& truth, const std::vector<int>& predicted,
                                  const std::vector<double>& score) {
  BinaryScores s;
  std::size_t tp = 0, pp = 0, ap = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    tp += truth[i] && predicted[i];
    pp += predicted[i] != 0;
    ap += truth[i] != 0;
  }
  s.precision = pp ? static_cast<double>(tp) / static_cast<double>(pp) : 0.0;
  s.recall = ap ? static_cast<double>(tp) / static_cast<double>(ap) : 0.0;
  s.f1 = f1_score(truth, predicted);
  s.auc = auc_score(truth, score);
  return s;
}

// --- flips -----------------------------------------------------------------

enum class FlipSelection {
  all,       // every example
  opposite,  // examples whose current label differs from the target
  same,      // examples already carrying the target (no-change control)
};

struct FlipResult {
  double rate = 0.0;
  std::size_t count = 0;
};

inline double class_mean(const LabelSpec& spec, int target) { return target ? spec.m1 : spec.m0; }

/// Sets attribute attr to the mean of class `target` on up to n selected
/// held-out examples and returns the fraction whose oracle label of the
/// edited observation equals the target.
template <class B, FactorOracle O>
  requires Decoder<B> && Encoder<B>
FlipResult flip_accuracy(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const B& backbone,
                         const O& oracle, const std::vector<SynthSample>& eval_set, std::size_t attr, int target,
                         std::size_t n, FlipSelection selection = FlipSelection::opposite) {
  require(attr < flow.k_labels, "flip_accuracy: attribute out of range");
  require(specs[attr].kind == LabelKind::binary, "flip_accuracy: attribute is not binary");
  require(target == 0 || target == 1, "flip_accuracy: target must be 0 or 1");
  FlipResult r;
  std::size_t hits = 0;
  for (const auto& ex : eval_set) {
    if (r.count >= n) break;
    const int current = *ex.y[attr] > 0.5 ? 1 : 0;
    if (selection == FlipSelection::opposite && current == target) continue;
    if (selection == FlipSelection::same && current != target) continue;
    const Manipulation m = manipulate(flow, specs, backbone, backbone.encode(ex.x),
                                      EditMap{{attr, EditTarget{class_mean(specs[attr], target), false}}});
    const Vec t = oracle.oracle_factors(m.x);
    hits += oracle.label_from_factor(attr, t[attr]) == static_cast<double>(target);
    ++r.count;
  }
  r.rate = r.count ? static_cast<double>(hits) / static_cast<double>(r.count) : 0.0;
  return r;
}

// --- leakage ----------------------------------------------------------------

using SquareMatrix = std::vector<Vec>;

/// Entry (i, j): mean |change of oracle factor j| when attribute i is moved
/// to the mean of the class opposite to the one read off its current code.
/// With no_edit set, every attribute is rewritten to its current value
/// instead (control run).
template <class B, FactorOracle O>
  requires Decoder<B> && Encoder<B>
SquareMatrix leakage_matrix(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const B& backbone,
                            const O& oracle, const std::vector<SynthSample>& eval_set, std::size_t n,
                            bool no_edit = false) {
  const std::size_t k = flow.k_labels;
  SquareMatrix leak(k, Vec(k, 0.0));
  const std::size_t count = std::min(n, eval_set.size());
  require(count > 0, "leakage_matrix: empty evaluation set");
  for (std::size_t e = 0; e < count; ++e) {
    const Vec z = backbone.encode(eval_set[e].x);
    const Vec t0 = oracle.oracle_factors(backbone.decode(z));
    const FactorizedCode code = flow_inverse(flow, z).v;
    for (std::size_t i = 0; i < k; ++i) {
      require(specs[i].kind == LabelKind::binary, "leakage_matrix: attributes must be binary");
      const double target = no_edit ? code.c[i] : class_mean(specs[i], 1 - classify_label(code.c[i], specs[i]));
      const Manipulation m = manipulate(flow, specs, backbone, z, EditMap{{i, EditTarget{target, false}}});
      const Vec t1 = oracle.oracle_factors(m.x);
      for (std::size_t j = 0; j < k; ++j) leak[i][j] += std::abs(t1[j] - t0[j]);
    }
  }
  for (auto& row : leak)
    for (double& v : row) v /= static_cast<double>(count);
  return leak;
}

struct LeakageSummary {
  double diagonal_min = 0.0;
  double off_diagonal_max = 0.0;
  double off_diagonal_mean = 0.0;
};

inline LeakageSummary summarize_leakage(const SquareMatrix& m) {
  LeakageSummary s;
  s.diagonal_min = std::numeric_limits<double>::infinity();
  double off = 0.0;
  std::size_t n_off = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (i == j) {
        s.diagonal_min = std::min(s.diagonal_min, m[i][j]);
      } else {
        s.off_diagonal_max = std::max(s.off_diagonal_max, m[i][j]);
        off += m[i][j];
        ++n_off;
      }
    }
  s.off_diagonal_mean = n_off ? off / static_cast<double>(n_off) : 0.0;
  return s;
}

// --- independent sampling -------------------------------------------------

struct SamplingOptions {
  Vec sigma_gen;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  bool ignore_condition = false;  // label-blind control: sample every attribute from its marginal
};

/// Requests independent Bernoulli(p_i) labels for every binary attribute,
/// generates one sample per request and scores requested labels against
/// oracle labels (AUC on the signed oracle factor).
template <Decoder B, FactorOracle O>
std::vector<BinaryScores> independent_sampling_scores(const NiceFlow& flow, const std::vector<LabelSpec>& specs,
                                                      const B& backbone, const O& oracle, std::size_t n,
                                                      const SamplingOptions& opt) {
  const std::size_t k = flow.k_labels;
  std::vector<std::vector<int>> truth(k), predicted(k);
  std::vector<Vec> scores(k);
  Rng rng = make_rng(opt.seed, 0x494E4450ULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t e = 0; e < n; ++e) {
    Condition cond(k, kMissing), request(k, kMissing);
    for (std::size_t i = 0; i < k; ++i)
      if (specs[i].kind == LabelKind::binary) request[i] = u(rng) < specs[i].p1 ? 1.0 : 0.0;
    if (!opt.ignore_condition) cond = request;
    const auto samples =
        generate(flow, specs, backbone, cond, 1, GenerateOptions{opt.sigma_gen, opt.temperature, mix_seed(opt.seed, e)});
    const Vec t = oracle.oracle_factors(samples.front().x);
    for (std::size_t i = 0; i < k; ++i) {
      if (!request[i]) continue;
      truth[i].push_back(*request[i] > 0.5);
      predicted[i].push_back(oracle.label_from_factor(i, t[i]) > 0.5);
      scores[i].push_back(oracle.label_score(i, t[i]));
    }
  }
  std::vector<BinaryScores> out(k);
  for (std::size_t i = 0; i < k; ++i)
    if (!truth[i].empty()) out[i] = binary_scores(truth[i], predicted[i], scores[i]);
  return out;
}

// --- continuous attribute shift --------------------------------------------

inline constexpr std::size_t kHistogramBins = 41;
inline constexpr double kHistogramLo = -2.5;
inline constexpr double kHistogramHi = 2.5;

/// Counts over 41 uniform bins on [-2.5, 2.5]; values outside are clamped
/// into the edge bins.
inline std::vector<std::size_t> histogram(const Vec& values) {
  std::vector<std::size_t> bins(kHistogramBins, 0);
  const double width = (kHistogramHi - kHistogramLo) / static_cast<double>(kHistogramBins);
  for (double v : values) {
    auto b = static_cast<long>(std::floor((v - kHistogramLo) / width));
    b = std::clamp<long>(b, 0, static_cast<long>(kHistogramBins) - 1);
    ++bins[static_cast<std::size_t>(b)];
  }
  return bins;
}

struct ShiftSummary {
  double target = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
  std::vector<std::size_t> histogram;
};

/// For each target value of continuous attribute attr, generates n samples
/// conditioned on it (all other attributes from their marginals) and
/// summarizes the oracle factor of attr.
template <Decoder B, FactorOracle O>
std::vector<ShiftSummary> distribution_shift(const NiceFlow& flow, const std::vector<LabelSpec>& specs,
                                             const B& backbone, const O& oracle, std::size_t attr, const Vec& targets,
                                             std::size_t n, const SamplingOptions& opt) {
  require(attr < flow.k_labels, "distribution_shift: attribute out of range");
  if (specs[attr].kind != LabelKind::continuous)
    throw ContractViolation("distribution_shift: attribute " + std::to_string(attr) + " is not continuous");
  require(n >= 1, "distribution_shift: n must be >= 1");
  std::vector<ShiftSummary> out;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    Condition cond(flow.k_labels, kMissing);
    cond[attr] = targets[ti];
    const auto samples = generate(flow, specs, backbone, cond, n,
                                  GenerateOptions{opt.sigma_gen, opt.temperature, mix_seed(opt.seed, 100 + ti)});
    Vec values;
    for (const auto& s : samples) values.push_back(oracle.oracle_factors(s.x)[attr]);
    ShiftSummary sum;
    sum.target = targets[ti];
    sum.n = values.size();
    double acc = 0.0;
    for (double v : values) acc += v;
    sum.mean = acc / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - sum.mean) * (v - sum.mean);
    sum.sd = values.size() > 1 ? std::sqrt(sq / static_cast<double>(values.size() - 1)) : 0.0;
    sum.histogram = histogram(values);
    out.push_back(std::move(sum));
  }
  return out;
}

// --- report -----------------------------------------------------------------

struct FlipSummary {
  double to_zero = 0.0;
  double to_one = 0.0;
  double control = 0.0;
  double mean() const { return 0.5 * (to_zero + to_one); }
};

struct EvalReport {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  Vec sigma_gen;
  std::vector<int> binary_attrs;
  std::vector<FlipSummary> flips;          // per binary attribute
  std::vector<BinaryScores> independent;   // per attribute (binary entries meaningful)
  SquareMatrix leakage;                    // over binary attributes
  std::vector<std::vector<ShiftSummary>> shifts;  // per continuous attribute
  std::vector<int> continuous_attrs;
};

inline constexpr int kReportSchemaVersion = 1;

inline nlohmann::json to_json(const EvalReport& r) {
  using nlohmann::json;
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["metadata"] = {{"seed", r.seed}, {"n", r.n}, {"sigma_gen", r.sigma_gen}};
  json flips = json::array();
  for (std::size_t i = 0; i < r.flips.size(); ++i)
    flips.push_back({{"attribute", r.binary_attrs[i]},
                     {"to_0", r.flips[i].to_zero},
                     {"to_1", r.flips[i].to_one},
                     {"mean", r.flips[i].mean()},
                     {"no_change_control", r.flips[i].control}});
  j["flip_accuracy"] = flips;
  json indep = json::array();
  for (int a : r.binary_attrs) {
    const auto& s = r.independent.at(static_cast<std::size_t>(a));
    indep.push_back({{"attribute", a}, {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"auc", s.auc}});
  }
  j["independent_sampling"] = indep;
  if (!r.leakage.empty()) {
    const LeakageSummary ls = summarize_leakage(r.leakage);
    Vec diag;
    for (std::size_t i = 0; i < r.leakage.size(); ++i) diag.push_back(r.leakage[i][i]);
    j["leakage"] = {{"attributes", r.binary_attrs},
                    {"matrix", r.leakage},
                    {"diagonal", diag},
                    {"off_diagonal_max", ls.off_diagonal_max},
                    {"off_diagonal_mean", ls.off_diagonal_mean}};
  }
  json shifts = json::array();
  for (std::size_t a = 0; a < r.shifts.size(); ++a) {
    json targets = json::array();
    for (const auto& s : r.shifts[a])
      targets.push_back({{"target", s.target}, {"mean", s.mean}, {"sd", s.sd}, {"n", s.n}, {"histogram", s.histogram}});
    shifts.push_back({{"attribute", r.continuous_attrs[a]},
                      {"histogram_range", {kHistogramLo, kHistogramHi}},
                      {"histogram_bins", kHistogramBins},
                      {"targets", targets}});
  }
  j["distribution_shift"] = shifts;
  return j;
}

struct EvalOptions {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  Vec sigma_gen;
  double temperature = 1.0;
  Vec shift_targets{-0.5, 0.0, 0.5};
};

/// Runs every protocol that applies to the attribute kinds present.
template <class B, FactorOracle O>
  requires Decoder<B> && Encoder<B>
EvalReport evaluate_all(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const B& backbone, const O& oracle,
                        const std::vector<SynthSample>& eval_set, const EvalOptions& opt) {
  EvalReport r;
  r.seed = opt.seed;
  r.n = opt.n;
  r.sigma_gen = opt.sigma_gen;
  for (std::size_t i = 0; i < specs.size(); ++i)
    (specs[i].kind == LabelKind::binary ? r.binary_attrs : r.continuous_attrs).push_back(static_cast<int>(i));
  for (int a : r.binary_attrs) {
    const auto attr = static_cast<std::size_t>(a);
    FlipSummary f;
    f.to_zero = flip_accuracy(flow, specs, backbone, oracle, eval_set, attr, 0, opt.n).rate;
    f.to_one = flip_accuracy(flow, specs, backbone, oracle, eval_set, attr, 1, opt.n).rate;
    const double c0 = flip_accuracy(flow, specs, backbone, oracle, eval_set, attr, 0, opt.n, FlipSelection::same).rate;
    const double c1 = flip_accuracy(flow, specs, backbone, oracle, eval_set, attr, 1, opt.n, FlipSelection::same).rate;
    f.control = 0.5 * (c0 + c1);
    r.flips.push_back(f);
  }
  const SamplingOptions so{opt.sigma_gen, opt.temperature, opt.seed, false};
  if (!r.binary_attrs.empty()) {
    r.independent = independent_sampling_scores(flow, specs, backbone, oracle, opt.n, so);
    if (r.binary_attrs.size() == specs.size())
      r.leakage = leakage_matrix(flow, specs, backbone, oracle, eval_set, opt.n);
  } else {
    r.independent.assign(specs.size(), BinaryScores{});
  }
  for (int a : r.continuous_attrs)
    r.shifts.push_back(
        distribution_shift(flow, specs, backbone, oracle, static_cast<std::size_t>(a), opt.shift_targets, opt.n, so));
  return r;
}

}  // namespace plugen
