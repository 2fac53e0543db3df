#pragma once

// Negative log-likelihood of latent codes under the factorized prior, and
// the mini-batch Adam loop that fits the flow to a frozen backbone's codes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "plugen/error.hpp"
#include "plugen/flow.hpp"
#include "plugen/numerics.hpp"
#include "plugen/priors.hpp"

namespace plugen {

struct LatentDataset {
  std::size_t dims = 0;
  std::size_t k_labels = 0;
  std::vector<LabelKind> kinds;
  std::vector<Vec> latents;
  std::vector<LabelVector> labels;

  std::size_t size() const { return latents.size(); }

  void validate() const {
    if (latents.size() != labels.size())
      throw DimensionError("dataset: " + std::to_string(latents.size()) + " latents but " +
                           std::to_string(labels.size()) + " label rows");
    if (kinds.size() != k_labels) throw DimensionError("dataset: attribute kind count != K");
    for (std::size_t i = 0; i < latents.size(); ++i) {
      if (latents[i].size() != dims)
        throw DimensionError("dataset: latent " + std::to_string(i) + " has wrong dimension");
      if (labels[i].size() != k_labels)
        throw DimensionError("dataset: label row " + std::to_string(i) + " has wrong length");
    }
    for (std::size_t k = 0; k < k_labels; ++k) {
      bool seen = false;
      for (const auto& row : labels) {
        const Label& y = row[k];
        if (!y) continue;
        seen = true;
        if (kinds[k] == LabelKind::binary && *y != 0.0 && *y != 1.0)
          throw SchemaError("dataset: binary attribute " + std::to_string(k) + " holds a non 0/1 value");
        if (kinds[k] == LabelKind::continuous && (*y < -1.0 || *y > 1.0))
          throw SchemaError("dataset: continuous attribute " + std::to_string(k) + " outside [-1, 1]");
      }
      if (!seen && !latents.empty())
        throw SchemaError("dataset: attribute " + std::to_string(k) + " has no observed labels");
    }
  }
};

/// Estimates class proportions (missing entries excluded) and the kernel
/// density support of continuous attributes. At most `kde_points` evenly
/// strided observations are kept per continuous attribute.
inline std::vector<LabelSpec> fit_label_specs(const LatentDataset& data, bool imbalance_scaling = true,
                                              std::size_t kde_points = 512) {
  std::vector<LabelSpec> specs;
  for (std::size_t k = 0; k < data.k_labels; ++k) {
    if (data.kinds[k] == LabelKind::binary) {
      std::int64_t n0 = 0, n1 = 0;
      for (const auto& row : data.labels)
        if (row[k]) (*row[k] > 0.5 ? n1 : n0)++;
      if (n0 + n1 == 0) throw SchemaError("attribute " + std::to_string(k) + " has no observed labels");
      LabelSpec s = LabelSpec::binary_from_counts(n0, n1);
      s.imbalance_scaling = imbalance_scaling;
      specs.push_back(s);
    } else {
      Vec observed;
      for (const auto& row : data.labels)
        if (row[k]) observed.push_back(*row[k]);
      if (observed.empty()) throw SchemaError("attribute " + std::to_string(k) + " has no observed labels");
      Vec support;
      const std::size_t stride = std::max<std::size_t>(1, (observed.size() + kde_points - 1) / kde_points);
      for (std::size_t i = 0; i < observed.size(); i += stride) support.push_back(observed[i]);
      specs.push_back(LabelSpec::continuous(std::move(support)));
    }
  }
  return specs;
}

struct TrainConfig {
  std::uint64_t epochs = 50;
  std::size_t batch_size = 256;
  double learning_rate = 1e-4;
  SigmaSchedule schedule{0.7, 0.99, 0.05};
  SigmaSchedule continuous_schedule{1.0, 0.9, 0.05};
  std::uint64_t seed = 0;
  bool shuffle = true;
  // Initialize the scaling layer to the per-coordinate spread of the data.
  bool whiten = false;

  void validate() const {
    require(epochs >= 1, "train: epochs must be >= 1");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(learning_rate > 0.0, "train: learning_rate must be positive");
    schedule.validate();
    continuous_schedule.validate();
  }
};

/// Per-attribute sigma at a given epoch.
inline Vec sigmas_at(const std::vector<LabelSpec>& specs, const TrainConfig& cfg, std::uint64_t epoch) {
  Vec out;
  for (const auto& s : specs)
    out.push_back(sigma_at(s.kind == LabelKind::binary ? cfg.schedule : cfg.continuous_schedule, epoch));
  return out;
}

namespace detail {

struct NllWorkspace {
  InverseTrace trace;
  Vec dv;
};

/// Loss of a single example; adds scale * gradient into grads when given.
inline double example_nll(const NiceFlow& flow, const std::vector<LabelSpec>& specs,
                          std::span<const double> z, const LabelVector& y, std::span<const double> sigmas,
                          NiceFlow* grads, double scale, NllWorkspace& ws) {
  double log_det = 0.0;
  Vec v = flow_inverse_traced(flow, z, log_det, grads ? &ws.trace : nullptr);
  const std::size_t k = flow.k_labels;
  double loss = -log_det;
  ws.dv.assign(flow.dims, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const LogDensity d = label_logpdf_grad(v[i], y[i], specs[i], sigmas[i]);
    loss -= d.value;
    ws.dv[i] = -d.dc * scale;
  }
  loss -= style_logpdf(std::span<const double>(v).subspan(k));
  for (std::size_t j = k; j < flow.dims; ++j) ws.dv[j] = v[j] * scale;
  if (grads) flow_grad_accumulate(flow, ws.trace, ws.dv, -scale, *grads);
  return loss;
}

}  // namespace detail

struct LossResult {
  double loss = 0.0;
  NiceFlow grads;
};

inline void check_dims(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const LatentDataset& data,
                       std::span<const double> sigmas) {
  if (data.dims != flow.dims || data.k_labels != flow.k_labels)
    throw DimensionError("dataset (N=" + std::to_string(data.dims) + ", K=" + std::to_string(data.k_labels) +
                         ") does not match flow (N=" + std::to_string(flow.dims) +
                         ", K=" + std::to_string(flow.k_labels) + ")");
  if (specs.size() != flow.k_labels) throw DimensionError("label spec count != K");
  if (sigmas.size() != flow.k_labels) throw DimensionError("sigma count != K");
}

/// Mean NLL over the examples in `batch` and its exact gradient.
inline LossResult nll_loss(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const LatentDataset& data,
                           std::span<const std::size_t> batch, std::span<const double> sigmas) {
  require(!batch.empty(), "nll_loss: empty batch");
  check_dims(flow, specs, data, sigmas);
  LossResult r{0.0, flow.zeros_like()};
  detail::NllWorkspace ws;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t idx : batch) {
    const double l = detail::example_nll(flow, specs, data.latents[idx], data.labels[idx], sigmas, &r.grads,
                                         scale, ws);
    if (!std::isfinite(l)) throw TrainingError("nll_loss: non-finite loss at example " + std::to_string(idx));
    r.loss += l;
  }
  r.loss *= scale;
  return r;
}

inline LossResult nll_loss(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const LatentDataset& data,
                           std::span<const std::size_t> batch, double sigma_t) {
  return nll_loss(flow, specs, data, batch, Vec(flow.k_labels, sigma_t));
}

/// Mean NLL over the whole dataset, without gradients.
inline double evaluate_nll(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const LatentDataset& data,
                           std::span<const double> sigmas) {
  require(data.size() > 0, "evaluate_nll: empty dataset");
  check_dims(flow, specs, data, sigmas);
  detail::NllWorkspace ws;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double l = detail::example_nll(flow, specs, data.latents[i], data.labels[i], sigmas, nullptr, 1.0, ws);
    if (!std::isfinite(l)) throw TrainingError("evaluate_nll: non-finite loss at example " + std::to_string(i));
    total += l;
  }
  return total / static_cast<double>(data.size());
}

inline double evaluate_nll(const NiceFlow& flow, const std::vector<LabelSpec>& specs, const LatentDataset& data,
                           double sigma) {
  return evaluate_nll(flow, specs, data, Vec(flow.k_labels, sigma));
}

struct EpochRecord {
  std::uint64_t epoch = 0;
  double sigma_t = 0.0;  // binary schedule value
  double mean_nll = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  NiceFlow flow;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&, const NiceFlow&)>;

/// Shuffled mini-batch Adam on the mean NLL. Sigma is recomputed once per
/// epoch; the recorded mean NLL is the size-weighted mean of that epoch's
/// batch losses. Only latent codes are consumed, so the backbone stays frozen.
inline TrainResult train(NiceFlow flow, const std::vector<LabelSpec>& specs, const LatentDataset& data,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  data.validate();
  require(data.size() > 0, "train: empty dataset");
  check_dims(flow, specs, data, Vec(flow.k_labels, 1.0));

  if (cfg.whiten) {
    for (std::size_t d = 0; d < data.dims; ++d) {
      double mean = 0.0, sq = 0.0;
      for (const auto& z : data.latents) mean += z[d];
      mean /= static_cast<double>(data.size());
      for (const auto& z : data.latents) sq += (z[d] - mean) * (z[d] - mean);
      const double sd = std::sqrt(sq / static_cast<double>(data.size()));
      flow.scaling.log_scale[d] = sd > 0.0 ? std::log(sd) : 0.0;
    }
    flow.scaling.clamp();
  }

  AdamState adam(flow.param_count(), AdamHyper{cfg.learning_rate, 0.9, 0.999, 1e-8});
  Vec params = flow.flatten();
  std::vector<std::size_t> order(data.size());
  TrainResult result;

  for (std::uint64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Vec sigmas = sigmas_at(specs, cfg, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) {
      Rng stream = make_rng(cfg.seed, 0x5348554646000000ULL + epoch);
      std::shuffle(order.begin(), order.end(), stream);
    }
    double weighted = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> batch(order.data() + start, stop - start);
      LossResult lr;
      try {
        lr = nll_loss(flow, specs, data, batch, sigmas);
      } catch (const Error& e) {
        throw TrainingError("train: divergence at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      weighted += lr.loss * static_cast<double>(batch.size());
      const Vec g = lr.grads.flatten();
      adam_step(params, g, adam);
      flow.assign(params);
      flow.scaling.clamp();
      std::copy(flow.scaling.log_scale.begin(), flow.scaling.log_scale.end(),
                params.end() - static_cast<std::ptrdiff_t>(flow.dims));
    }
    EpochRecord rec{epoch, sigma_at(cfg.schedule, epoch), weighted / static_cast<double>(data.size())};
    if (!std::isfinite(rec.mean_nll))
      throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec, flow);
  }
  result.flow = std::move(flow);
  return result;
}

}  // namespace plugen
