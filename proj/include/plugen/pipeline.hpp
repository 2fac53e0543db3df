#pragma once

// End-to-end commands over files named by a RunConfig:
// make-data -> train-backbone -> encode -> train-plugen -> generate /
// manipulate / interpolate / evaluate.

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plugen/backbone.hpp"
#include "plugen/config.hpp"
#include "plugen/evaluation.hpp"
#include "plugen/gradcheck.hpp"
#include "plugen/inference.hpp"
#include "plugen/io.hpp"
#include "plugen/training.hpp"

namespace plugen {

namespace detail {

inline void ensure_parent(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

inline std::vector<SynthSample> read_observations(const std::filesystem::path& p) {
  auto is = open_in(p);
  return read_observation_csv(is);
}

/// Calls f(backbone, oracle) with the concrete backbone of a checkpoint.
template <class F>
decltype(auto) with_backbone(const BackboneCheckpoint& ck, F&& f) {
  SyntheticBackbone truth(ck.synthetic);
  if (ck.kind == "autoencoder") return f(ck.ae, ProjectedOracle{&truth});
  return f(truth, truth);
}

}  // namespace detail

inline void cmd_make_data(const RunConfig& cfg) {
  const SyntheticBackbone bk(cfg.backbone.synthetic);
  const auto& s = bk.config();
  const auto train = synth_generate(bk, cfg.backbone.n_train, cfg.backbone.data_seed);
  const auto eval = synth_generate(bk, cfg.backbone.n_eval, cfg.backbone.eval_seed);
  for (auto [path, set] : {std::pair{cfg.paths.data_file(), &train}, std::pair{cfg.paths.eval_file(), &eval}}) {
    detail::ensure_parent(path);
    auto os = detail::open_out(path);
    write_observation_csv(os, *set, s.obs_dims, s.dims, s.k_labels);
  }
}

/// The synthetic backbone is fixed by its configuration; the autoencoder is
/// fitted to the training observations.
inline std::vector<double> cmd_train_backbone(const RunConfig& cfg) {
  const auto path = cfg.paths.backbone_file();
  detail::ensure_parent(path);
  const auto& s = cfg.backbone.synthetic;
  SyntheticConfig truth = SyntheticBackbone(s).config();
  if (cfg.backbone.kind == "synthetic") {
    save_synthetic(path, truth);
    return {};
  }
  const auto samples = detail::read_observations(cfg.paths.data_file());
  std::vector<Vec> xs;
  for (const auto& smp : samples) {
    if (smp.x.size() != truth.obs_dims) throw DimensionError("train-backbone: observation width != obs_dims");
    xs.push_back(smp.x);
  }
  ToyAutoencoder ae = ToyAutoencoder::create(truth.obs_dims, truth.dims, cfg.backbone.autoencoder);
  AeTrainResult r = ae_train(std::move(ae), xs, cfg.backbone.autoencoder);
  save_autoencoder(path, r.ae, truth);
  return r.history;
}

inline LatentDataset cmd_encode(const RunConfig& cfg) {
  const BackboneCheckpoint ck = load_backbone(cfg.paths.backbone_file());
  const auto samples = detail::read_observations(cfg.paths.data_file());
  for (const auto& smp : samples)
    if (smp.y.size() != ck.synthetic.k_labels) throw DimensionError("encode: label columns != k_labels");
  LatentDataset data = detail::with_backbone(ck, [&](const auto& bk, const auto&) {
    return make_latent_dataset(bk, samples, ck.synthetic.kinds, ck.synthetic.dims, cfg.backbone.label_coverage,
                               cfg.backbone.data_seed);
  });
  const auto path = cfg.paths.latents_file();
  detail::ensure_parent(path);
  auto os = detail::open_out(path);
  write_latent_csv(os, data);
  return data;
}

inline LatentDataset load_latents(const RunConfig& cfg, const std::vector<LabelKind>& kinds) {
  auto is = detail::open_in(cfg.paths.latents_file());
  return read_latent_csv(is, kinds);
}

/// Label priors fitted to the data, with the configured class means.
inline std::vector<LabelSpec> configured_specs(const RunConfig& cfg, const LatentDataset& data) {
  auto specs = fit_label_specs(data, cfg.prior.imbalance_scaling);
  for (auto& s : specs) {
    s.m0 = cfg.prior.m0;
    s.m1 = cfg.prior.m1;
  }
  return specs;
}

inline TrainResult cmd_train_plugen(const RunConfig& cfg) {
  const BackboneCheckpoint ck = load_backbone(cfg.paths.backbone_file());
  if (ck.synthetic.dims != cfg.backbone.synthetic.dims || ck.synthetic.k_labels != cfg.backbone.synthetic.k_labels)
    throw DimensionError("train-plugen: backbone checkpoint dimensions differ from config");
  const LatentDataset data = load_latents(cfg, ck.synthetic.kinds);
  if (data.dims != cfg.backbone.synthetic.dims)
    throw DimensionError("train-plugen: latent width " + std::to_string(data.dims) + " != dims " +
                         std::to_string(cfg.backbone.synthetic.dims));
  const auto specs = configured_specs(cfg, data);
  Rng rng = make_rng(cfg.flow.seed, 0x464C4F57ULL);
  NiceFlow flow = NiceFlow::create(cfg.flow_arch(), rng);
  TrainResult r = train(std::move(flow), specs, data, cfg.training);
  quantize_to_float(r.flow);

  FlowCheckpoint out{r.flow, specs, sigmas_at(specs, cfg.training, cfg.training.epochs - 1)};
  if (cfg.generation.sigma_gen) out.sigma_gen.assign(specs.size(), *cfg.generation.sigma_gen);
  const auto fpath = cfg.paths.flow_file();
  detail::ensure_parent(fpath);
  save_flow(fpath, out);
  const auto hpath = cfg.paths.history_file();
  detail::ensure_parent(hpath);
  auto hs = detail::open_out(hpath);
  write_history(hs, r.history);
  return r;
}

/// Attribute index/value pairs parsed from "i=v" flags; "i=free" leaves the
/// attribute to its marginal.
inline Condition parse_condition(const std::vector<std::string>& flags, std::size_t k) {
  Condition cond(k, kMissing);
  for (const auto& f : flags) {
    const auto eq = f.find('=');
    if (eq == std::string::npos) throw ContractViolation("condition '" + f + "' must look like index=value");
    const double idx = parse_number(std::string_view(f).substr(0, eq), 0);
    if (idx < 0 || idx != std::floor(idx) || idx >= static_cast<double>(k))
      throw ContractViolation("condition index out of range in '" + f + "'");
    const std::string value = f.substr(eq + 1);
    if (value == "free") continue;
    cond[static_cast<std::size_t>(idx)] = parse_number(value, 0);
  }
  return cond;
}

inline EditMap parse_edits(const std::vector<std::string>& set, const std::vector<std::string>& shift, std::size_t k) {
  EditMap edits;
  auto add = [&](const std::string& f, bool relative) {
    const auto eq = f.find('=');
    if (eq == std::string::npos) throw ContractViolation("edit '" + f + "' must look like index=value");
    const double idx = parse_number(std::string_view(f).substr(0, eq), 0);
    if (idx < 0 || idx != std::floor(idx) || idx >= static_cast<double>(k))
      throw ContractViolation("edit index out of range in '" + f + "'");
    edits[static_cast<std::size_t>(idx)] = EditTarget{parse_number(std::string_view(f).substr(eq + 1), 0), relative};
  };
  for (const auto& f : set) add(f, false);
  for (const auto& f : shift) add(f, true);
  return edits;
}

inline void cmd_generate(const RunConfig& cfg, const Condition& cond, std::size_t n, std::uint64_t seed,
                         std::ostream& os) {
  const FlowCheckpoint fc = load_flow(cfg.paths.flow_file());
  const BackboneCheckpoint ck = load_backbone(cfg.paths.backbone_file());
  if (fc.flow.dims != ck.synthetic.dims) throw DimensionError("generate: flow N != backbone N");
  GenerateOptions opt{fc.sigma_gen, cfg.generation.temperature, seed};
  if (cfg.generation.sigma_gen) opt.sigma_gen.assign(fc.flow.k_labels, *cfg.generation.sigma_gen);
  SampleCsvWriter w{os, {}};
  w.header(ck.synthetic.obs_dims, fc.flow.dims, fc.flow.k_labels);
  detail::with_backbone(ck, [&](const auto& bk, const auto&) {
    for (const auto& s : generate(fc.flow, fc.specs, bk, cond, n, opt)) w.row({}, s.x, s.z, s.c, s.s);
  });
}

struct ManipulateRequest {
  std::optional<std::size_t> row;               // row of the eval set
  std::optional<std::filesystem::path> input;   // observation CSV instead
  EditMap edits;
  bool recover = false;                         // latent recovery instead of the encoder
};

/// Rows "row,phase" (phase before/after) followed by x, z, c, s. Returns
/// the warnings raised by extrapolating edits.
inline std::vector<std::string> cmd_manipulate(const RunConfig& cfg, const ManipulateRequest& req, std::ostream& os) {
  const FlowCheckpoint fc = load_flow(cfg.paths.flow_file());
  const BackboneCheckpoint ck = load_backbone(cfg.paths.backbone_file());
  if (fc.flow.dims != ck.synthetic.dims) throw DimensionError("manipulate: flow N != backbone N");
  std::vector<SynthSample> inputs =
      detail::read_observations(req.input ? *req.input : cfg.paths.eval_file());
  if (req.row) {
    if (*req.row >= inputs.size())
      throw ContractViolation("manipulate: row " + std::to_string(*req.row) + " out of range (" +
                              std::to_string(inputs.size()) + " rows)");
    inputs = {inputs[*req.row]};
  }
  std::vector<std::string> warnings;
  SampleCsvWriter w{os, {"row", "phase"}};
  w.header(ck.synthetic.obs_dims, fc.flow.dims, fc.flow.k_labels);
  detail::with_backbone(ck, [&](const auto& bk, const auto&) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Vec& x = inputs[i].x;
      if (x.size() != ck.synthetic.obs_dims) throw DimensionError("manipulate: observation width != obs_dims");
      const Vec z = req.recover ? latent_recover(bk, x, fc.flow.dims).z : bk.encode(x);
      const Manipulation m = manipulate(fc.flow, fc.specs, bk, z, req.edits);
      const std::string r = std::to_string(req.row ? *req.row : i);
      w.row({r, "before"}, bk.decode(z), z, m.before.c, m.before.s);
      w.row({r, "after"}, m.x, m.z, m.after.c, m.after.s);
      warnings.insert(warnings.end(), m.warnings.begin(), m.warnings.end());
    }
  });
  return warnings;
}

inline void cmd_interpolate(const RunConfig& cfg, std::size_t row, std::size_t attr, double from, double to,
                            std::size_t steps, std::ostream& os) {
  const FlowCheckpoint fc = load_flow(cfg.paths.flow_file());
  const BackboneCheckpoint ck = load_backbone(cfg.paths.backbone_file());
  const auto inputs = detail::read_observations(cfg.paths.eval_file());
  if (row >= inputs.size()) throw ContractViolation("interpolate: row out of range");
  SampleCsvWriter w{os, {"step", "value"}};
  w.header(ck.synthetic.obs_dims, fc.flow.dims, fc.flow.k_labels);
  detail::with_backbone(ck, [&](const auto& bk, const auto&) {
    const auto path = interpolate(fc.flow, fc.specs, bk, bk.encode(inputs[row].x), attr, from, to, steps);
    for (std::size_t j = 0; j < path.size(); ++j) {
      const auto& m = path[j].result;
      w.row({std::to_string(j), format_number(path[j].value)}, m.x, m.z, m.after.c, m.after.s);
    }
  });
}

inline nlohmann::json cmd_evaluate(const RunConfig& cfg) {
  const FlowCheckpoint fc = load_flow(cfg.paths.flow_file());
  const BackboneCheckpoint ck = load_backbone(cfg.paths.backbone_file());
  if (fc.flow.dims != ck.synthetic.dims) throw DimensionError("evaluate: flow N != backbone N");
  const auto eval_set = detail::read_observations(cfg.paths.eval_file());
  EvalOptions opt;
  opt.n = cfg.evaluation.n;
  opt.seed = cfg.evaluation.seed;
  opt.temperature = cfg.evaluation.temperature;
  opt.shift_targets = cfg.evaluation.shift_targets;
  opt.sigma_gen = fc.sigma_gen;
  if (cfg.generation.sigma_gen) opt.sigma_gen.assign(fc.flow.k_labels, *cfg.generation.sigma_gen);
  nlohmann::json report = detail::with_backbone(ck, [&](const auto& bk, const auto& oracle) {
    return to_json(evaluate_all(fc.flow, fc.specs, bk, oracle, eval_set, opt));
  });
  report["metadata"]["backbone"] = ck.kind;
  report["metadata"]["preset"] = cfg.preset;
  const auto path = cfg.paths.report_file();
  detail::ensure_parent(path);
  auto os = detail::open_out(path);
  os << report.dump(2) << '\n';
  return report;
}

inline GradcheckReport cmd_gradcheck(const RunConfig& cfg) { return run_gradchecks(cfg.training.seed); }

}  // namespace plugen
