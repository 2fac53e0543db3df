#pragma once

// Run configuration: one JSON document, unknown keys rejected. Named presets
// carry the published hyperparameter recipes; keys present in the document
// override the preset.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plugen/backbone.hpp"
#include "plugen/error.hpp"
#include "plugen/flow.hpp"
#include "plugen/io.hpp"
#include "plugen/priors.hpp"
#include "plugen/training.hpp"

namespace plugen {

struct BackboneSection {
  std::string kind = "synthetic";  // "synthetic" | "autoencoder"
  SyntheticConfig synthetic;
  AeConfig autoencoder;
  std::size_t n_train = 10000;
  std::size_t n_eval = 2000;
  std::uint64_t data_seed = 11;
  std::uint64_t eval_seed = 99;
  double label_coverage = 1.0;
};

struct FlowSection {
  std::optional<std::size_t> dims;  // must equal backbone dims when given
  std::size_t couplings = 4;
  std::size_t depth = 4;
  std::size_t width = 256;
  std::uint64_t seed = 3;
};

struct PriorSection {
  bool imbalance_scaling = true;
  double m0 = -1.0;
  double m1 = 1.0;
};

struct EvalSection {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  Vec shift_targets{-0.5, 0.0, 0.5};
};

struct GenerationSection {
  std::optional<double> sigma_gen;  // default: final training sigma per attribute
  double temperature = 1.0;
};

struct PathSection {
  std::filesystem::path dir = "plugen_out";
  std::optional<std::filesystem::path> data, eval_data, latents, backbone, flow, history, report;

  std::filesystem::path resolve(const std::optional<std::filesystem::path>& p, const char* name) const {
    return p ? *p : dir / name;
  }
  std::filesystem::path data_file() const { return resolve(data, "data.csv"); }
  std::filesystem::path eval_file() const { return resolve(eval_data, "eval.csv"); }
  std::filesystem::path latents_file() const { return resolve(latents, "latents.csv"); }
  std::filesystem::path backbone_file() const { return resolve(backbone, "backbone.ckpt"); }
  std::filesystem::path flow_file() const { return resolve(flow, "flow.ckpt"); }
  std::filesystem::path history_file() const { return resolve(history, "history.jsonl"); }
  std::filesystem::path report_file() const { return resolve(report, "report.json"); }
};

struct RunConfig {
  std::string preset;
  BackboneSection backbone;
  FlowSection flow;
  PriorSection prior;
  TrainConfig training;
  EvalSection evaluation;
  GenerationSection generation;
  PathSection paths;

  FlowArch flow_arch() const {
    return {backbone.synthetic.dims, backbone.synthetic.k_labels, flow.couplings, flow.depth, flow.width};
  }

  /// Dimension and range consistency; throws before any work starts.
  void validate() const {
    const auto& s = backbone.synthetic;
    if (backbone.kind != "synthetic" && backbone.kind != "autoencoder")
      throw SchemaError("config: backbone.kind must be 'synthetic' or 'autoencoder'");
    if (s.k_labels < 1 || s.k_labels >= s.dims) throw DimensionError("config: need 1 <= k_labels < dims");
    if (s.obs_dims < s.dims) throw DimensionError("config: obs_dims must be >= dims");
    if (flow.dims && *flow.dims != s.dims)
      throw DimensionError("config: flow dims " + std::to_string(*flow.dims) + " != backbone dims " +
                           std::to_string(s.dims));
    if (!s.kinds.empty() && s.kinds.size() != s.k_labels)
      throw DimensionError("config: attributes list length != k_labels");
    if (!s.positive_rates.empty() && s.positive_rates.size() != s.k_labels)
      throw DimensionError("config: positive_rates length != k_labels");
    for (double p : s.positive_rates)
      if (!(p > 0.0 && p < 1.0)) throw SchemaError("config: positive rates must be in (0, 1)");
    if (!(backbone.label_coverage > 0.0 && backbone.label_coverage <= 1.0))
      throw SchemaError("config: label_coverage must be in (0, 1]");
    if (flow.couplings < 1 || flow.depth < 1 || flow.width < 1) throw SchemaError("config: invalid flow architecture");
    if (!(prior.m0 < prior.m1)) throw SchemaError("config: need m0 < m1");
    try {
      training.validate();
    } catch (const ContractViolation& e) {
      throw SchemaError(std::string("config: ") + e.what());
    }
    if (generation.sigma_gen && !(*generation.sigma_gen > 0.0)) throw SchemaError("config: sigma_gen must be positive");
    if (!(generation.temperature > 0.0) || !(evaluation.temperature > 0.0))
      throw SchemaError("config: temperature must be positive");
    if (backbone.n_train < 1 || backbone.n_eval < 1) throw SchemaError("config: sample counts must be >= 1");
  }
};

/// Published recipes. "default" is the desk-scale configuration.
inline RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  c.backbone.synthetic.kinds.assign(c.backbone.synthetic.k_labels, LabelKind::binary);
  if (name == "default" || name.empty()) {
    c.preset = "default";
    c.flow.width = 32;
    c.training.epochs = 50;
    c.training.batch_size = 128;
    c.training.learning_rate = 5e-4;
  } else if (name == "vae-recipe") {
    c.training.schedule = {0.7, 0.99, 0.05};
    c.training.epochs = 50;
    c.training.learning_rate = 1e-4;
  } else if (name == "stylegan-recipe") {
    c.flow.couplings = 4;
    c.flow.width = 256;
    c.training.schedule = {0.4, 0.999, 0.05};
    c.training.learning_rate = 1e-4;
    c.training.epochs = 1000;
  } else if (name == "chem-recipe") {
    c.flow.couplings = 6;
    c.flow.depth = 6;
    c.flow.width = 256;
    c.training.schedule = {1.0, 0.9, 0.05};
    c.training.continuous_schedule = {1.0, 0.9, 0.05};
    c.training.learning_rate = 1e-4;
    c.training.epochs = 50;
  } else {
    throw SchemaError("config: unknown preset '" + name + "'");
  }
  return c;
}

namespace detail {

/// Walks one JSON object, dispatching known keys and rejecting the rest.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw SchemaError("config: '" + where_ + "' must be an object");
  }

  template <class T>
  ObjectReader& get(const char* key, T& out) {
    seen_.insert(key);
    if (j_.contains(key)) {
      try {
        out = j_.at(key).get<T>();
      } catch (const nlohmann::json::exception&) {
        throw SchemaError("config: '" + where_ + "." + key + "' has the wrong type");
      }
    }
    return *this;
  }

  ObjectReader& sub(const char* key, const std::function<void(const nlohmann::json&, const std::string&)>& f) {
    seen_.insert(key);
    if (j_.contains(key)) f(j_.at(key), where_ + "." + key);
    return *this;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw SchemaError("config: unknown key '" + where_ + "." + k + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void read_schedule(const nlohmann::json& j, const std::string& where, SigmaSchedule& s) {
  ObjectReader(j, where).get("sigma0", s.sigma0).get("gamma", s.gamma).get("sigma_min", s.sigma_min).finish();
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::ObjectReader;
  if (!j.is_object()) throw SchemaError("config: top level must be an object");
  std::string preset = "default";
  if (j.contains("preset")) {
    if (!j.at("preset").is_string()) throw SchemaError("config: 'preset' must be a string");
    preset = j.at("preset").get<std::string>();
  }
  RunConfig c = preset_config(preset);
  std::optional<std::vector<std::string>> attributes;

  ObjectReader top(j, "config");
  top.get("preset", c.preset);
  top.sub("backbone", [&](const nlohmann::json& b, const std::string& w) {
    auto& s = c.backbone.synthetic;
    std::vector<std::string> kinds;
    ObjectReader r(b, w);
    r.get("kind", c.backbone.kind)
        .get("dims", s.dims)
        .get("k_labels", s.k_labels)
        .get("obs_dims", s.obs_dims)
        .get("seed", s.seed)
        .get("positive_rates", s.positive_rates)
        .get("continuous_scale", s.continuous_scale)
        .get("nonlinearity", s.nonlinearity)
        .get("n_train", c.backbone.n_train)
        .get("n_eval", c.backbone.n_eval)
        .get("data_seed", c.backbone.data_seed)
        .get("eval_seed", c.backbone.eval_seed)
        .get("label_coverage", c.backbone.label_coverage);
    if (b.contains("attributes")) {
      r.get("attributes", kinds);
      attributes = kinds;
    } else {
      r.get("attributes", kinds);
    }
    r.sub("autoencoder", [&](const nlohmann::json& a, const std::string& w2) {
      auto& ae = c.backbone.autoencoder;
      ObjectReader(a, w2)
          .get("hidden", ae.hidden)
          .get("depth", ae.depth)
          .get("epochs", ae.epochs)
          .get("batch_size", ae.batch_size)
          .get("learning_rate", ae.learning_rate)
          .get("latent_reg", ae.latent_reg)
          .get("seed", ae.seed)
          .finish();
    });
    r.finish();
  });
  top.sub("flow", [&](const nlohmann::json& f, const std::string& w) {
    std::size_t dims = 0;
    ObjectReader r(f, w);
    r.get("couplings", c.flow.couplings).get("depth", c.flow.depth).get("width", c.flow.width).get("seed", c.flow.seed);
    if (f.contains("dims")) {
      r.get("dims", dims);
      c.flow.dims = dims;
    } else {
      r.get("dims", dims);
    }
    r.finish();
  });
  top.sub("prior", [&](const nlohmann::json& p, const std::string& w) {
    ObjectReader(p, w)
        .get("imbalance_scaling", c.prior.imbalance_scaling)
        .get("m0", c.prior.m0)
        .get("m1", c.prior.m1)
        .sub("binary_schedule",
             [&](const nlohmann::json& s, const std::string& w2) { detail::read_schedule(s, w2, c.training.schedule); })
        .sub("continuous_schedule",
             [&](const nlohmann::json& s, const std::string& w2) {
               detail::read_schedule(s, w2, c.training.continuous_schedule);
             })
        .finish();
  });
  top.sub("training", [&](const nlohmann::json& t, const std::string& w) {
    ObjectReader(t, w)
        .get("epochs", c.training.epochs)
        .get("batch_size", c.training.batch_size)
        .get("learning_rate", c.training.learning_rate)
        .get("seed", c.training.seed)
        .get("shuffle", c.training.shuffle)
        .get("whiten", c.training.whiten)
        .finish();
  });
  top.sub("evaluation", [&](const nlohmann::json& e, const std::string& w) {
    ObjectReader(e, w)
        .get("n", c.evaluation.n)
        .get("seed", c.evaluation.seed)
        .get("temperature", c.evaluation.temperature)
        .get("shift_targets", c.evaluation.shift_targets)
        .finish();
  });
  top.sub("generation", [&](const nlohmann::json& g, const std::string& w) {
    double sigma = 0.0;
    ObjectReader r(g, w);
    r.get("temperature", c.generation.temperature);
    if (g.contains("sigma_gen") && !g.at("sigma_gen").is_null()) {
      r.get("sigma_gen", sigma);
      c.generation.sigma_gen = sigma;
    } else {
      r.sub("sigma_gen", [](const nlohmann::json&, const std::string&) {});
    }
    r.finish();
  });
  top.sub("paths", [&](const nlohmann::json& p, const std::string& w) {
    ObjectReader r(p, w);
    std::string dir = c.paths.dir.string();
    r.get("dir", dir);
    c.paths.dir = dir;
    auto opt = [&](const char* key, std::optional<std::filesystem::path>& out) {
      if (p.contains(key)) {
        std::string v;
        r.get(key, v);
        out = v;
      } else {
        r.sub(key, [](const nlohmann::json&, const std::string&) {});
      }
    };
    opt("data", c.paths.data);
    opt("eval_data", c.paths.eval_data);
    opt("latents", c.paths.latents);
    opt("backbone", c.paths.backbone);
    opt("flow", c.paths.flow);
    opt("history", c.paths.history);
    opt("report", c.paths.report);
    r.finish();
  });
  top.finish();

  auto& s = c.backbone.synthetic;
  if (attributes) {
    s.kinds.clear();
    for (const auto& a : *attributes) s.kinds.push_back(parse_label_kind(a));
  } else {
    s.kinds.assign(s.k_labels, LabelKind::binary);
  }
  if (s.positive_rates.empty()) s.positive_rates.assign(s.k_labels, 0.5);
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingFileError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("config: malformed JSON: ") + e.what());
  }
  return parse_config(j);
}

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& s = c.backbone.synthetic;
  std::vector<std::string> kinds;
  for (auto k : s.kinds) kinds.emplace_back(label_kind_name(k));
  auto sched = [](const SigmaSchedule& x) {
    return nlohmann::json{{"sigma0", x.sigma0}, {"gamma", x.gamma}, {"sigma_min", x.sigma_min}};
  };
  const auto& ae = c.backbone.autoencoder;
  nlohmann::json j{
      {"preset", c.preset},
      {"backbone",
       {{"kind", c.backbone.kind},
        {"dims", s.dims},
        {"k_labels", s.k_labels},
        {"obs_dims", s.obs_dims},
        {"seed", s.seed},
        {"attributes", kinds},
        {"positive_rates", s.positive_rates},
        {"continuous_scale", s.continuous_scale},
        {"nonlinearity", s.nonlinearity},
        {"n_train", c.backbone.n_train},
        {"n_eval", c.backbone.n_eval},
        {"data_seed", c.backbone.data_seed},
        {"eval_seed", c.backbone.eval_seed},
        {"label_coverage", c.backbone.label_coverage},
        {"autoencoder",
         {{"hidden", ae.hidden},
          {"depth", ae.depth},
          {"epochs", ae.epochs},
          {"batch_size", ae.batch_size},
          {"learning_rate", ae.learning_rate},
          {"latent_reg", ae.latent_reg},
          {"seed", ae.seed}}}}},
      {"flow", {{"couplings", c.flow.couplings}, {"depth", c.flow.depth}, {"width", c.flow.width}, {"seed", c.flow.seed}}},
      {"prior",
       {{"imbalance_scaling", c.prior.imbalance_scaling},
        {"m0", c.prior.m0},
        {"m1", c.prior.m1},
        {"binary_schedule", sched(c.training.schedule)},
        {"continuous_schedule", sched(c.training.continuous_schedule)}}},
      {"training",
       {{"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"learning_rate", c.training.learning_rate},
        {"seed", c.training.seed},
        {"shuffle", c.training.shuffle},
        {"whiten", c.training.whiten}}},
      {"evaluation",
       {{"n", c.evaluation.n},
        {"seed", c.evaluation.seed},
        {"temperature", c.evaluation.temperature},
        {"shift_targets", c.evaluation.shift_targets}}},
      {"generation", {{"temperature", c.generation.temperature}}},
      {"paths", {{"dir", c.paths.dir.string()}}}};
  if (c.flow.dims) j["flow"]["dims"] = *c.flow.dims;
  if (c.generation.sigma_gen) j["generation"]["sigma_gen"] = *c.generation.sigma_gen;
  else j["generation"]["sigma_gen"] = nullptr;
  return j;
}

}  // namespace plugen
