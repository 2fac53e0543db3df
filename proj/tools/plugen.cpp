// plugen command-line entry point.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "plugen/pipeline.hpp"

namespace {

constexpr int kUsageExit = 1;

void fail_line(const std::string& kind, int code, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"code", code}, {"message", message}}.dump() << '\n';
}

/// Writes to --out when given, stdout otherwise.
template <class F>
void with_output(const std::string& out, F&& f) {
  if (out.empty() || out == "-") {
    f(std::cout);
    return;
  }
  plugen::detail::ensure_parent(out);
  auto os = plugen::detail::open_out(out);
  f(os);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plugen: conditional generation and attribute editing through a flow on a frozen backbone latent space"};
  app.require_subcommand(1);

  std::string config_path;
  std::string preset;
  std::string out;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "run configuration (JSON)");
    sub->add_option("--preset", preset, "preset when no config file is given");
  };

  auto* make_data = app.add_subcommand("make-data", "sample training and evaluation observations");
  auto* train_backbone = app.add_subcommand("train-backbone", "fix or fit the backbone");
  auto* encode = app.add_subcommand("encode", "encode training observations into latent codes");
  auto* train_plugen = app.add_subcommand("train-plugen", "fit the flow on latent codes");

  auto* generate = app.add_subcommand("generate", "conditional generation");
  std::size_t gen_n = 10;
  std::uint64_t gen_seed = 0;
  std::vector<std::string> cond_flags;
  generate->add_option("-n,--n", gen_n, "number of samples");
  generate->add_option("--seed", gen_seed, "sampling seed");
  generate->add_option("--cond", cond_flags, "attribute condition index=value or index=free")->take_all();
  generate->add_option("-o,--out", out, "output CSV (default stdout)");

  auto* manipulate = app.add_subcommand("manipulate", "edit attributes of existing observations");
  std::optional<std::size_t> man_row;
  std::string man_input;
  std::vector<std::string> set_flags, shift_flags;
  bool recover = false;
  manipulate->add_option("--row", man_row, "row of the evaluation set");
  manipulate->add_option("--input", man_input, "observation CSV to edit instead of the evaluation set");
  manipulate->add_option("--set", set_flags, "absolute edit index=value")->take_all();
  manipulate->add_option("--shift", shift_flags, "relative edit index=delta")->take_all();
  manipulate->add_flag("--recover", recover, "find latent codes by optimization instead of the encoder");
  manipulate->add_option("-o,--out", out, "output CSV (default stdout)");

  auto* interp = app.add_subcommand("interpolate", "sweep one attribute");
  std::size_t ip_row = 0, ip_attr = 0, ip_steps = 9;
  double ip_from = -1.0, ip_to = 1.0;
  interp->add_option("--row", ip_row, "row of the evaluation set");
  interp->add_option("--attr", ip_attr, "attribute index")->required();
  interp->add_option("--from", ip_from, "start value");
  interp->add_option("--to", ip_to, "end value");
  interp->add_option("--steps", ip_steps, "number of points");
  interp->add_option("-o,--out", out, "output CSV (default stdout)");

  auto* evaluate = app.add_subcommand("evaluate", "run the evaluation protocols and write the report");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference verification of all derivatives");
  auto* show_config = app.add_subcommand("show-config", "print the resolved configuration");

  for (auto* sub : {make_data, train_backbone, encode, train_plugen, generate, manipulate, interp, evaluate, gradcheck,
                    show_config})
    add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("usage", kUsageExit, e.what());
    return kUsageExit;
  }

  try {
    using namespace plugen;
    if (!config_path.empty() && !preset.empty()) throw ContractViolation("give either --config or --preset, not both");
    const RunConfig cfg = config_path.empty() ? [&] {
      RunConfig c = preset_config(preset.empty() ? "default" : preset);
      c.validate();
      return c;
    }()
                                              : load_config(config_path);
    const std::size_t k = cfg.backbone.synthetic.k_labels;

    if (*make_data) {
      cmd_make_data(cfg);
      std::cout << nlohmann::json{{"data", cfg.paths.data_file().string()}, {"eval_data", cfg.paths.eval_file().string()}}.dump() << '\n';
    } else if (*train_backbone) {
      const auto history = cmd_train_backbone(cfg);
      nlohmann::json j{{"backbone", cfg.paths.backbone_file().string()}, {"kind", cfg.backbone.kind}};
      if (!history.empty()) j["final_loss"] = history.back();
      std::cout << j.dump() << '\n';
    } else if (*encode) {
      const auto data = cmd_encode(cfg);
      std::cout << nlohmann::json{{"latents", cfg.paths.latents_file().string()}, {"rows", data.size()}}.dump() << '\n';
    } else if (*train_plugen) {
      const auto r = cmd_train_plugen(cfg);
      std::cout << nlohmann::json{{"flow", cfg.paths.flow_file().string()},
                                  {"history", cfg.paths.history_file().string()},
                                  {"epochs", r.history.size()},
                                  {"final_mean_nll", r.history.back().mean_nll}}
                       .dump()
                << '\n';
    } else if (*generate) {
      const Condition cond = parse_condition(cond_flags, k);
      with_output(out, [&](std::ostream& os) { cmd_generate(cfg, cond, gen_n, gen_seed, os); });
    } else if (*manipulate) {
      ManipulateRequest req;
      req.row = man_row;
      if (!man_input.empty()) req.input = man_input;
      req.edits = parse_edits(set_flags, shift_flags, k);
      req.recover = recover;
      std::vector<std::string> warnings;
      with_output(out, [&](std::ostream& os) { warnings = cmd_manipulate(cfg, req, os); });
      for (const auto& w : warnings) std::cerr << nlohmann::json{{"warning", w}}.dump() << '\n';
    } else if (*interp) {
      with_output(out, [&](std::ostream& os) { cmd_interpolate(cfg, ip_row, ip_attr, ip_from, ip_to, ip_steps, os); });
    } else if (*evaluate) {
      const auto report = cmd_evaluate(cfg);
      std::cout << report.dump(2) << '\n';
    } else if (*gradcheck) {
      const GradcheckReport r = cmd_gradcheck(cfg);
      for (const auto& s : r.suites)
        std::cout << (s.passed ? "PASS " : "FAIL ") << s.name << " checked=" << s.checked
                  << " max_rel_err=" << s.max_rel_err << '\n';
      std::cout << (r.passed() ? "PASS" : "FAIL") << " gradcheck max_rel_err=" << r.max_rel_err() << '\n';
      if (!r.passed()) {
        fail_line("gradcheck_failed", 10, "finite-difference mismatch above tolerance");
        return 10;
      }
    } else if (*show_config) {
      std::cout << to_json(cfg).dump(2) << '\n';
    }
  } catch (const plugen::Error& e) {
    const int code = static_cast<int>(e.kind());
    fail_line(plugen::error_kind_name(e.kind()), code, e.what());
    return code;
  } catch (const std::filesystem::filesystem_error& e) {
    const int code = static_cast<int>(plugen::ErrorKind::missing_file);
    fail_line(plugen::error_kind_name(plugen::ErrorKind::missing_file), code, e.what());
    return code;
  } catch (const std::exception& e) {
    fail_line("internal", 70, e.what());
    return 70;
  }
  return 0;
}
