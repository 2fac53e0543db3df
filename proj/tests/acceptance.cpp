#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

#include "plugen/plugen.hpp"

using namespace plugen;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s criterion %d: %s (%s; %.1fs)\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

/// The synthetic benchmark: backbone, encoded training set, trained flow.
struct Task {
  SyntheticBackbone bk;
  std::vector<SynthSample> eval;
  LatentDataset data;
  std::vector<LabelSpec> specs;
  TrainConfig cfg;
  TrainResult trained;
  Vec sigma_gen;
};

Task run_task(const SyntheticConfig& sc, double coverage = 1.0, bool scaling = true, std::uint64_t epochs = 0) {
  const RunConfig rc = preset_config("default");
  Task t{SyntheticBackbone(sc), {}, {}, {}, rc.training, {}, {}};
  if (epochs) t.cfg.epochs = epochs;
  const auto samples = synth_generate(t.bk, rc.backbone.n_train, rc.backbone.data_seed);
  t.eval = synth_generate(t.bk, rc.backbone.n_eval, rc.backbone.eval_seed);
  t.data = make_latent_dataset(t.bk, samples, t.bk.config().kinds, sc.dims, coverage, rc.backbone.data_seed);
  t.specs = fit_label_specs(t.data, scaling);
  Rng rng = make_rng(rc.flow.seed, 0x464C4F57ULL);
  FlowArch arch = rc.flow_arch();
  arch.dims = sc.dims;
  arch.k_labels = sc.k_labels;
  t.trained = train(NiceFlow::create(arch, rng), t.specs, t.data, t.cfg);
  t.sigma_gen = sigmas_at(t.specs, t.cfg, t.cfg.epochs - 1);
  return t;
}

double mean_flip(const Task& t, std::size_t n) {
  double acc = 0.0;
  for (std::size_t a = 0; a < t.specs.size(); ++a)
    for (int target : {0, 1}) acc += flip_accuracy(t.trained.flow, t.specs, t.bk, t.bk, t.eval, a, target, n).rate;
  return acc / static_cast<double>(2 * t.specs.size());
}

constexpr std::size_t kEvalN = 1000;

}  // namespace

int main() {
  report(1, "flow round trip on 100 random flows within 1e-9 in under 5s", [] {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      Rng rng = make_rng(1000 + s);
      NiceFlow f = NiceFlow::create({8, 3, 4, 4, 32}, rng);
      detail::randomize(f, rng, 0.5);
      std::normal_distribution<double> nd;
      Vec z(8);
      for (double& v : z) v = nd(rng);
      double ld = 0.0;
      const Vec back = flow_forward(f, flow_inverse_traced(f, z, ld, nullptr));
      for (std::size_t i = 0; i < 8; ++i) worst = std::max(worst, std::abs(back[i] - z[i]));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return Outcome{worst <= 1e-9 && secs < 5.0, fmt("max error %.3g", worst)};
  });

  report(2, "log-determinant matches finite differences for N = 4, 6, 8 in under 30s", [] {
    const auto t0 = std::chrono::steady_clock::now();
    const SuiteResult r = gradcheck_log_det(0, {4, 6, 8});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return Outcome{r.passed && secs < 30.0, fmt("max relative error %.3g", r.max_rel_err)};
  });

  report(3, "NLL parameter gradients match finite differences in under 2 min", [] {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 3; ++s) {
      const SuiteResult r = gradcheck_nll(s);
      ok = ok && r.passed;
      worst = std::max(worst, r.max_rel_err);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return Outcome{ok && secs < 120.0, fmt("max relative error %.3g over 3 seeds", worst)};
  });

  report(4, "binary prior normalizes and the imbalance weighting averages to one", [] {
    bool ok = true;
    double worst = 0.0;
    for (double p1 : {0.05, 0.1, 0.3, 0.5}) {
      const auto n1 = static_cast<std::int64_t>(std::llround(p1 * 1000));
      const LabelSpec spec = LabelSpec::binary_from_counts(1000 - n1, n1);
      ok = ok && expected_weighting(1000 - n1, n1) == Rational::make(1, 1);
      for (double sigma : {0.05, 0.3, 0.7}) {
        // composite Simpson over a range covering both components
        const double lo = -1.0 - 12.0 * sigma, hi = 1.0 + 12.0 * sigma;
        const int m = 20000;
        const double h = (hi - lo) / m;
        double acc = 0.0;
        for (int i = 0; i <= m; ++i) {
          const double w = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
          acc += w * std::exp(marginal_logpdf(lo + i * h, spec, sigma));
        }
        worst = std::max(worst, std::abs(acc * h / 3.0 - 1.0));
      }
    }
    return Outcome{ok && worst <= 1e-6, fmt("exact identity holds, max |integral - 1| %.3g", worst)};
  });

  SyntheticConfig main_cfg;
  main_cfg.kinds.assign(3, LabelKind::binary);
  const Task main_task = run_task(main_cfg);
  const double main_flip = mean_flip(main_task, kEvalN);

  report(5, "main task: flips, disentanglement, conditional generation", [&] {
    const auto& t = main_task;
    const LeakageSummary ls =
        summarize_leakage(leakage_matrix(t.trained.flow, t.specs, t.bk, t.bk, t.eval, kEvalN));
    double diag = 1e300;
    const auto m = leakage_matrix(t.trained.flow, t.specs, t.bk, t.bk, t.eval, kEvalN);
    for (std::size_t i = 0; i < m.size(); ++i) diag = std::min(diag, m[i][i]);
    const auto scores = independent_sampling_scores(t.trained.flow, t.specs, t.bk, t.bk, kEvalN,
                                                    SamplingOptions{t.sigma_gen, 1.0, 0, false});
    double f1 = 0.0, auc = 0.0;
    for (const auto& s : scores) {
      f1 += s.f1 / static_cast<double>(scores.size());
      auc += s.auc / static_cast<double>(scores.size());
    }
    const bool ok = main_flip >= 0.9 && ls.off_diagonal_max <= 0.2 && diag >= 0.8 && f1 >= 0.85 && auc >= 0.95;
    std::ostringstream d;
    d << "flip " << main_flip << ", leakage off-diagonal max " << ls.off_diagonal_max << ", diagonal min " << diag
      << ", F1 " << f1 << ", AUC " << auc;
    return Outcome{ok, d.str()};
  });

  report(6, "continuous attributes: generated means follow targets -0.5, 0, 0.5 (200 epochs)", [] {
    SyntheticConfig sc;
    sc.k_labels = 2;
    sc.kinds.assign(2, LabelKind::continuous);
    // continuous codes converge more slowly than binary ones
    const Task t = run_task(sc, 1.0, true, 200);
    bool ok = true;
    std::ostringstream d;
    for (std::size_t a = 0; a < 2; ++a) {
      const auto sh = distribution_shift(t.trained.flow, t.specs, t.bk, t.bk, a, {-0.5, 0.0, 0.5}, kEvalN,
                                         SamplingOptions{t.sigma_gen, 1.0, 0, false});
      d << (a ? "; " : "") << "attr " << a << " means";
      for (std::size_t i = 0; i < sh.size(); ++i) {
        d << ' ' << sh[i].mean;
        ok = ok && std::abs(sh[i].mean - sh[i].target) <= 0.15;
        if (i > 0) ok = ok && sh[i].mean > sh[i - 1].mean;
      }
    }
    return Outcome{ok, d.str()};
  });

  report(7, "half label coverage costs at most 0.05 flip accuracy", [&] {
    const Task t = run_task(main_cfg, 0.5);
    const double half = mean_flip(t, kEvalN);
    std::ostringstream d;
    d << "full " << main_flip << ", half " << half;
    return Outcome{main_flip - half <= 0.05, d.str()};
  });

  report(8, "imbalance scaling helps the minority class at p = 0.1", [] {
    SyntheticConfig sc;
    sc.kinds.assign(3, LabelKind::binary);
    sc.positive_rates = {0.1, 0.5, 0.5};
    const Task on = run_task(sc, 1.0, true);
    const Task off = run_task(sc, 1.0, false);
    auto minority = [](const Task& t) {
      return flip_accuracy(t.trained.flow, t.specs, t.bk, t.bk, t.eval, 0, 1, t.eval.size()).rate;
    };
    const double a = minority(on), b = minority(off);
    std::ostringstream d;
    d << "minority flip with scaling " << a << ", without " << b;
    return Outcome{a >= 0.8 && b < a, d.str()};
  });

  report(9, "reruns are bit-identical and artifacts round-trip", [&] {
    const Task again = run_task(main_cfg);
    bool ok = again.trained.history == main_task.trained.history &&
              again.trained.flow.flatten() == main_task.trained.flow.flatten();
    const auto dir = std::filesystem::temp_directory_path() / "plugen_acceptance";
    std::filesystem::create_directories(dir);
    FlowCheckpoint ck{main_task.trained.flow, main_task.specs, main_task.sigma_gen};
    quantize_to_float(ck.flow);
    save_flow(dir / "flow.ckpt", ck);
    const FlowCheckpoint back = load_flow(dir / "flow.ckpt");
    for (const auto& e : main_task.eval) {
      const Vec z = main_task.bk.encode(e.x);
      double l1 = 0.0, l2 = 0.0;
      ok = ok && flow_inverse_traced(back.flow, z, l1, nullptr) == flow_inverse_traced(ck.flow, z, l1, nullptr) &&
           std::isfinite(l2);
    }
    std::stringstream csv;
    write_latent_csv(csv, main_task.data);
    const LatentDataset d = read_latent_csv(csv, main_task.data.kinds);
    ok = ok && d.latents == main_task.data.latents && d.labels == main_task.data.labels;
    return Outcome{ok, "histories, parameters, checkpoint outputs and latent CSV compared exactly"};
  });

  report(10, "9-step interpolation is monotone in the edited factor", [&] {
    const auto& t = main_task;
    std::size_t bad_rows = 0;
    const std::size_t rows = 50;
    for (std::size_t r = 0; r < rows; ++r) {
      const auto path = interpolate(t.trained.flow, t.specs, t.bk, t.bk.encode(t.eval[r].x), 0, t.specs[0].m0,
                                    t.specs[0].m1, 9);
      int violations = 0;
      double worst = 0.0;
      double prev = t.bk.oracle_factors(path[0].result.x)[0];
      for (std::size_t j = 1; j < path.size(); ++j) {
        const double cur = t.bk.oracle_factors(path[j].result.x)[0];
        if (cur < prev) {
          ++violations;
          worst = std::max(worst, prev - cur);
        }
        prev = cur;
      }
      if (violations > 1 || worst > 0.05) ++bad_rows;
    }
    return Outcome{bad_rows == 0, std::to_string(bad_rows) + " of " + std::to_string(rows) + " rows violate"};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
