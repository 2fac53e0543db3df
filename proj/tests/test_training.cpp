#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "plugen/backbone.hpp"
#include "plugen/gradcheck.hpp"
#include "plugen/training.hpp"
#include "test_util.hpp"

using namespace plugen;

namespace {

std::vector<std::size_t> all_indices(const LatentDataset& d) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

LatentDataset small_dataset(std::size_t n, std::uint64_t seed, double coverage = 1.0) {
  SyntheticConfig sc;
  sc.dims = 6;
  sc.k_labels = 2;
  sc.obs_dims = 8;
  sc.seed = seed;
  sc.kinds = {LabelKind::binary, LabelKind::continuous};
  return make_latent_dataset(SyntheticBackbone(sc), n, seed + 1, coverage);
}

}  // namespace

TEST(NllLoss, ClosedFormForIdentityFlowWithMissingLabels) {
  Rng rng = make_rng(1);
  NiceFlow flow = NiceFlow::create({2, 1, 2, 2, 4}, rng);
  LatentDataset d;
  d.dims = 2;
  d.k_labels = 1;
  d.kinds = {LabelKind::binary};
  d.latents = {{0.0, 0.0}};
  d.labels = {{kMissing}};
  const std::vector<LabelSpec> specs{LabelSpec::binary(0.5)};
  const std::vector<std::size_t> batch{0};
  const double loss = nll_loss(flow, specs, d, batch, 1.0).loss;
  // balanced mixture at 0 with unit sigma: both components give N(0; +-1, 1)
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(loss, (half_log_2pi + 0.5) + half_log_2pi, 1e-14);
}

TEST(NllLoss, LogDetTermShiftsLossByNTimesScale) {
  Rng rng = make_rng(2);
  NiceFlow base = test::random_flow({5, 2, 3, 2, 8}, rng, 0.4);
  base.scaling.log_scale.assign(5, 0.0);
  NiceFlow scaled = base;
  const double a = 0.37;
  scaled.scaling.log_scale.assign(5, a);
  LatentDataset d;
  d.dims = 5;
  d.k_labels = 2;
  d.kinds = {LabelKind::binary, LabelKind::continuous};
  d.labels = {{1.0, 0.2}, {kMissing, -0.4}};
  d.latents = {test::normal_vec(5, rng), test::normal_vec(5, rng)};
  LatentDataset ds = d;
  for (auto& z : ds.latents)
    for (double& v : z) v *= std::exp(a);
  const std::vector<LabelSpec> specs{LabelSpec::binary(0.4), LabelSpec::continuous({-0.5, 0.5})};
  const auto idx = all_indices(d);
  const double l0 = nll_loss(base, specs, d, idx, 0.5).loss;
  const double la = nll_loss(scaled, specs, ds, idx, 0.5).loss;
  EXPECT_NEAR(la - l0, 5.0 * a, 1e-12);
}

TEST(NllLoss, GradientsMatchFiniteDifferencesOnAllLabelPaths) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const SuiteResult r = gradcheck_nll(seed);
    EXPECT_TRUE(r.passed) << "seed " << seed << " max rel err " << r.max_rel_err;
    EXPECT_GT(r.checked, 100u);
  }
}

TEST(NllLoss, CentralDifferencesAgreeOnAnEightDimensionalFlow) {
  GradcheckProblem p = make_gradcheck_problem(5, 8, 16);
  const auto idx = all_indices(p.data);
  const Vec analytic = nll_loss(p.flow, p.specs, p.data, idx, p.sigmas).grads.flatten();
  NiceFlow probe = p.flow;
  auto f = [&](std::span<const double> q) {
    probe.assign(q);
    return evaluate_nll(probe, p.specs, p.data, p.sigmas);
  };
  const Vec numeric = finite_diff_grad(f, p.flow.flatten(), 1e-5);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) bad += relative_error(analytic[i], numeric[i], kGradcheckFloor) > 1e-4;
  EXPECT_EQ(bad, 0u);
}

TEST(NllLoss, BatchInvariance) {
  const LatentDataset d = small_dataset(300, 3, 0.7);
  const auto specs = fit_label_specs(d);
  Rng rng = make_rng(4);
  const NiceFlow flow = test::random_flow({6, 2, 4, 3, 8}, rng, 0.3);
  const Vec sigmas{0.5, 0.6};
  const auto idx = all_indices(d);
  const double full = nll_loss(flow, specs, d, idx, sigmas).loss;
  double weighted = 0.0;
  for (std::size_t start = 0; start < idx.size(); start += 64) {
    const std::size_t stop = std::min(idx.size(), start + 64);
    weighted += nll_loss(flow, specs, d, std::span(idx).subspan(start, stop - start), sigmas).loss *
                static_cast<double>(stop - start);
  }
  weighted /= static_cast<double>(idx.size());
  EXPECT_LE(std::abs(full - weighted) / std::abs(full), 1e-12);
}

TEST(NllLoss, AllMissingLossIgnoresLabelArrangement) {
  LatentDataset d = small_dataset(200, 5);
  for (auto& row : d.labels) row.assign(row.size(), kMissing);
  LatentDataset permuted = d;
  Rng rng = make_rng(6);
  std::shuffle(permuted.labels.begin(), permuted.labels.end(), rng);
  const std::vector<LabelSpec> specs{LabelSpec::binary(0.3), LabelSpec::continuous({-0.3, 0.1, 0.8})};
  const NiceFlow flow = test::random_flow({6, 2, 4, 3, 8}, rng, 0.3);
  const auto idx = all_indices(d);
  EXPECT_EQ(nll_loss(flow, specs, d, idx, 0.4).loss, nll_loss(flow, specs, permuted, idx, 0.4).loss);
}

TEST(NllLoss, DimensionMismatchIsReported) {
  const LatentDataset d = small_dataset(20, 7);
  const auto specs = fit_label_specs(d);
  Rng rng = make_rng(8);
  const NiceFlow flow = NiceFlow::create({8, 2, 2, 2, 4}, rng);
  const auto idx = all_indices(d);
  EXPECT_THROW(nll_loss(flow, specs, d, idx, 0.5), DimensionError);
}

TEST(EvaluateNll, EqualsFullBatchLoss) {
  const LatentDataset d = small_dataset(150, 9, 0.5);
  const auto specs = fit_label_specs(d);
  Rng rng = make_rng(10);
  const NiceFlow flow = test::random_flow({6, 2, 4, 3, 8}, rng, 0.3);
  const auto idx = all_indices(d);
  EXPECT_NEAR(evaluate_nll(flow, specs, d, 0.45), nll_loss(flow, specs, d, idx, 0.45).loss, 1e-12);
}

TEST(EvaluateNll, IdentityFlowMatchesMixtureCrossEntropy) {
  const std::size_t n = 100000, dims = 3;
  LatentDataset d;
  d.dims = dims;
  d.k_labels = 1;
  d.kinds = {LabelKind::binary};
  Rng rng = make_rng(11);
  for (std::size_t i = 0; i < n; ++i) {
    d.latents.push_back(test::normal_vec(dims, rng));
    d.labels.push_back({kMissing});
  }
  const LabelSpec spec = LabelSpec::binary(0.3);
  const double sigma = 0.6;
  Rng frng = make_rng(12);
  const NiceFlow flow = NiceFlow::create({dims, 1, 2, 2, 4}, frng);
  const double mc = evaluate_nll(flow, {spec}, d, sigma);
  // expected value under z ~ N(0, I): -E[log p_mix(c)] + (N-K) (0.5 log 2pi + 0.5)
  double cross = 0.0;
  const double h = 1e-3;
  for (double c = -12.0; c <= 12.0; c += h)
    cross -= h * std::exp(-0.5 * c * c) / std::sqrt(2.0 * std::numbers::pi) * marginal_logpdf(c, spec, sigma);
  const double expected = cross + 2.0 * (0.5 * std::log(2.0 * std::numbers::pi) + 0.5);
  EXPECT_NEAR(mc, expected, 0.05);
}

TEST(FitLabelSpecs, ProportionsExcludeMissing) {
  LatentDataset d;
  d.dims = 2;
  d.k_labels = 2;
  d.kinds = {LabelKind::binary, LabelKind::continuous};
  d.latents.assign(6, Vec{0.0, 0.0});
  d.labels = {{1.0, 0.5}, {0.0, kMissing}, {kMissing, -0.5}, {0.0, 0.25}, {0.0, kMissing}, {kMissing, kMissing}};
  const auto specs = fit_label_specs(d);
  EXPECT_EQ(specs[0].n1, 1);
  EXPECT_EQ(specs[0].n0, 3);
  EXPECT_DOUBLE_EQ(specs[0].p1, 0.25);
  EXPECT_EQ(specs[1].kind, LabelKind::continuous);
  EXPECT_EQ(specs[1].kde_support, (Vec{0.5, -0.5, 0.25}));
  EXPECT_FALSE(fit_label_specs(d, false)[0].imbalance_scaling);
}

TEST(LatentDataset, ValidationErrors) {
  LatentDataset d = small_dataset(10, 13);
  LatentDataset bad = d;
  bad.latents[3].pop_back();
  EXPECT_THROW(bad.validate(), DimensionError);
  bad = d;
  bad.labels[0][0] = 0.5;
  EXPECT_THROW(bad.validate(), SchemaError);
  bad = d;
  bad.labels[0][1] = 1.5;
  EXPECT_THROW(bad.validate(), SchemaError);
  bad = d;
  for (auto& row : bad.labels) row[0] = kMissing;
  EXPECT_THROW(bad.validate(), SchemaError);
}

TEST(Train, ZeroEpochsIsAContractViolation) {
  const LatentDataset d = small_dataset(20, 14);
  Rng rng = make_rng(15);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(train(NiceFlow::create({6, 2, 2, 2, 4}, rng), fit_label_specs(d), d, cfg), ContractViolation);
}

TEST(Train, SeededRunsAreBitIdentical) {
  const LatentDataset d = small_dataset(500, 16, 0.8);
  const auto specs = fit_label_specs(d);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 64;
  cfg.learning_rate = 1e-3;
  cfg.seed = 42;
  auto run = [&] {
    Rng rng = make_rng(17);
    return train(NiceFlow::create({6, 2, 4, 3, 16}, rng), specs, d, cfg);
  };
  const TrainResult a = run(), b = run();
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.flow.flatten(), b.flow.flatten());
  cfg.seed = 43;
  Rng rng = make_rng(17);
  const TrainResult c = train(NiceFlow::create({6, 2, 4, 3, 16}, rng), specs, d, cfg);
  EXPECT_NE(a.history.back().mean_nll, c.history.back().mean_nll);
}

TEST(Train, HistoryRecordsEpochSigma) {
  const LatentDataset d = small_dataset(100, 18);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.schedule = {0.7, 0.5, 0.05};
  Rng rng = make_rng(19);
  const TrainResult r = train(NiceFlow::create({6, 2, 2, 2, 4}, rng), fit_label_specs(d), d, cfg);
  ASSERT_EQ(r.history.size(), 3u);
  EXPECT_DOUBLE_EQ(r.history[2].sigma_t, 0.7 * 0.25);
  EXPECT_EQ(r.history[1].epoch, 1u);
}

TEST(Train, NonFiniteInputBecomesTrainingError) {
  LatentDataset d = small_dataset(50, 20);
  const auto specs = fit_label_specs(d);
  d.latents[7][0] = std::numeric_limits<double>::infinity();
  Rng rng = make_rng(21);
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(NiceFlow::create({6, 2, 2, 2, 4}, rng), specs, d, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
  }
}

TEST(Train, WhitenInitializesScaleToDataSpread) {
  LatentDataset d = small_dataset(400, 22);
  for (auto& z : d.latents)
    for (double& v : z) v *= 3.0;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.whiten = true;
  cfg.learning_rate = 1e-12;
  Rng rng = make_rng(23);
  const TrainResult r = train(NiceFlow::create({6, 2, 2, 2, 4}, rng), fit_label_specs(d), d, cfg);
  for (double ls : r.flow.scaling.log_scale) EXPECT_NEAR(ls, std::log(3.0), 0.15);
}

TEST(Train, ReducesNllOnTheSyntheticTask) {
  SyntheticConfig sc;  // N = 8, K = 3 binary, orthogonal mixing
  const SyntheticBackbone bk(sc);
  const LatentDataset d = make_latent_dataset(bk, 10000, 5, 1.0);
  const auto specs = fit_label_specs(d);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 128;
  cfg.learning_rate = 5e-4;
  Rng rng = make_rng(3);
  const NiceFlow initial = NiceFlow::create({8, 3, 4, 4, 32}, rng);
  std::vector<double> checkpoints;
  const Vec final_sigmas = sigmas_at(specs, cfg, cfg.epochs - 1);
  const TrainResult r = train(initial, specs, d, cfg, [&](const EpochRecord& rec, const NiceFlow& f) {
    if ((rec.epoch + 1) % 10 == 0) checkpoints.push_back(evaluate_nll(f, specs, d, final_sigmas));
  });
  const double before = evaluate_nll(initial, specs, d, final_sigmas);
  const double after = evaluate_nll(r.flow, specs, d, final_sigmas);
  EXPECT_LE(after, before - 1.0) << "before " << before << " after " << after;
  for (std::size_t i = 1; i < checkpoints.size(); ++i) EXPECT_LE(checkpoints[i], checkpoints[i - 1]);
  EXPECT_LT(r.history.back().mean_nll, r.history.front().mean_nll);
}
