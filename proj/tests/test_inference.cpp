#include <gtest/gtest.h>

#include <cmath>

#include "plugen/inference.hpp"
#include "test_util.hpp"

using namespace plugen;

namespace {

struct Fixture {
  SyntheticBackbone bk{SyntheticConfig{}};
  NiceFlow flow;
  std::vector<LabelSpec> specs{LabelSpec::binary(0.5), LabelSpec::binary(0.3), LabelSpec::binary(0.6)};
  Fixture() {
    Rng rng = make_rng(1);
    flow = test::random_flow({8, 3, 4, 3, 8}, rng, 0.3);
    flow.scaling.log_scale.assign(8, 0.0);
  }
  Vec some_z(std::uint64_t seed) const { return synth_generate(bk, 1, seed).front().z; }
};

}  // namespace

TEST(Generate, TinySigmaPinsLabelVariablesToClassMeans) {
  Fixture f;
  const auto out = generate(f.flow, f.specs, f.bk, Condition{1.0, 0.0, 1.0}, 50, GenerateOptions{Vec(3, 1e-6), 1.0, 3});
  ASSERT_EQ(out.size(), 50u);
  for (const auto& s : out) {
    EXPECT_NEAR(s.c[0], 1.0, 1e-5);
    EXPECT_NEAR(s.c[1], -1.0, 1e-5);
    EXPECT_NEAR(s.c[2], 1.0, 1e-5);
    EXPECT_EQ(s.x, f.bk.decode(s.z));
  }
}

TEST(Generate, FreeConditionMatchesUnconditionalSampling) {
  Fixture f;
  const std::size_t n = 10000;
  const Vec sigma(3, 0.5);
  const auto gen = generate(f.flow, f.specs, f.bk, Condition(3, kMissing), n, GenerateOptions{sigma, 1.0, 5});
  Rng rng = make_rng(99);
  std::normal_distribution<double> normal;
  Vec mean_gen(8, 0.0), mean_ref(8, 0.0), sq_ref(8, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    Vec v(8);
    for (std::size_t k = 0; k < 3; ++k) v[k] = sample_label(kMissing, f.specs[k], sigma[k], rng);
    for (std::size_t j = 3; j < 8; ++j) v[j] = normal(rng);
    const Vec z = flow_forward(f.flow, v);
    for (std::size_t d = 0; d < 8; ++d) {
      mean_ref[d] += z[d] / n;
      sq_ref[d] += z[d] * z[d] / n;
      mean_gen[d] += gen[i].z[d] / n;
    }
  }
  for (std::size_t d = 0; d < 8; ++d) {
    const double sd = std::sqrt(sq_ref[d] - mean_ref[d] * mean_ref[d]);
    EXPECT_NEAR(mean_gen[d], mean_ref[d], 4.0 * sd * std::sqrt(2.0 / n)) << "coordinate " << d;
  }
}

TEST(Generate, DeterministicGivenSeed) {
  Fixture f;
  const GenerateOptions opt{Vec(3, 0.4), 1.0, 11};
  const Condition cond{1.0, kMissing, 0.0};
  const auto a = generate(f.flow, f.specs, f.bk, cond, 20, opt);
  const auto b = generate(f.flow, f.specs, f.bk, cond, 20, opt);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].x, b[i].x);
  // a prefix of a longer request is the same draws
  const auto c = generate(f.flow, f.specs, f.bk, cond, 5, opt);
  EXPECT_EQ(c[4].x, a[4].x);
}

TEST(Generate, EmptyRequestAndTemperature) {
  Fixture f;
  EXPECT_TRUE(generate(f.flow, f.specs, f.bk, Condition(3, kMissing), 0, GenerateOptions{Vec(3, 0.4)}).empty());
  const auto cold = generate(f.flow, f.specs, f.bk, Condition(3, kMissing), 4000, GenerateOptions{Vec(3, 0.4), 0.5, 2});
  double sq = 0.0;
  for (const auto& s : cold)
    for (double v : s.s) sq += v * v;
  EXPECT_NEAR(sq / (4000.0 * 5.0), 0.25, 0.02);
}

TEST(Generate, RejectsBadConditions) {
  Fixture f;
  const GenerateOptions opt{Vec(3, 0.4)};
  EXPECT_THROW(generate(f.flow, f.specs, f.bk, Condition{0.5, kMissing, kMissing}, 1, opt), ContractViolation);
  EXPECT_THROW(generate(f.flow, f.specs, f.bk, Condition{1.0, kMissing}, 1, opt), ContractViolation);
  EXPECT_THROW(generate(f.flow, f.specs, f.bk, Condition(3, kMissing), 1, GenerateOptions{Vec(3, 0.0)}),
               ContractViolation);
}

TEST(Manipulate, EmptyEditIsAPureRoundTrip) {
  Fixture f;
  const Vec z = f.some_z(3);
  const Manipulation m = manipulate(f.flow, f.specs, f.bk, z, {});
  EXPECT_LE(test::sup_norm_diff(m.z, z), 1e-9);
  EXPECT_EQ(m.before, m.after);
}

TEST(Manipulate, EditingAndRestoringRecoversTheCode) {
  Fixture f;
  const Vec z = f.some_z(4);
  const Manipulation there = manipulate(f.flow, f.specs, f.bk, z, EditMap{{0, EditTarget{1.0}}});
  const Manipulation back = manipulate(f.flow, f.specs, f.bk, there.z, EditMap{{0, EditTarget{there.before.c[0]}}});
  EXPECT_LE(test::sup_norm_diff(back.z, z), 1e-9);
}

TEST(Manipulate, UneditedCoordinatesAreBitIdentical) {
  Fixture f;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Vec z = f.some_z(seed + 10);
    const EditMap edits{{seed % 3, EditTarget{seed % 2 ? 1.0 : -1.0}}, {(seed + 1) % 3, EditTarget{0.25, true}}};
    const Manipulation m = manipulate(f.flow, f.specs, f.bk, z, edits);
    for (std::size_t i = 0; i < 3; ++i)
      if (!edits.count(i)) EXPECT_EQ(m.after.c[i], m.before.c[i]);
    EXPECT_EQ(m.after.s, m.before.s);
    const std::size_t rel = (seed + 1) % 3;
    EXPECT_EQ(m.after.c[rel], m.before.c[rel] + 0.25);
  }
}

TEST(Manipulate, ExtrapolatingContinuousTargetsWarns) {
  Fixture f;
  f.specs[1] = LabelSpec::continuous({-0.5, 0.5});
  const Manipulation m =
      manipulate(f.flow, f.specs, f.bk, f.some_z(5), EditMap{{1, EditTarget{1.4}}, {0, EditTarget{1.4}}});
  ASSERT_EQ(m.warnings.size(), 1u);
  EXPECT_NE(m.warnings[0].find("attribute 1"), std::string::npos);
  EXPECT_EQ(m.after.c[1], 1.4);
  EXPECT_THROW(manipulate(f.flow, f.specs, f.bk, f.some_z(5), EditMap{{3, EditTarget{0.0}}}), ContractViolation);
}

TEST(Manipulate, ObservationInputUsesTheExactEncoder) {
  Fixture f;
  const SynthSample s = synth_generate(f.bk, 1, 6).front();
  const EditMap edits{{2, EditTarget{-1.0}}};
  const Manipulation a = manipulate_observation(f.flow, f.specs, f.bk, s.x, edits);
  const Manipulation b = manipulate(f.flow, f.specs, f.bk, s.z, edits);
  EXPECT_LE(test::sup_norm_diff(a.x, b.x), 1e-12);
}

TEST(Manipulate, RecoveryAgreesWithTheEncoder) {
  Fixture f;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : synth_generate(f.bk, 20, 7)) {
    const EditMap edits{{0, EditTarget{1.0}}};
    const Manipulation enc = manipulate_observation(f.flow, f.specs, f.bk, s.x, edits);
    const Manipulation rec = manipulate_recovered(f.flow, f.specs, f.bk, s.x, edits);
    const Vec ta = f.bk.oracle_factors(enc.x), tb = f.bk.projected_factors(rec.x);
    for (std::size_t i = 0; i < ta.size(); ++i) total += std::abs(ta[i] - tb[i]);
    count += ta.size();
  }
  EXPECT_LE(total / static_cast<double>(count), 0.05);
}

TEST(Interpolate, DegenerateRangeGivesIdenticalOutputs) {
  Fixture f;
  const auto path = interpolate(f.flow, f.specs, f.bk, f.some_z(8), 0, 0.3, 0.3, 2);
  ASSERT_EQ(path.size(), 2u);
  EXPECT_EQ(path[0].result.x, path[1].result.x);
}

TEST(Interpolate, EndpointsEqualManipulateResults) {
  Fixture f;
  const Vec z = f.some_z(9);
  const auto path = interpolate(f.flow, f.specs, f.bk, z, 1, -1.0, 1.0, 9);
  ASSERT_EQ(path.size(), 9u);
  EXPECT_EQ(path.front().value, -1.0);
  EXPECT_EQ(path.back().value, 1.0);
  EXPECT_EQ(path.front().result.x, manipulate(f.flow, f.specs, f.bk, z, EditMap{{1, EditTarget{-1.0}}}).x);
  EXPECT_EQ(path.back().result.x, manipulate(f.flow, f.specs, f.bk, z, EditMap{{1, EditTarget{1.0}}}).x);
  for (std::size_t j = 1; j < path.size(); ++j) EXPECT_GT(path[j].value, path[j - 1].value);
}

TEST(Interpolate, Preconditions) {
  Fixture f;
  EXPECT_THROW(interpolate(f.flow, f.specs, f.bk, f.some_z(1), 0, -1.0, 1.0, 1), ContractViolation);
  EXPECT_THROW(interpolate(f.flow, f.specs, f.bk, f.some_z(1), 3, -1.0, 1.0, 3), ContractViolation);
}
