#include <gtest/gtest.h>

#include "bbox/error.hpp"
#include "bbox/transfer.hpp"
#include "bbox/zoo.hpp"
#include "support.hpp"

using namespace bbox;

namespace {

const Shape kShape{1, 8, 8};

std::vector<DifferentiableNet> surrogates() {
  return {make_mlp(kShape, 4, 1, 32), make_convnet(kShape, 4, 2, 4, 8)};
}

TransferRun run(TransferVariant v, Goal goal, std::uint64_t seed, TransferParams params = {}) {
  auto cfg = TransferConfig::defaults(goal, v);
  cfg.iterations = 10;
  cfg.seed = seed;
  cfg.params = params;
  const auto seeds = support::random_batch(3, kShape, seed);
  const std::vector<std::size_t> labels = {seed % 4, (seed + 1) % 4, (seed + 2) % 4};
  const auto nets = surrogates();
  return run_transfer_attack(cfg, nets, seeds, labels);
}

void expect_identical(const TransferRun& a, const TransferRun& b) {
  ASSERT_EQ(a.candidates.size(), b.candidates.size());
  for (std::size_t t = 0; t < a.candidates.size(); ++t) {
    ASSERT_EQ(a.candidates[t], b.candidates[t]) << "iteration " << t + 1;
  }
}

}  // namespace

TEST(Transfer, ReductionIdentities) {
  TransferParams no_momentum;
  no_momentum.momentum = 0.0;
  TransferParams no_variance;
  no_variance.variance_samples = 0;
  TransferParams no_di;
  no_di.di_probability = 0.0;
  TransferParams smimi_plain;
  smimi_plain.momentum = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (auto goal : {Goal::Untargeted, Goal::Targeted}) {
      expect_identical(run(TransferVariant::MI, goal, seed, no_momentum), run(TransferVariant::I, goal, seed));
      expect_identical(run(TransferVariant::VMI, goal, seed, no_variance), run(TransferVariant::MI, goal, seed));
      expect_identical(run(TransferVariant::VNI, goal, seed, no_variance), run(TransferVariant::NI, goal, seed));
      expect_identical(run(TransferVariant::SMIMI, goal, seed, smimi_plain), run(TransferVariant::SMI, goal, seed));
      expect_identical(run(TransferVariant::MIDI, goal, seed, no_di), run(TransferVariant::MI, goal, seed));
    }
  }
}

TEST(Transfer, EveryVariantStaysFeasible) {
  for (const auto v : {TransferVariant::I, TransferVariant::MI, TransferVariant::NI, TransferVariant::VMI,
                       TransferVariant::VNI, TransferVariant::EMI, TransferVariant::SMI, TransferVariant::SMIMI,
                       TransferVariant::MIDI, TransferVariant::Admix}) {
    const auto r = run(v, Goal::Untargeted, 5);
    const auto seeds = support::random_batch(3, kShape, 5);
    const double eps = TransferConfig::defaults(Goal::Untargeted).budget.epsilon;
    ASSERT_EQ(r.candidates.size(), 10u) << attack_id(v);
    ASSERT_EQ(r.trace.size(), 10u);
    for (const auto& batch : r.candidates) {
      for (double d : linf_distance(batch, seeds)) EXPECT_LE(d, eps + 1e-12) << attack_id(v);
      for (double x : batch.data()) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
      }
    }
    for (std::size_t t = 1; t < r.trace.size(); ++t) EXPECT_GT(r.trace[t].elapsed_s, r.trace[t - 1].elapsed_s);
  }
}

TEST(Transfer, IdsRoundTrip) {
  for (const auto v : {TransferVariant::I, TransferVariant::MI, TransferVariant::NI, TransferVariant::VMI,
                       TransferVariant::VNI, TransferVariant::EMI, TransferVariant::SMI, TransferVariant::SMIMI,
                       TransferVariant::MIDI, TransferVariant::Admix, TransferVariant::OdsAug}) {
    EXPECT_EQ(transfer_variant_from_id(attack_id(v)), v);
  }
  EXPECT_FALSE(transfer_variant_from_id("fgsm").has_value());
}

TEST(Transfer, ProtocolDefaults) {
  const auto u = TransferConfig::defaults(Goal::Untargeted);
  const auto t = TransferConfig::defaults(Goal::Targeted);
  EXPECT_DOUBLE_EQ(u.budget.epsilon, 16.0 / 255.0);
  EXPECT_EQ(u.iterations, 10u);
  EXPECT_EQ(t.iterations, 40u);
  EXPECT_DOUBLE_EQ(u.alpha(), u.budget.epsilon / 10.0);
  EXPECT_DOUBLE_EQ(t.alpha(), t.budget.epsilon / 40.0);
}

TEST(Transfer, SpatialMapAdjoint) {
  const Shape s{2, 9, 9};
  auto rng = make_rng(3, 0, "test/adjoint");
  for (int trial = 0; trial < 40; ++trial) {
    SpatialMap m = trial % 2 == 0 ? SpatialMap::shift(s, static_cast<int>(rng.index(5)) - 2, static_cast<int>(rng.index(5)) - 2)
                                  : SpatialMap::diverse_input(s, 1.1 + 0.3 * rng.uniform(), rng);
    const auto x = support::random_vector(s.size(), 100 + trial, -1.0, 1.0);
    const auto y = support::random_vector(s.size(), 200 + trial, -1.0, 1.0);
    EXPECT_NEAR(support::dot(m.apply(x, s), y), support::dot(x, m.adjoint(y, s)), 1e-12);
  }
}

TEST(Transfer, ShiftMovesPixels) {
  const Shape s{1, 3, 3};
  const std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_EQ(SpatialMap::shift(s, 0, 1).apply(x, s), (std::vector<double>{1, 1, 2, 4, 4, 5, 7, 7, 8}));
  EXPECT_EQ(SpatialMap::shift(s, 0, 0).apply(x, s), x);
}

TEST(Transfer, DiverseInputWithZeroProbabilityIsIdentity) {
  auto rng = make_rng(0, 0, "t");
  const auto x = support::random_vector(64, 1);
  EXPECT_EQ(diverse_input_transform(x, kShape, 0.0, 1.1, rng), x);
}

TEST(Transfer, EnsembleGradientIsMeanOfModels) {
  const auto nets = surrogates();
  const auto x = support::random_vector(64, 4);
  const auto both = ensemble_gradient(nets, x, 2, Goal::Untargeted);
  const auto a = grad_input(nets[0], x, LossKind::CrossEntropy, 2, Goal::Untargeted);
  const auto b = grad_input(nets[1], x, LossKind::CrossEntropy, 2, Goal::Untargeted);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(both.gradient[i], 0.5 * (a.gradient[i] + b.gradient[i]), 1e-14);
  EXPECT_NEAR(both.mean_loss, 0.5 * (a.loss + b.loss), 1e-14);
}

TEST(Transfer, WhiteBoxUntargetedRaisesLoss) {
  const auto nets = surrogates();
  const auto seeds = support::random_batch(4, kShape, 9);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 4; ++i) labels.push_back(argmax(nets[0].logits(seeds.example(i))));
  const auto r = run_transfer_attack(TransferConfig::defaults(Goal::Untargeted), nets, seeds, labels);
  const auto before = local_metrics(nets, seeds, labels, Goal::Untargeted);
  EXPECT_GT(r.trace.back().local_loss, before.first);
}

TEST(Transfer, OptionsStopEarly) {
  const auto nets = surrogates();
  const auto seeds = support::random_batch(2, kShape, 1);
  const std::vector<std::size_t> labels = {0, 1};
  TransferOptions o;
  o.max_iterations = 50;
  o.keep_going = [](std::size_t next, double) { return next < 3; };
  EXPECT_EQ(run_transfer_attack(TransferConfig::defaults(Goal::Untargeted), nets, seeds, labels, o).candidates.size(), 3u);
}

TEST(Transfer, RejectsBadConfigs) {
  const auto nets = surrogates();
  const auto seeds = support::random_batch(2, kShape, 1);
  const std::vector<std::size_t> labels = {0, 1};
  auto cfg = TransferConfig::defaults(Goal::Untargeted, TransferVariant::OdsAug);
  EXPECT_THROW(run_transfer_attack(cfg, nets, seeds, labels), Error);
  cfg = TransferConfig::defaults(Goal::Untargeted);
  cfg.params.di_probability = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_THROW(run_transfer_attack(TransferConfig::defaults(Goal::Untargeted), {}, seeds, labels), Error);
}

TEST(Transfer, OdsDirectionIsASignVector) {
  const auto nets = surrogates();
  auto rng = make_rng(1, 0, "ods");
  for (double v : ods_direction(nets, support::random_vector(64, 2), rng)) {
    EXPECT_TRUE(v == 1.0 || v == -1.0 || v == 0.0);
  }
}
