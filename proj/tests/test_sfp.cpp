#include <gtest/gtest.h>

#include <map>
#include <vector>

#include "prunekit/sfp.hpp"
#include "test_util.hpp"

using namespace prunekit;

namespace {

// One prunable conv layer: the 4-filter bank with filters
// {(0,0),(1,0),(0,1),(10,10)}.
WeightContainer fixture_container() {
  WeightContainer container;
  container.metadata["model"] = "fixture";
  container.add_layer("conv1", Tensor({4, 2, 1, 1}, {0, 0, 1, 0, 0, 1, 10, 10}));
  return container;
}

PruneConfig make_config(double theta, Criterion criterion = Criterion::Fpgm,
                        PrunablePolicy policy = {{"*"}, {}}) {
  PruneConfig config;
  config.theta = theta;
  config.criterion = criterion;
  config.prunable_layers = std::move(policy);
  return config;
}

std::size_t zero_filter_count(const Tensor& tensor) {
  const std::size_t n = tensor.shape[0];
  const std::size_t stride = tensor.elements() / n;
  std::size_t zeros = 0;
  for (std::size_t j = 0; j < n; ++j) {
    bool all_zero = true;
    for (std::size_t i = 0; i < stride; ++i)
      if (tensor.data[j * stride + i] != 0.0f) all_zero = false;
    if (all_zero) ++zeros;
  }
  return zeros;
}

}  // namespace

TEST(Schedule, DefaultsMatchTheTrainingRecipe) {
  const SfpSchedule schedule;
  EXPECT_EQ(schedule.soft_epochs, 200);
  EXPECT_EQ(schedule.finetune_epochs, 10);
  EXPECT_DOUBLE_EQ(schedule.lr_initial, 1e-3);
  EXPECT_DOUBLE_EQ(schedule.soft_lr(0), 1e-3);
  EXPECT_DOUBLE_EQ(schedule.soft_lr(49), 1e-3);
  EXPECT_DOUBLE_EQ(schedule.soft_lr(50), 1e-4);
  EXPECT_DOUBLE_EQ(schedule.soft_lr(100), 1e-5);
  EXPECT_DOUBLE_EQ(schedule.soft_lr(199), 1e-5);
  EXPECT_DOUBLE_EQ(schedule.finetune_lr_at(0), 1e-3);
  EXPECT_DOUBLE_EQ(schedule.finetune_lr_at(4), 1e-3);
  EXPECT_DOUBLE_EQ(schedule.finetune_lr_at(5), 1e-4);
  EXPECT_DOUBLE_EQ(schedule.finetune_lr_at(9), 1e-4);
  EXPECT_NO_THROW(schedule.validate());
}

TEST(Schedule, RejectsMalformedSchedules) {
  SfpSchedule schedule;
  schedule.lr_steps = {{100, 0.1}, {50, 0.1}};
  EXPECT_THROW(schedule.validate(), Error);
  schedule = SfpSchedule();
  schedule.lr_steps = {{250, 0.1}};
  EXPECT_THROW(schedule.validate(), Error);
  schedule = SfpSchedule();
  schedule.finetune_lr = {{3, 1e-3}};
  EXPECT_THROW(schedule.validate(), Error);
  schedule = SfpSchedule();
  schedule.soft_epochs = 0;
  EXPECT_THROW(schedule.validate(), Error);
}

TEST(DeriveMasks, ThetaZeroKeepsEverything) {
  const auto masks = derive_masks(fixture_container(), make_config(0.0), 0);
  ASSERT_EQ(masks.size(), 1u);
  for (bool kept : masks.at("conv1").keep) EXPECT_TRUE(kept);
}

TEST(DeriveMasks, FpgmFixturePrunesFilterOne) {
  const auto masks = derive_masks(fixture_container(), make_config(0.25), 3);
  const PruneMask& mask = masks.at("conv1");
  EXPECT_EQ(mask.keep, (std::vector<bool>{true, false, true, true}));
  EXPECT_EQ(mask.pruned_count(), 1u);
  EXPECT_EQ(mask.epoch, 3);
  EXPECT_EQ(mask.criterion, Criterion::Fpgm);
  EXPECT_DOUBLE_EQ(mask.theta, 0.25);
}

TEST(DeriveMasks, PolicyFiltersLayers) {
  WeightContainer container;
  container.add_layer("conv1", Tensor({2, 1, 1, 1}, {1, 2}));
  container.add_layer("conv2", Tensor({2, 1, 1, 1}, {3, 4}));
  container.add_layer("head.cls", Tensor({2, 1, 1, 1}, {5, 6}));
  container.add_layer("conv1.bias", Tensor({2}, {0, 0}));  // 1-D, never prunable

  const auto masks = derive_masks(container, make_config(0.5, Criterion::L1Norm, {{"*"}, {"head.*"}}), 0);
  EXPECT_EQ(masks.size(), 2u);
  EXPECT_TRUE(masks.contains("conv1"));
  EXPECT_TRUE(masks.contains("conv2"));
  EXPECT_FALSE(masks.contains("head.cls"));
}

TEST(DeriveMasks, RaisesWhenNothingMatches) {
  try {
    derive_masks(fixture_container(), make_config(0.5, Criterion::Fpgm, {{"*"}, {"*"}}), 0);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::empty_policy_match);
    EXPECT_NE(std::string(e.what()).find("no layer matches"), std::string::npos);
  }
}

TEST(DeriveMasks, IsDeterministic) {
  testutil::TempDir dir("derive");
  SplitMix64 rng(17);
  WeightContainer container;
  container.add_layer("conv", testutil::random_conv_tensor(rng, 10, 3, 3));
  const auto first = derive_masks(container, make_config(0.4), 7);
  const auto second = derive_masks(container, make_config(0.4), 7);
  EXPECT_EQ(first.at("conv").keep, second.at("conv").keep);
}

TEST(ApplyMasks, AllKeepIsIdentity) {
  const WeightContainer container = fixture_container();
  const auto masks = derive_masks(container, make_config(0.0), 0);
  EXPECT_TRUE(bit_equal(container, apply_masks(container, masks)));
}

TEST(ApplyMasks, ZeroesExactlyThePrunedFilters) {
  WeightContainer container;
  container.add_layer("conv1", Tensor({2, 1, 1, 1}, {5.0f, 7.0f}));
  PruneMask mask{"conv1", {false, true}, 0, Criterion::L1Norm, 0.5};
  const WeightContainer masked = apply_masks(container, {{"conv1", mask}});
  EXPECT_EQ(masked.at("conv1").data, (std::vector<float>{0.0f, 7.0f}));
}

TEST(ApplyMasks, IsIdempotentOnRandomContainers) {
  SplitMix64 rng(19);
  for (int iter = 0; iter < 20; ++iter) {
    WeightContainer container;
    container.add_layer("conv", testutil::random_conv_tensor(rng, 1 + rng.next_below(10),
                                                             1 + rng.next_below(4), 3));
    container.add_layer("bias", testutil::random_tensor(rng, 1));
    const auto masks = derive_masks(container, make_config(0.5), 0);
    const WeightContainer once = apply_masks(container, masks);
    const WeightContainer twice = apply_masks(once, masks);
    EXPECT_TRUE(bit_equal(once, twice)) << "iteration " << iter;
  }
}

TEST(ApplyMasks, RejectsShapeMismatches) {
  WeightContainer container;
  container.add_layer("conv1", Tensor({2, 1, 1, 1}, {5.0f, 7.0f}));
  PruneMask wrong{"conv1", {false, true, true}, 0, Criterion::L1Norm, 0.5};
  EXPECT_THROW(apply_masks(container, {{"conv1", wrong}}), Error);

  WeightContainer dense;
  dense.add_layer("conv1", Tensor({2, 2}, {1, 2, 3, 4}));
  PruneMask mask{"conv1", {false, true}, 0, Criterion::L1Norm, 0.5};
  EXPECT_THROW(apply_masks(dense, {{"conv1", mask}}), Error);
}

// Learning-rate trace over the full default schedule: 1e-3 for epochs 0-49,
// 1e-4 for 50-99, 1e-5 for 100-199, then 1e-3 for five fine-tune epochs and
// 1e-4 for the last five.
TEST(StepEpoch, LearningRateTraceMatchesTheDefaultSchedule) {
  SfpState state;
  state.config = make_config(0.25);
  WeightContainer weights = fixture_container();

  std::vector<double> trace{state.config.schedule.soft_lr(0)};
  std::vector<bool> freeze_trace{false};
  while (state.phase != SfpPhase::Done) {
    SfpStepResult step = step_epoch(std::move(state), std::move(weights));
    state = std::move(step.state);
    weights = std::move(step.weights);
    if (state.phase != SfpPhase::Done) {
      trace.push_back(step.directive.lr);
      freeze_trace.push_back(step.directive.freeze_pruned);
    }
  }

  ASSERT_EQ(state.epoch, 210);
  ASSERT_EQ(trace.size(), 210u);
  for (int epoch = 0; epoch < 210; ++epoch) {
    double expected = 1e-3;
    if (epoch >= 50 && epoch < 100) expected = 1e-4;
    if (epoch >= 100 && epoch < 200) expected = 1e-5;
    if (epoch >= 200 && epoch < 205) expected = 1e-3;
    if (epoch >= 205) expected = 1e-4;
    EXPECT_DOUBLE_EQ(trace[static_cast<std::size_t>(epoch)], expected) << "epoch " << epoch;
    EXPECT_EQ(freeze_trace[static_cast<std::size_t>(epoch)], epoch >= 200) << "epoch " << epoch;
  }
}

TEST(StepEpoch, FreshStateReturnsInitialRateWithoutFreezing) {
  SfpState state;
  state.config = make_config(0.25);
  const SfpStepResult step = step_epoch(std::move(state), fixture_container());
  EXPECT_DOUBLE_EQ(step.directive.lr, 1e-3);
  EXPECT_FALSE(step.directive.freeze_pruned);
  EXPECT_EQ(step.state.epoch, 1);
  EXPECT_EQ(step.state.phase, SfpPhase::Soft);
}

TEST(StepEpoch, SoftBoundariesZeroExactlyFloorNTheta) {
  SplitMix64 rng(23);
  SfpState state;
  state.config = make_config(0.3);
  state.config.schedule.soft_epochs = 6;
  state.config.schedule.lr_steps = {{3, 0.1}};
  WeightContainer weights;
  weights.add_layer("conv_a", testutil::random_conv_tensor(rng, 10, 2, 3));
  weights.add_layer("conv_b", testutil::random_conv_tensor(rng, 7, 3, 1));

  while (state.phase == SfpPhase::Soft) {
    SfpStepResult step = step_epoch(std::move(state), std::move(weights));
    state = std::move(step.state);
    weights = std::move(step.weights);
    EXPECT_EQ(zero_filter_count(weights.at("conv_a")), 3u);  // floor(10*0.3)
    EXPECT_EQ(zero_filter_count(weights.at("conv_b")), 2u);  // floor(7*0.3)

    // simulate a training epoch: nudge every weight, zeroed ones included
    WeightContainer updated;
    updated.metadata = weights.metadata;
    for (const auto& [name, tensor] : weights.layers()) {
      Tensor next = tensor;
      for (float& v : next.data) v += static_cast<float>(rng.next_uniform(-0.05, 0.05));
      updated.add_layer(name, next);
    }
    weights = std::move(updated);
  }
}

// A filter pruned at one boundary must be eligible again at the next: no
// permanently-pruned memory.
TEST(StepEpoch, PrunedFiltersCanRecoverInTheSoftPhase) {
  SfpState state;
  state.config = make_config(0.25);
  SfpStepResult first = step_epoch(std::move(state), fixture_container());
  EXPECT_EQ(first.state.masks.at("conv1").keep, (std::vector<bool>{true, false, true, true}));

  // trainer moves the pruned filter far away from the pack
  WeightContainer updated;
  updated.metadata = first.weights.metadata;
  Tensor tensor = first.weights.at("conv1");
  tensor.data[2] = 100.0f;
  tensor.data[3] = 100.0f;
  updated.add_layer("conv1", tensor);

  const SfpStepResult second = step_epoch(std::move(first.state), std::move(updated));
  EXPECT_TRUE(second.state.masks.at("conv1").keep[1]);
  EXPECT_EQ(second.state.masks.at("conv1").pruned_count(), 1u);
}

TEST(StepEpoch, HardFinetuneFreezesMasksAndReZeroes) {
  SplitMix64 rng(29);
  SfpState state;
  state.config = make_config(0.5);
  state.config.schedule.soft_epochs = 4;
  state.config.schedule.lr_steps = {{2, 0.1}};
  WeightContainer weights;
  weights.add_layer("conv", testutil::random_conv_tensor(rng, 8, 2, 3));

  while (state.phase == SfpPhase::Soft) {
    SfpStepResult step = step_epoch(std::move(state), std::move(weights));
    state = std::move(step.state);
    weights = std::move(step.weights);
  }
  const std::vector<bool> frozen = state.masks.at("conv").keep;

  while (state.phase == SfpPhase::HardFinetune) {
    // a non-compliant trainer writes into pruned filters; the step must
    // re-zero them and leave the mask untouched
    WeightContainer dirty;
    dirty.metadata = weights.metadata;
    Tensor tensor = weights.at("conv");
    for (float& v : tensor.data) v += 0.5f;
    dirty.add_layer("conv", tensor);

    SfpStepResult step = step_epoch(std::move(state), std::move(dirty));
    state = std::move(step.state);
    weights = std::move(step.weights);
    EXPECT_EQ(state.masks.at("conv").keep, frozen);
    EXPECT_EQ(zero_filter_count(weights.at("conv")), 4u);
    EXPECT_TRUE(step.directive.freeze_pruned);
  }
  EXPECT_EQ(state.phase, SfpPhase::Done);
  EXPECT_EQ(state.epoch, 14);
}

TEST(StepEpoch, RaisesOnFinishedRuns) {
  SfpState state;
  state.config = make_config(0.25);
  state.phase = SfpPhase::Done;
  try {
    step_epoch(std::move(state), fixture_container());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::invalid_state);
  }
}

TEST(Checkpoint, RoundTripsStateAndWeights) {
  testutil::TempDir dir("checkpoint");
  SfpState state;
  state.config = make_config(0.25);
  SfpStepResult step = step_epoch(std::move(state), fixture_container());

  save_checkpoint(step.state, step.weights, dir.path(), "demo");
  EXPECT_TRUE(std::filesystem::exists(dir.file("demo.sfp.json")));
  EXPECT_TRUE(std::filesystem::exists(dir.file("demo.pktc")));

  const auto [restored, weights] = load_checkpoint(dir.path(), "demo", make_config(0.25));
  EXPECT_EQ(restored.phase, step.state.phase);
  EXPECT_EQ(restored.epoch, step.state.epoch);
  ASSERT_EQ(restored.masks.size(), step.state.masks.size());
  EXPECT_EQ(restored.masks.at("conv1").keep, step.state.masks.at("conv1").keep);
  EXPECT_TRUE(bit_equal(weights, step.weights));

  // a restored run keeps stepping from where it left off
  const SfpStepResult resumed = step_epoch(restored, weights);
  EXPECT_EQ(resumed.state.epoch, 2);
}
