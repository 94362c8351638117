// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "rblr/trainer.hpp"

using namespace rblr;
using rblr::oracle::central_difference;
using rblr::oracle::random_stack;
using rblr::oracle::random_tensor;
using rblr::oracle::vec_rel_error;

namespace {

// Two-class toy problem: label 1 where the first channel is positive.
Dataset toy_dataset(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset d;
  d.video = random_tensor(s, rng);
  const auto vol = static_cast<std::size_t>(s.volume());
  d.labels.resize(vol);
  d.loss_mask.assign(vol, 0);
  d.eval_mask.assign(vol, 1);
  for (std::size_t v = 0; v < vol; ++v) d.labels[v] = d.video.data()[v] > 0.0 ? 1 : 0;
  const auto plane = static_cast<std::size_t>(s.nx * s.ny);
  for (std::int64_t z : {std::int64_t{0}, s.nz - 1}) {
    for (std::size_t k = 0; k < plane; ++k) d.loss_mask[static_cast<std::size_t>(z) * plane + k] = 1;
  }
  d.labeled_slices = {0, static_cast<int>(s.nz - 1)};
  return d;
}

NetworkSpec toy_spec(Shape s, int m) {
  NetworkSpec spec;
  spec.input_shape = s;
  const int n = static_cast<int>(s.nchan);
  spec.layers = {{std::min(m, n), n, ResolutionChange::Identity},
                 {m, n * 8, ResolutionChange::HaarForward},
                 {std::min(m, n), n, ResolutionChange::HaarInverse}};
  return spec;
}

}  // namespace

TEST(TrainerTest, ZeroIterationsLeavesModelUnchanged) {
  const Dataset data = toy_dataset({4, 4, 4, 3}, 71);
  const NetworkSpec spec = toy_spec(data.video.shape(), 2);
  TrainConfig cfg;
  cfg.iterations = 0;
  cfg.seed = 5;
  Rng rng(cfg.seed);
  const Model init = initialize_model(spec, 2, rng);
  const TrainResult r = train(spec, cfg, data);
  EXPECT_EQ(r.model.stacks, init.stacks);
  EXPECT_EQ(r.model.head, init.head);
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_EQ(r.metrics[0].iter, 0);
}

TEST(TrainerTest, InitializationScale) {
  NetworkSpec spec;
  spec.input_shape = {4, 4, 4, 48};
  spec.layers = {{48, 48, ResolutionChange::Identity}};
  Rng rng(72);
  const Model m = initialize_model(spec, 2, rng);
  double s = 0.0;
  for (double w : m.stacks[0].weights()) s += w * w;
  const double var = s / static_cast<double>(m.stacks[0].weights().size());
  EXPECT_NEAR(var, 1.0 / (27.0 * 48.0), 0.05 / (27.0 * 48.0));
  for (double b : m.stacks[0].bias()) EXPECT_EQ(b, 0.0);
}

TEST(TrainerTest, IncreaseRankPreservesExistingRowsBitExact) {
  Rng rng(73);
  const KernelStack ks = random_stack(4, 48, rng, 0.3, true);
  const KernelStack big = increase_rank(ks, 8, 1e-3, rng);
  ASSERT_EQ(big.rows(), 8);
  ASSERT_EQ(big.cols(), 48);
  EXPECT_EQ(big.kernel_count(), 384u);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 48; ++j) {
      const auto a = ks.kernel(i, j);
      const auto b = big.kernel(i, j);
      EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    }
    EXPECT_EQ(big.bias()[i], ks.bias()[i]);
  }
  for (int i = 4; i < 8; ++i) EXPECT_EQ(big.bias()[i], 0.0);
  EXPECT_THROW(increase_rank(ks, 4, 1e-3, rng), std::invalid_argument);
}

TEST(TrainerTest, ZeroInitRankIncreaseLeavesLayerOutputUnchanged) {
  Rng rng(74);
  const KernelStack ks = random_stack(2, 5, rng, 0.3, true);
  const Tensor5D y = random_tensor({4, 4, 2, 5}, rng);
  const KernelStack big = increase_rank(ks, 4, 0.0, rng);
  EXPECT_LE(max_abs_diff(layer_apply(big, Activation::relu(), y), layer_apply(ks, Activation::relu(), y)), 1e-15);
}

TEST(TrainerTest, DecreaseRank) {
  Rng rng(75);
  const KernelStack ks = random_stack(8, 48, rng, 0.3, true);
  const KernelStack small = decrease_rank(ks, 4);
  EXPECT_EQ(small.kernel_count(), 192u);
  EXPECT_EQ(ks.kernel_count(), 384u);
  const KernelStack back = increase_rank(small, 8, 0.0, rng);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 48; ++j) {
      const auto a = ks.kernel(i, j);
      EXPECT_TRUE(std::equal(a.begin(), a.end(), back.kernel(i, j).begin()));
    }
  EXPECT_THROW(decrease_rank(ks, 0), std::invalid_argument);
  EXPECT_THROW(decrease_rank(ks, 8), std::invalid_argument);
  const KernelStack narrow = decrease_rank(random_stack(3, 4, rng), 1);
  for (int t = 0; t < 20; ++t) EXPECT_GE(layer_quadratic_form(narrow, random_tensor({3, 3, 3, 4}, rng)), -1e-12);
}

TEST(TrainerTest, PlateauDetection) {
  std::vector<double> halving, constant(20, 1.5), slow;
  double v = 1.0;
  for (int k = 0; k < 20; ++k, v *= 0.5) halving.push_back(v);
  // 0.1% decrease per window of 5 steps.
  const double step = std::pow(0.999, 1.0 / 5.0);
  v = 2.0;
  for (int k = 0; k < 20; ++k, v *= step) slow.push_back(v);
  EXPECT_FALSE(plateau_detect(halving, 5, 0.01));
  EXPECT_TRUE(plateau_detect(constant, 5, 0.01));
  EXPECT_TRUE(plateau_detect(slow, 5, 0.01));
  EXPECT_FALSE(plateau_detect(slow, 5, 0.0005));
  EXPECT_FALSE(plateau_detect(std::vector<double>(5, 1.0), 5, 0.01));
  EXPECT_THROW(plateau_detect(constant, 1, 0.01), std::invalid_argument);
}

TEST(TrainerTest, IoUExamples) {
  const std::vector<std::uint8_t> all(4, 1);
  const std::vector<int> a{0, 1, 1, 0};
  EXPECT_EQ(mean_iou(a, a, all, 2), 1.0);
  const std::vector<int> p{1, 0, 0, 0}, l{0, 1, 0, 0};
  EXPECT_EQ(class_iou(p, l, all, 1), 0.0);
  // Label has two foreground voxels, prediction hits one of them only.
  const std::vector<int> half_pred{1, 0, 0, 0}, half_label{1, 1, 0, 0};
  EXPECT_EQ(class_iou(half_pred, half_label, all, 1), 0.5);
  // Class absent from both prediction and label counts as 1.
  EXPECT_EQ(class_iou(a, a, all, 2), 1.0);
  const std::vector<std::uint8_t> none(4, 0);
  EXPECT_EQ(mean_iou(p, l, none, 2), 1.0);
}

TEST(TrainerTest, HeadGradientsMatchFiniteDifferences) {
  Rng rng(76);
  const Dataset data = toy_dataset({3, 3, 2, 4}, 77);
  Head head{3, 4, {}, {}};
  std::normal_distribution<double> d(0.0, 0.5);
  for (int k = 0; k < 12; ++k) head.weights.push_back(d(rng));
  for (int k = 0; k < 3; ++k) head.bias.push_back(d(rng));
  std::vector<int> labels = data.labels;
  for (std::size_t v = 0; v < labels.size(); v += 3) labels[v] = 2;
  Tensor5D out = random_tensor(data.video.shape(), rng);
  const auto ev = evaluate_head(head, out, labels, data.loss_mask);
  auto f = [&] { return evaluate_head(head, out, labels, data.loss_mask).loss; };

  std::vector<double*> wp, bp, op;
  for (double& w : head.weights) wp.push_back(&w);
  for (double& b : head.bias) bp.push_back(&b);
  for (double& v : out.data()) op.push_back(&v);
  EXPECT_LE(vec_rel_error(ev.grad_head.weights, central_difference(wp, f)), 1e-6);
  EXPECT_LE(vec_rel_error(ev.grad_head.bias, central_difference(bp, f)), 1e-6);
  const std::vector<double> go(ev.grad_output.data().begin(), ev.grad_output.data().end());
  EXPECT_LE(vec_rel_error(go, central_difference(op, f)), 1e-6);
  // Voxels outside the loss mask receive no gradient.
  for (std::size_t v = 0; v < data.loss_mask.size(); ++v) {
    if (!data.loss_mask[v]) EXPECT_EQ(ev.grad_output.data()[v], 0.0);
  }
}

TEST(TrainerTest, ZeroLearningRateLeavesParametersBitIdentical) {
  const Dataset data = toy_dataset({4, 4, 4, 3}, 78);
  const NetworkSpec spec = toy_spec(data.video.shape(), 2);
  for (auto opt : {OptimizerKind::SGD, OptimizerKind::Momentum, OptimizerKind::Adam}) {
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.iterations = 3;
    cfg.optimizer = opt;
    Rng rng(cfg.seed);
    const Model init = initialize_model(spec, 2, rng);
    const TrainResult r = train(spec, cfg, data);
    EXPECT_EQ(r.model.stacks, init.stacks);
    EXPECT_EQ(r.model.head, init.head);
  }
}

TEST(TrainerTest, OptimizerStateFollowsSlotResizes) {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.optimizer = OptimizerKind::Momentum;
  Optimizer opt(cfg);
  std::vector<double> p{1.0, 2.0};
  const std::vector<double> g{1.0, 1.0};
  opt.step({p}, {g});
  EXPECT_DOUBLE_EQ(p[0], 0.9);
  p.push_back(5.0);
  const std::vector<double> g3{1.0, 1.0, 1.0};
  opt.step({p}, {g3});
  // Old entries carry velocity 1.9; the new one starts from zero.
  EXPECT_DOUBLE_EQ(p[0], 0.9 - 0.19);
  EXPECT_DOUBLE_EQ(p[2], 5.0 - 0.1);
}

TEST(TrainerTest, SmokeTrainingReducesLoss) {
  const Dataset data = toy_dataset({8, 8, 4, 3}, 79);
  const NetworkSpec spec = toy_spec(data.video.shape(), 4);
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.iterations = 60;
  cfg.seed = 3;
  const TrainResult r = train(spec, cfg, data);
  ASSERT_EQ(r.metrics.size(), 61u);
  EXPECT_LT(r.metrics.back().loss, r.metrics.front().loss);
  EXPECT_EQ(r.wall_time_s.size(), r.metrics.size());
}

TEST(TrainerTest, RankScheduleGrowsAdaptiveLayersOnly) {
  const Dataset data = toy_dataset({4, 4, 4, 3}, 80);
  const NetworkSpec spec = toy_spec(data.video.shape(), 2);
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.iterations = 6;
  cfg.rank_schedule = {{RankEvent::Trigger::Iteration, 3, 10, 0.01, 4}};
  const TrainResult r = train(spec, cfg, data);
  ASSERT_EQ(r.rank_changes.size(), 1u);
  const auto& rc = r.rank_changes[0];
  EXPECT_EQ(rc.iteration, 3);
  EXPECT_EQ(rc.from_m, 2);
  EXPECT_EQ(rc.to_m, 4);
  EXPECT_LE(std::abs(rc.loss_zero_init - rc.loss_before), 1e-10 * std::abs(rc.loss_before));
  EXPECT_EQ(r.metrics[2].current_m, 2);
  EXPECT_EQ(r.metrics[3].current_m, 4);
  // Layers 0 and 2 have n = 3 and grow only to min(4, 3).
  EXPECT_EQ(r.model.spec.layers[0].m, 3);
  EXPECT_EQ(r.model.spec.layers[1].m, 4);
  EXPECT_EQ(r.model.spec.layers[2].m, 3);
  EXPECT_NO_THROW(check_params(r.model.spec, r.model.stacks));
}

TEST(TrainerTest, PlateauTriggeredRankChange) {
  const Dataset data = toy_dataset({4, 4, 4, 3}, 81);
  const NetworkSpec spec = toy_spec(data.video.shape(), 2);
  TrainConfig cfg;
  cfg.lr = 0.0;  // flat loss: the plateau fires as soon as the window fills
  cfg.iterations = 6;
  cfg.rank_schedule = {{RankEvent::Trigger::Plateau, 0, 2, 0.01, 4}};
  const TrainResult r = train(spec, cfg, data);
  ASSERT_EQ(r.rank_changes.size(), 1u);
  EXPECT_EQ(r.rank_changes[0].iteration, 3);
}

TEST(TrainerTest, TrainingIsDeterministic) {
  const Dataset data = toy_dataset({4, 4, 4, 3}, 82);
  const NetworkSpec spec = toy_spec(data.video.shape(), 2);
  TrainConfig cfg;
  cfg.iterations = 5;
  cfg.optimizer = OptimizerKind::Adam;
  cfg.rank_schedule = {{RankEvent::Trigger::Iteration, 2, 10, 0.01, 4}};
  cfg.seed = 11;
  EXPECT_EQ(metrics_csv(train(spec, cfg, data).metrics), metrics_csv(train(spec, cfg, data).metrics));
  const std::string csv = metrics_csv(train(spec, cfg, data).metrics);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iter,loss,mean_iou,current_m");
}

TEST(TrainerTest, DivergenceIsReported) {
  const Dataset data = toy_dataset({4, 4, 4, 3}, 83);
  const NetworkSpec spec = toy_spec(data.video.shape(), 2);
  TrainConfig cfg;
  cfg.lr = 1e12;
  cfg.iterations = 50;
  EXPECT_THROW(train(spec, cfg, data), DivergenceError);
}

TEST(TrainerTest, ShapeMismatchIsRejected) {
  const Dataset data = toy_dataset({4, 4, 4, 3}, 84);
  const NetworkSpec spec = toy_spec({8, 8, 4, 3}, 2);
  EXPECT_THROW(train(spec, TrainConfig{}, data), ShapeError);
  Dataset bad = data;
  bad.labels.pop_back();
  EXPECT_THROW(bad.validate(), ShapeError);
}
