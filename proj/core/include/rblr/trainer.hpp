// SPDX-License-Identifier: Apache-2.0
//
// Segmentation head, masked cross-entropy, optimizers and the training loop
// with adaptive block rank.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rblr/network.hpp"

namespace rblr {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Per-voxel linear map from the final state channels to class logits
/// (a 1x1x1 convolution), followed by softmax.
struct Head {
  int classes = 2;
  int channels = 1;
  /// Row-major [class][channel].
  std::vector<double> weights;
  std::vector<double> bias;

  friend bool operator==(const Head&, const Head&) = default;
};

struct Model {
  NetworkSpec spec;
  NetworkParams stacks;
  Head head;
};

/// Voxel-wise labels and masks on the input grid (x fastest, then y, then z).
struct Dataset {
  Tensor5D video;
  std::vector<int> labels;
  /// Voxels that enter the loss (e.g. the annotated time slices).
  std::vector<std::uint8_t> loss_mask;
  /// Voxels where ground truth is known, used for IoU reporting.
  std::vector<std::uint8_t> eval_mask;
  int classes = 2;
  std::vector<int> labeled_slices;

  void validate() const;
};

/// Kernels ~ Normal(0, 1/(27 n)), biases zero, head ~ Normal(0, 1/channels).
Model initialize_model(const NetworkSpec& spec, int classes, Rng& rng);

/// IoU of one class restricted to mask; an empty union gives 1.
double class_iou(std::span<const int> pred, std::span<const int> label, std::span<const std::uint8_t> mask, int cls);
/// Mean of class_iou over classes [0, classes).
double mean_iou(std::span<const int> pred, std::span<const int> label, std::span<const std::uint8_t> mask,
                int classes);

struct HeadEvaluation {
  double loss = 0.0;
  Tensor5D grad_output;
  Head grad_head;
  std::vector<int> predictions;
};

/// Mean cross-entropy over masked voxels, its gradients and the argmax map.
HeadEvaluation evaluate_head(const Head& head, const Tensor5D& output, std::span<const int> labels,
                             std::span<const std::uint8_t> mask);

std::vector<int> predict(const Model& model, const Tensor5D& x);

/// Appends block rows drawn from Normal(0, init_scale^2) with zero bias.
/// Existing rows are copied bit for bit.
KernelStack increase_rank(const KernelStack& ks, int m_new, double init_scale, Rng& rng);
/// Keeps the first m_new block rows.
KernelStack decrease_rank(const KernelStack& ks, int m_new);

/// True iff (loss[t-window] - loss[t]) / |loss[t-window]| < tau with t the
/// last entry; false when the history is shorter than window + 1.
bool plateau_detect(std::span<const double> loss_history, int window, double tau);

enum class OptimizerKind { SGD, Momentum, Adam };

struct RankEvent {
  enum class Trigger { Iteration, Plateau };
  Trigger trigger = Trigger::Iteration;
  int at_iteration = 0;
  int window = 10;
  double tau = 0.01;
  int new_m = 8;
};

struct TrainConfig {
  double lr = 0.01;
  int iterations = 100;
  OptimizerKind optimizer = OptimizerKind::SGD;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// New block rows start at init_scale_factor * RMS(existing kernels).
  double init_scale_factor = 1e-3;
  std::vector<RankEvent> rank_schedule;
  std::uint64_t seed = 0;
};

struct MetricsRow {
  int iter = 0;
  double loss = 0.0;
  double mean_iou = 0.0;
  int current_m = 0;
};

struct RankChangeRecord {
  int iteration = 0;
  int from_m = 0;
  int to_m = 0;
  /// Loss right before the change.
  double loss_before = 0.0;
  /// Loss after the same change with zero-initialised new rows (increases only).
  double loss_zero_init = 0.0;
};

struct TrainResult {
  Model model;
  /// One row per iteration (parameters before that iteration's update)
  /// plus a final row evaluating the trained parameters.
  std::vector<MetricsRow> metrics;
  std::vector<double> wall_time_s;
  std::vector<RankChangeRecord> rank_changes;
};

/// Per-slot optimizer state. Slots may grow or shrink between steps (rank
/// changes); state for surviving entries is kept and new entries start at 0.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg);
  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads);

 private:
  TrainConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m1_;
  std::vector<std::vector<double>> m2_;
};

/// Block rank reported in the metrics: the largest m over layers that
/// started with m < n (or over all layers if none did).
int current_block_rank(const Model& model, std::span<const std::size_t> adaptive_layers);

TrainResult train(const NetworkSpec& spec, const TrainConfig& config, const Dataset& data);
TrainResult train(Model model, const TrainConfig& config, const Dataset& data);

struct Evaluation {
  double loss = 0.0;
  double mean_iou = 0.0;
  std::vector<int> predictions;
};
Evaluation evaluate(const Model& model, const Dataset& data);

std::string metrics_csv(std::span<const MetricsRow> rows);

}  // namespace rblr
