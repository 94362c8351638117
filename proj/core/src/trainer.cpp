// SPDX-License-Identifier: Apache-2.0

#include "rblr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

namespace rblr {

void Dataset::validate() const {
  const auto vol = static_cast<std::size_t>(video.volume());
  if (labels.size() != vol || loss_mask.size() != vol || eval_mask.size() != vol) {
    throw ShapeError("dataset labels/masks must have one entry per voxel of " + video.shape().str());
  }
  if (classes < 2) throw ShapeError("dataset needs at least 2 classes");
  for (int l : labels) {
    if (l < 0 || l >= classes) throw ShapeError("label " + std::to_string(l) + " outside [0, classes)");
  }
  if (std::none_of(loss_mask.begin(), loss_mask.end(), [](auto v) { return v != 0; })) {
    throw ShapeError("dataset loss mask selects no voxels");
  }
}

Model initialize_model(const NetworkSpec& spec, int classes, Rng& rng) {
  spec.validate();
  Model model;
  model.spec = spec;
  for (const auto& l : spec.layers) {
    KernelStack ks(l.m, l.n);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(27.0 * l.n));
    for (double& w : ks.weights()) w = dist(rng);
    model.stacks.push_back(std::move(ks));
  }
  const auto channels = static_cast<int>(spec.output_shape().nchan);
  model.head.classes = classes;
  model.head.channels = channels;
  model.head.weights.resize(static_cast<std::size_t>(classes) * static_cast<std::size_t>(channels));
  model.head.bias.assign(static_cast<std::size_t>(classes), 0.0);
  std::normal_distribution<double> hdist(0.0, 1.0 / std::sqrt(static_cast<double>(channels)));
  for (double& w : model.head.weights) w = hdist(rng);
  return model;
}

double class_iou(std::span<const int> pred, std::span<const int> label, std::span<const std::uint8_t> mask, int cls) {
  if (pred.size() != label.size() || pred.size() != mask.size()) throw ShapeError("class_iou: size mismatch");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const bool p = pred[i] == cls, l = label[i] == cls;
    inter += p && l;
    uni += p || l;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double mean_iou(std::span<const int> pred, std::span<const int> label, std::span<const std::uint8_t> mask,
                int classes) {
  double s = 0.0;
  for (int c = 0; c < classes; ++c) s += class_iou(pred, label, mask, c);
  return s / classes;
}

HeadEvaluation evaluate_head(const Head& head, const Tensor5D& output, std::span<const int> labels,
                             std::span<const std::uint8_t> mask) {
  if (output.channels() != head.channels) {
    throw ShapeError("head expects " + std::to_string(head.channels) + " channels, output has " +
                     output.shape().str());
  }
  const auto vol = static_cast<std::size_t>(output.volume());
  if (labels.size() != vol || mask.size() != vol) throw ShapeError("head: labels/mask size mismatch");

  const int C = head.classes;
  const int nc = head.channels;
  std::size_t count = 0;
  for (auto v : mask) count += v != 0;

  HeadEvaluation ev;
  ev.grad_output = Tensor5D(output.shape());
  ev.grad_head = Head{C, nc, std::vector<double>(head.weights.size(), 0.0), std::vector<double>(C, 0.0)};
  ev.predictions.resize(vol);
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;

  std::vector<double> feat(static_cast<std::size_t>(nc));
  std::vector<double> logits(static_cast<std::size_t>(C));
  double loss = 0.0;
  for (std::size_t v = 0; v < vol; ++v) {
    for (int c = 0; c < nc; ++c) feat[c] = output.channel(c)[v];
    for (int k = 0; k < C; ++k) {
      double s = head.bias[k];
      for (int c = 0; c < nc; ++c) s += head.weights[static_cast<std::size_t>(k) * nc + c] * feat[c];
      logits[k] = s;
    }
    const auto best = std::max_element(logits.begin(), logits.end());
    ev.predictions[v] = static_cast<int>(best - logits.begin());
    if (!mask[v]) continue;

    const double mx = *best;
    double z = 0.0;
    for (int k = 0; k < C; ++k) z += std::exp(logits[k] - mx);
    const double logz = mx + std::log(z);
    const int y = labels[v];
    loss += logz - logits[y];
    for (int k = 0; k < C; ++k) {
      const double d = (std::exp(logits[k] - logz) - (k == y ? 1.0 : 0.0)) * inv;
      ev.grad_head.bias[k] += d;
      for (int c = 0; c < nc; ++c) {
        ev.grad_head.weights[static_cast<std::size_t>(k) * nc + c] += d * feat[c];
        ev.grad_output.channel(c)[v] += d * head.weights[static_cast<std::size_t>(k) * nc + c];
      }
    }
  }
  ev.loss = loss * inv;
  return ev;
}

std::vector<int> predict(const Model& model, const Tensor5D& x) {
  const auto out = forward(model.spec, model.stacks, x).output;
  const std::vector<int> dummy_labels(static_cast<std::size_t>(out.volume()), 0);
  const std::vector<std::uint8_t> no_mask(static_cast<std::size_t>(out.volume()), 0);
  return evaluate_head(model.head, out, dummy_labels, no_mask).predictions;
}

KernelStack increase_rank(const KernelStack& ks, int m_new, double init_scale, Rng& rng) {
  if (m_new <= ks.rows()) {
    throw std::invalid_argument("increase_rank: new rank " + std::to_string(m_new) + " must exceed " +
                                std::to_string(ks.rows()));
  }
  if (!(init_scale >= 0.0)) throw std::invalid_argument("increase_rank: init_scale must be >= 0");
  KernelStack out(m_new, ks.cols());
  std::ranges::copy(ks.weights(), out.weights().begin());
  std::ranges::copy(ks.bias(), out.bias().begin());
  if (init_scale > 0.0) {
    std::normal_distribution<double> dist(0.0, init_scale);
    for (std::size_t k = ks.weights().size(); k < out.weights().size(); ++k) out.weights()[k] = dist(rng);
  }
  return out;
}

KernelStack decrease_rank(const KernelStack& ks, int m_new) {
  if (m_new < 1) throw std::invalid_argument("decrease_rank: new rank must be >= 1");
  if (m_new >= ks.rows()) {
    throw std::invalid_argument("decrease_rank: new rank " + std::to_string(m_new) + " must be below " +
                                std::to_string(ks.rows()));
  }
  const auto nw = static_cast<std::size_t>(m_new) * static_cast<std::size_t>(ks.cols()) * kKernelTaps;
  return KernelStack(m_new, ks.cols(), std::vector<double>(ks.weights().begin(), ks.weights().begin() + nw),
                     std::vector<double>(ks.bias().begin(), ks.bias().begin() + m_new));
}

bool plateau_detect(std::span<const double> loss_history, int window, double tau) {
  if (window < 2) throw std::invalid_argument("plateau_detect: window must be >= 2");
  if (loss_history.size() <= static_cast<std::size_t>(window)) return false;
  const double now = loss_history.back();
  const double then = loss_history[loss_history.size() - 1 - static_cast<std::size_t>(window)];
  if (then == 0.0) return true;
  return (then - now) / std::abs(then) < tau;
}

Optimizer::Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

void Optimizer::step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("optimizer: params/grads slot mismatch");
  m1_.resize(params.size());
  m2_.resize(params.size());
  ++t_;
  const double lr = cfg_.lr;
  for (std::size_t s = 0; s < params.size(); ++s) {
    auto p = params[s];
    auto g = grads[s];
    if (p.size() != g.size()) throw std::invalid_argument("optimizer: slot size mismatch");
    switch (cfg_.optimizer) {
      case OptimizerKind::SGD:
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
        break;
      case OptimizerKind::Momentum: {
        auto& v = m1_[s];
        v.resize(p.size(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) {
          v[i] = cfg_.momentum * v[i] + g[i];
          p[i] -= lr * v[i];
        }
        break;
      }
      case OptimizerKind::Adam: {
        auto& m = m1_[s];
        auto& v = m2_[s];
        m.resize(p.size(), 0.0);
        v.resize(p.size(), 0.0);
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
          p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
        }
        break;
      }
    }
  }
}

int current_block_rank(const Model& model, std::span<const std::size_t> adaptive_layers) {
  int m = 0;
  if (adaptive_layers.empty()) {
    for (const auto& l : model.spec.layers) m = std::max(m, l.m);
  } else {
    for (auto j : adaptive_layers) m = std::max(m, model.spec.layers[j].m);
  }
  return m;
}

Evaluation evaluate(const Model& model, const Dataset& data) {
  const auto out = forward(model.spec, model.stacks, data.video).output;
  auto ev = evaluate_head(model.head, out, data.labels, data.loss_mask);
  Evaluation r;
  r.loss = ev.loss;
  r.mean_iou = mean_iou(ev.predictions, data.labels, data.eval_mask, data.classes);
  r.predictions = std::move(ev.predictions);
  return r;
}

namespace {

double kernel_rms(const KernelStack& ks) {
  double s = 0.0;
  for (double w : ks.weights()) s += w * w;
  return ks.weights().empty() ? 0.0 : std::sqrt(s / static_cast<double>(ks.weights().size()));
}

// Applies a block-rank change to every adaptive layer; returns false if no
// layer changed. With zero_init, new rows are exactly zero.
bool change_rank(Model& model, std::span<const std::size_t> adaptive, int target, double factor, bool zero_init,
                 Rng& rng) {
  bool changed = false;
  for (auto j : adaptive) {
    auto& layer = model.spec.layers[j];
    const int m_new = std::min(target, layer.n);
    if (m_new == layer.m) continue;
    auto& ks = model.stacks[j];
    if (m_new > layer.m) {
      const double scale = zero_init ? 0.0 : factor * kernel_rms(ks);
      ks = increase_rank(ks, m_new, scale, rng);
    } else {
      ks = decrease_rank(ks, m_new);
    }
    layer.m = m_new;
    changed = true;
  }
  return changed;
}

}  // namespace

TrainResult train(const NetworkSpec& spec, const TrainConfig& config, const Dataset& data) {
  Rng rng(config.seed);
  Model model = initialize_model(spec, data.classes, rng);
  return train(std::move(model), config, data);
}

TrainResult train(Model model, const TrainConfig& config, const Dataset& data) {
  data.validate();
  model.spec.validate();
  check_params(model.spec, model.stacks);
  if (config.iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (!(config.lr >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (data.video.shape() != model.spec.input_shape) {
    throw ShapeError("dataset shape " + data.video.shape().str() + " does not match network input " +
                     model.spec.input_shape.str());
  }

  // Separate stream from initialization so the schedule does not perturb it.
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> adaptive;
  for (std::size_t j = 0; j < model.spec.layers.size(); ++j) {
    if (model.spec.layers[j].m < model.spec.layers[j].n) adaptive.push_back(j);
  }

  TrainResult result;
  std::vector<bool> fired(config.rank_schedule.size(), false);
  std::vector<double> history;
  Optimizer opt(config);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  for (int it = 0; it < config.iterations; ++it) {
    for (std::size_t e = 0; e < config.rank_schedule.size(); ++e) {
      if (fired[e]) continue;
      const auto& ev = config.rank_schedule[e];
      const bool due = ev.trigger == RankEvent::Trigger::Iteration
                           ? it >= ev.at_iteration
                           : (it >= ev.at_iteration && plateau_detect(history, ev.window, ev.tau));
      if (!due) continue;
      fired[e] = true;
      RankChangeRecord rec;
      rec.iteration = it;
      rec.from_m = current_block_rank(model, adaptive);
      rec.loss_before = evaluate(model, data).loss;
      Model probe = model;
      Rng unused(0);
      if (change_rank(probe, adaptive, ev.new_m, 0.0, true, unused)) {
        rec.loss_zero_init = evaluate(probe, data).loss;
      } else {
        rec.loss_zero_init = rec.loss_before;
      }
      change_rank(model, adaptive, ev.new_m, config.init_scale_factor, false, rng);
      rec.to_m = current_block_rank(model, adaptive);
      result.rank_changes.push_back(rec);
    }

    HeadEvaluation head_eval;
    const LossFn loss_fn = [&](const Tensor5D& out) {
      head_eval = evaluate_head(model.head, out, data.labels, data.loss_mask);
      return LossValue{head_eval.loss, head_eval.grad_output};
    };
    NetworkGradient g = gradient(model.spec, model.stacks, data.video, loss_fn);
    if (!std::isfinite(g.loss)) {
      throw DivergenceError("training diverged at iteration " + std::to_string(it) + ": loss is " +
                            std::to_string(g.loss));
    }
    history.push_back(g.loss);
    result.metrics.push_back({it, g.loss, mean_iou(head_eval.predictions, data.labels, data.eval_mask, data.classes),
                              current_block_rank(model, adaptive)});
    result.wall_time_s.push_back(elapsed());

    std::vector<std::span<double>> params;
    std::vector<std::span<const double>> grads;
    for (std::size_t j = 0; j < model.stacks.size(); ++j) {
      params.push_back(model.stacks[j].weights());
      grads.push_back(g.layers[j].kernels);
      params.push_back(model.stacks[j].bias());
      grads.push_back(g.layers[j].bias);
    }
    params.push_back(model.head.weights);
    grads.push_back(head_eval.grad_head.weights);
    params.push_back(model.head.bias);
    grads.push_back(head_eval.grad_head.bias);
    opt.step(params, grads);
  }

  const Evaluation final_eval = evaluate(model, data);
  if (!std::isfinite(final_eval.loss)) throw DivergenceError("training diverged: final loss is not finite");
  result.metrics.push_back(
      {config.iterations, final_eval.loss, final_eval.mean_iou, current_block_rank(model, adaptive)});
  result.wall_time_s.push_back(elapsed());
  result.model = std::move(model);
  return result;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = "iter,loss,mean_iou,current_m\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%d\n", r.iter, r.loss, r.mean_iou, r.current_m);
    out += buf;
  }
  return out;
}

}  // namespace rblr
