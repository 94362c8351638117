// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "commands.hpp"
#include "rblr/blr_layer.hpp"
#include "rblr/conv.hpp"
#include "rblr/haar.hpp"
#include "rblr/network.hpp"

namespace rblr::cli {

namespace {

using Gen = std::mt19937_64;

Tensor5D random_tensor(Shape s, Gen& g) {
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor5D t(s);
  for (double& v : t.data()) v = d(g);
  return t;
}

KernelStack random_stack(int m, int n, Gen& g, double scale = 0.3) {
  std::normal_distribution<double> d(0.0, scale);
  KernelStack ks(m, n);
  for (double& w : ks.weights()) w = d(g);
  for (double& b : ks.bias()) b = d(g);
  return ks;
}

double rel_gap(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s > 0 ? std::abs(a - b) / s : 0.0;
}

CheckResult check(std::string name, double error, double tol) {
  return {std::move(name), error, tol, std::isfinite(error) && error <= tol};
}

NetworkSpec toy_network(Shape input, std::initializer_list<std::pair<int, ResolutionChange>> layers) {
  NetworkSpec spec;
  spec.input_shape = input;
  Shape s = input;
  for (auto [m, r] : layers) {
    s = resolution_output_shape(r, s);
    const int n = static_cast<int>(s.nchan);
    spec.layers.push_back({std::min(m, n), n, r});
  }
  spec.validate();
  return spec;
}

NetworkParams toy_params(const NetworkSpec& spec, Gen& g) {
  NetworkParams p;
  for (const auto& l : spec.layers) p.push_back(random_stack(l.m, l.n, g));
  return p;
}

LossFn squared_loss(Tensor5D target) {
  return [target = std::move(target)](const Tensor5D& out) {
    Tensor5D r = sub(out, target);
    const double n = norm2(r);
    return LossValue{0.5 * n * n, std::move(r)};
  };
}

}  // namespace

std::vector<CheckResult> run_verify_checks(const std::string& fault) {
  using R = ResolutionChange;
  std::vector<CheckResult> results;
  Gen g(20240601);

  {
    const Tensor5D x = random_tensor({8, 8, 8, 2}, g);
    results.push_back(check("haar_round_trip", relative_error(haar_inverse(haar_forward(x)), x), 1e-13));
    const Tensor5D y = random_tensor({4, 4, 4, 16}, g);
    results.push_back(check("haar_adjoint_is_inverse", rel_gap(dot(haar_forward(x), y), dot(x, haar_inverse(y))), 1e-12));
  }

  {
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      Kernel3D k;
      std::normal_distribution<double> d(0.0, 1.0);
      for (double& v : k) v = d(g);
      const Tensor5D x = random_tensor({5, 4, 3, 1}, g);
      const Tensor5D y = random_tensor({5, 4, 3, 1}, g);
      const Tensor5D kty = fault == "adjoint" ? conv3d(k, y) : conv3d_adjoint(k, y);
      worst = std::max(worst, rel_gap(dot(conv3d(k, x), y), dot(x, kty)));
    }
    results.push_back(check("conv_adjoint_inner_product", worst, 1e-12));

    const KernelStack ks = random_stack(3, 4, g);
    const Tensor5D x = random_tensor({5, 5, 5, 4}, g);
    const Tensor5D y = random_tensor({5, 5, 5, 3}, g);
    results.push_back(check("block_adjoint_inner_product", rel_gap(dot(apply_K(ks, x), y), dot(x, apply_Kt(ks, y))), 1e-12));
  }

  {
    double most_negative = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const KernelStack ks = random_stack(1 + trial % 4, 4, g);
      most_negative = std::min(most_negative, layer_quadratic_form(ks, random_tensor({3, 3, 2, 4}, g)));
    }
    results.push_back(check("layer_psd", -most_negative, 1e-12));

    const KernelStack ks = random_stack(2, 3, g);
    reset_conv_counts();
    layer_apply(ks, Activation::relu(), random_tensor({4, 4, 2, 3}, g));
    const auto c = conv_counts();
    results.push_back(check("layer_conv_count_2mn", std::abs(static_cast<double>(c.total()) - 12.0), 0.0));
  }

  {
    const NetworkSpec spec = toy_network({16, 16, 8, 3}, {{2, R::Identity}, {2, R::Identity}, {4, R::HaarForward},
                                                          {4, R::Identity}, {6, R::HaarForward}, {6, R::Identity},
                                                          {6, R::Identity}, {6, R::Identity}, {4, R::HaarInverse},
                                                          {4, R::Identity}, {2, R::HaarInverse}, {2, R::Identity}});
    const NetworkParams params = toy_params(spec, g);
    const Tensor5D x = random_tensor(spec.input_shape, g);
    const auto stored = forward_all_states(spec, params, x);
    LeapfrogPair last = stored.back();
    if (fault == "reconstruction") last.curr.data()[0] += 1e-6;
    const auto rebuilt = reconstruct_all_states(spec, params, last);
    double worst = 0.0;
    for (std::size_t j = 0; j < stored.size(); ++j) {
      worst = std::max({worst, relative_error(rebuilt[j].prev, stored[j].prev),
                        relative_error(rebuilt[j].curr, stored[j].curr)});
    }
    results.push_back(check("reconstruction", worst, 1e-10));
  }

  {
    const NetworkSpec spec = toy_network({4, 4, 2, 2}, {{1, R::Identity}, {3, R::HaarForward}, {2, R::HaarInverse}});
    NetworkParams params = toy_params(spec, g);
    const Tensor5D x = random_tensor(spec.input_shape, g);
    const LossFn loss = squared_loss(random_tensor(spec.output_shape(), g));
    NetworkGradient grad = gradient(spec, params, x, loss);
    if (fault == "gradient") grad.layers[0].kernels[0] += 1e-3;

    std::vector<double> analytic, numeric;
    const double step = 1e-6;
    for (std::size_t j = 0; j < params.size(); ++j) {
      auto probe = [&](double& p, double gval) {
        const double orig = p;
        p = orig + step;
        const double fp = loss(forward(spec, params, x).output).loss;
        p = orig - step;
        const double fm = loss(forward(spec, params, x).output).loss;
        p = orig;
        numeric.push_back((fp - fm) / (2 * step));
        analytic.push_back(gval);
      };
      auto w = params[j].weights();
      for (std::size_t k = 0; k < w.size(); ++k) probe(w[k], grad.layers[j].kernels[k]);
      auto b = params[j].bias();
      for (std::size_t k = 0; k < b.size(); ++k) probe(b[k], grad.layers[j].bias[k]);
    }
    double diff = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
      diff = std::max(diff, std::abs(analytic[k] - numeric[k]));
      scale = std::max(scale, std::abs(numeric[k]));
    }
    results.push_back(check("gradient_finite_difference", diff / scale, 1e-6));

    const NetworkGradient ref = gradient_stored(spec, params, x, loss);
    double worst = 0.0;
    for (std::size_t j = 0; j < params.size(); ++j) {
      for (std::size_t k = 0; k < ref.layers[j].kernels.size(); ++k) {
        worst = std::max(worst, std::abs(grad.layers[j].kernels[k] - ref.layers[j].kernels[k]));
      }
    }
    double ref_scale = 0.0;
    for (const auto& l : ref.layers)
      for (double v : l.kernels) ref_scale = std::max(ref_scale, std::abs(v));
    results.push_back(check("gradient_vs_stored_states", worst / ref_scale, 1e-12));
  }

  {
    std::vector<std::size_t> peaks;
    for (int depth : {10, 20, 30}) {
      NetworkSpec spec;
      spec.input_shape = {4, 4, 4, 2};
      for (int k = 0; k < depth; ++k) spec.layers.push_back({1, 2, ResolutionChange::Identity});
      const NetworkParams params = toy_params(spec, g);
      const Tensor5D x = random_tensor(spec.input_shape, g);
      MemoryProbe probe;
      gradient(spec, params, x, squared_loss(x), &probe);
      peaks.push_back(probe.states.peak());
    }
    const bool same = std::all_of(peaks.begin(), peaks.end(), [&](auto p) { return p == peaks[0]; });
    const double worst = static_cast<double>(*std::max_element(peaks.begin(), peaks.end()));
    CheckResult r = check("live_states_depth_10_20_30", worst, 4.0);
    r.passed = r.passed && same;
    results.push_back(r);
  }

  return results;
}

}  // namespace rblr::cli
