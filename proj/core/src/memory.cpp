// SPDX-License-Identifier: Apache-2.0

#include "rblr/memory.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>

namespace rblr {

std::int64_t kernel_memory(std::span<const LayerSpec> layers) {
  std::int64_t total = 0;
  for (const auto& l : layers) total += std::int64_t{l.m} * l.n * kKernelTaps * kStorageScalarBytes;
  return total;
}

std::int64_t kernel_memory(const NetworkSpec& spec) { return kernel_memory(spec.layers); }

std::int64_t state_memory(const Shape& input) { return kLiveStateCopies * input.size() * kStorageScalarBytes; }

MemoryReport memory_report(const NetworkSpec& spec) {
  MemoryReport r;
  for (const auto& l : spec.layers) {
    r.kernel_bytes_per_layer.push_back(kernel_memory(std::span<const LayerSpec>(&l, 1)));
    r.kernel_bytes_total += r.kernel_bytes_per_layer.back();
  }
  r.state_bytes = state_memory(spec.input_shape);
  r.total_bytes = r.kernel_bytes_total + r.state_bytes;
  return r;
}

std::int64_t channels_after_coarsening(std::int64_t c0, int coarsenings) {
  if (c0 < 1 || coarsenings < 0) throw std::invalid_argument("channels_after_coarsening: bad arguments");
  std::int64_t c = c0;
  for (int s = 0; s < coarsenings; ++s) {
    if (c > std::numeric_limits<std::int64_t>::max() / 8) throw std::overflow_error("channel count overflows");
    c *= 8;
  }
  return c;
}

NetworkSpec reference_network(ReferenceVariant variant, Shape input) {
  const int rank = variant == ReferenceVariant::Blr4 ? 4 : 8;
  const auto c0 = input.nchan;
  NetworkSpec spec;
  spec.input_shape = input;
  auto add_group = [&](int count, ResolutionChange first, std::int64_t n, bool coarse) {
    for (int k = 0; k < count; ++k) {
      LayerSpec l;
      l.n = static_cast<int>(n);
      l.m = (variant == ReferenceVariant::Full || !coarse) ? l.n : rank;
      l.resolution = k == 0 ? first : ResolutionChange::Identity;
      spec.layers.push_back(l);
    }
  };
  add_group(3, ResolutionChange::Identity, c0, false);
  add_group(4, ResolutionChange::HaarForward, c0 * 8, true);
  add_group(4, ResolutionChange::HaarForward, c0 * 64, true);
  add_group(4, ResolutionChange::HaarForward, c0 * 512, true);
  add_group(4, ResolutionChange::HaarInverse, c0 * 64, true);
  add_group(4, ResolutionChange::HaarInverse, c0 * 8, true);
  add_group(4, ResolutionChange::HaarInverse, c0, false);
  return spec;
}

std::vector<LayerSpec> multilevel_layers(std::int64_t input_channels, int depth, int coarsenings,
                                         std::optional<int> rank) {
  const int groups = 2 * coarsenings + 1;
  if (depth < groups) {
    throw std::invalid_argument(std::to_string(depth) + " layers cannot hold " + std::to_string(coarsenings) +
                                " coarsenings (need at least " + std::to_string(groups) + ")");
  }
  std::vector<LayerSpec> layers;
  const int base = depth / groups;
  const int extra = depth % groups;
  for (int g = 0; g < groups; ++g) {
    const int level = g <= coarsenings ? g : groups - 1 - g;
    const std::int64_t n = channels_after_coarsening(input_channels, level);
    if (n > std::numeric_limits<int>::max()) throw std::overflow_error("channel count exceeds int range");
    ResolutionChange first = ResolutionChange::Identity;
    if (g >= 1 && g <= coarsenings) first = ResolutionChange::HaarForward;
    if (g > coarsenings) first = ResolutionChange::HaarInverse;
    const int count = base + (g < extra ? 1 : 0);
    for (int k = 0; k < count; ++k) {
      LayerSpec l;
      l.n = static_cast<int>(n);
      l.m = (rank && level > 0) ? std::min(*rank, l.n) : l.n;
      l.resolution = k == 0 ? first : ResolutionChange::Identity;
      layers.push_back(l);
    }
  }
  return layers;
}

namespace {

void add_rows(std::vector<CurveRow>& rows, const std::string& sweep, const CurveSweep& cfg, std::int64_t side,
              int depth, int coarsenings) {
  const Shape input{side, side, side, cfg.input_channels};
  const std::string in = input.str();
  const auto full = multilevel_layers(cfg.input_channels, depth, coarsenings, std::nullopt);
  const auto blr = multilevel_layers(cfg.input_channels, depth, coarsenings, cfg.blr_rank);
  const double rev_states = to_mb(state_memory(input));
  const double all_states = to_mb(std::int64_t{depth} * input.size() * kStorageScalarBytes);
  const double full_k = to_mb(kernel_memory(full));
  const double blr_k = to_mb(kernel_memory(blr));
  rows.push_back({sweep + ":reversible-full:" + in, depth, coarsenings, full_k, rev_states, full_k + rev_states});
  rows.push_back({sweep + ":reversible-blr" + std::to_string(cfg.blr_rank) + ":" + in, depth, coarsenings, blr_k,
                  rev_states, blr_k + rev_states});
  rows.push_back({sweep + ":nonreversible-full:" + in, depth, coarsenings, full_k, all_states, full_k + all_states});
}

}  // namespace

std::vector<CurveRow> memory_curves(const CurveSweep& sweep) {
  std::vector<CurveRow> rows;
  for (auto side : sweep.input_sides) add_rows(rows, "input", sweep, side, sweep.fixed_layers, sweep.fixed_coarsenings);
  for (int d : sweep.depths) add_rows(rows, "layers", sweep, sweep.fixed_side, d, sweep.fixed_coarsenings);
  for (int s : sweep.coarsening_counts) add_rows(rows, "coarsenings", sweep, sweep.fixed_side, sweep.fixed_layers, s);
  return rows;
}

std::string curves_csv(std::span<const CurveRow> rows) {
  std::string out = "config,layers,coarsenings,kernel_MB,state_MB,total_MB\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%d,%d,%.6f,%.6f,%.6f\n", r.layers, r.coarsenings, r.kernel_mb, r.state_mb,
                  r.total_mb);
    out += r.config;
    out += buf;
  }
  return out;
}

}  // namespace rblr
