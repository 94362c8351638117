// SPDX-License-Identifier: Apache-2.0
//
// Closed-form memory model for reversible multilevel networks.
//
// Assumptions: weights and states are stored as float32 (4 bytes), a
// reversible network keeps 3 live state tensors of the input size, and
// MB means 10^6 bytes.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rblr/network.hpp"

namespace rblr {

inline constexpr std::int64_t kStorageScalarBytes = 4;
inline constexpr std::int64_t kLiveStateCopies = 3;

inline double to_mb(std::int64_t bytes) { return static_cast<double>(bytes) / 1e6; }

struct MemoryReport {
  std::vector<std::int64_t> kernel_bytes_per_layer;
  std::int64_t kernel_bytes_total = 0;
  std::int64_t state_bytes = 0;
  std::int64_t total_bytes = 0;
};

/// Sum over layers of m * n * 27 * 4 bytes.
std::int64_t kernel_memory(std::span<const LayerSpec> layers);
std::int64_t kernel_memory(const NetworkSpec& spec);
/// 3 * nx * ny * nz * nchan * 4 bytes.
std::int64_t state_memory(const Shape& input);
MemoryReport memory_report(const NetworkSpec& spec);

/// c0 * 8^s; throws std::overflow_error if it does not fit in 64 bits.
std::int64_t channels_after_coarsening(std::int64_t c0, int coarsenings);

enum class ReferenceVariant { Blr4, Blr8, Full };

/// The 27-layer three-coarsening network with channel schedule
/// 6 -> 48 -> 384 -> 3072 -> 384 -> 48 -> 6. Layers 1-3 at full resolution,
/// then groups of 4 layers; Blr4 uses 4 block rows on coarsened levels,
/// Blr8 uses 8, Full uses square blocks everywhere.
NetworkSpec reference_network(ReferenceVariant variant, Shape input = {240, 424, 72, 6});

/// Layer list for `depth` layers split over 2s+1 resolution groups (extra
/// layers go to the earliest groups). The first layer of each later group
/// coarsens (down path) or refines (up path). With `rank`, coarsened levels
/// use min(rank, n) block rows and the finest level stays square.
std::vector<LayerSpec> multilevel_layers(std::int64_t input_channels, int depth, int coarsenings,
                                         std::optional<int> rank);

struct CurveRow {
  std::string config;
  int layers = 0;
  int coarsenings = 0;
  double kernel_mb = 0.0;
  double state_mb = 0.0;
  double total_mb = 0.0;
};

struct CurveSweep {
  std::int64_t input_channels = 3;
  std::int64_t fixed_side = 300;
  int fixed_layers = 50;
  int fixed_coarsenings = 2;
  int blr_rank = 8;
  std::vector<std::int64_t> input_sides{50, 100, 150, 200, 250, 300, 350, 400};
  std::vector<int> depths{10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  std::vector<int> coarsening_counts{0, 1, 2, 3, 4, 5};
};

/// The three sweeps (input size, depth, coarsening count) for a reversible
/// full network, a reversible BLR network and a non-reversible full network
/// that stores one state per layer. config is "<sweep>:<network>:<input>".
std::vector<CurveRow> memory_curves(const CurveSweep& sweep);

/// Header: config,layers,coarsenings,kernel_MB,state_MB,total_MB
std::string curves_csv(std::span<const CurveRow> rows);

}  // namespace rblr
