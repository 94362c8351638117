// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration shared by the rblr subcommands.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rblr/io.hpp"
#include "rblr/memory.hpp"
#include "rblr/network.hpp"
#include "rblr/trainer.hpp"

namespace rblr::cli {

/// Invalid or unknown configuration entries; the message names the key path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SyntheticData {
  std::int64_t nx = 32;
  std::int64_t ny = 32;
  std::int64_t nt = 16;
  std::uint64_t seed = 1;
  int coarsenings = 0;
};

struct FramesData {
  std::filesystem::path manifest;
  std::filesystem::path labels;
  std::vector<int> labeled_slices;
  int classes = 2;
};

struct PlanOptions {
  bool sweep = false;
  CurveSweep curves;
};

struct RunConfig {
  std::optional<NetworkSpec> network;
  TrainConfig train;
  std::optional<SyntheticData> synthetic;
  std::optional<FramesData> frames;
  PlanOptions plan;
  std::filesystem::path out_dir = "rblr_out";
  /// Directory of the config file; relative data paths resolve against it.
  /// The output directory is taken relative to the working directory.
  std::filesystem::path base_dir = ".";
};

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
RunConfig load_config(const std::filesystem::path& path);

/// The dataset described by the data section. Throws ConfigError if there is none.
Dataset load_dataset(const RunConfig& cfg);

}  // namespace rblr::cli
