// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"

namespace rblr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

struct CheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Built-in invariant checks on toy shapes. `fault` names a check whose
/// operator is deliberately corrupted ("adjoint", "reconstruction",
/// "gradient"); empty for a normal run.
std::vector<CheckResult> run_verify_checks(const std::string& fault = "");

int cmd_plan(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_verify(const std::string& fault, std::ostream& out);

struct InferOptions {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> input;
  std::optional<std::filesystem::path> labels;
};
int cmd_infer(const RunConfig& cfg, const InferOptions& opt, std::ostream& out);

/// Full command line entry point; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rblr::cli
