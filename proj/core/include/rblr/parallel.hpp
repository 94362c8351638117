// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace rblr {

/// Worker cap: RBLR_THREADS if set (>= 1), otherwise hardware concurrency.
std::size_t max_threads();

/// Runs body(i) for i in [0, count). Every index is written by exactly one
/// worker, so results do not depend on the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace rblr
