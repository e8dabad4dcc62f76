// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace convernet {

/// One example: the time-sorted posts of a thread up to and including the
/// target post, which is always last.
struct Instance {
  std::string thread_id;
  std::string target_post_id;
  int label = 0;
  std::vector<std::vector<std::size_t>> tokens;  // word ids per post
  std::vector<std::vector<double>> context;      // numeric context row per post
  std::vector<std::size_t> background;           // background id per post, 0 = none

  std::size_t length() const { return tokens.size(); }
};

}  // namespace convernet
