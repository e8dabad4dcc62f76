// SPDX-License-Identifier: Apache-2.0
#include "convernet/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace convernet::log {
namespace {
std::atomic<Level> g_level{Level::Warn};
std::mutex g_mutex;
}  // namespace

void set_level(Level lvl) { g_level.store(lvl); }
Level level() { return g_level.load(); }

void write(Level lvl, const std::string& message) {
  static const char* names[] = {"debug", "info", "warn", "error"};
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << message << '\n';
}

}  // namespace convernet::log
