#include "longfoley/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace lf::log {

namespace {
std::atomic<bool> g_quiet{false};
std::mutex g_mutex;
}  // namespace

void set_quiet(bool q) { g_quiet = q; }
bool quiet() { return g_quiet; }

void info(std::string_view msg) {
  if (g_quiet) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "[info] " << msg << '\n';
}

void warn(std::string_view msg) {
  std::lock_guard lock(g_mutex);
  std::cerr << "[warn] " << msg << '\n';
}

}  // namespace lf::log
