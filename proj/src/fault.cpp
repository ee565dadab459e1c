#include "ransim/fault.hpp"

#ifdef RANSIM_TEST_HOOKS

#include <unistd.h>

#include <mutex>

namespace ransim::fault {

namespace {
std::mutex g_mutex;
std::string g_point;
Action g_action = Action::throw_crash;
int g_skip = 0;
bool g_armed = false;
}  // namespace

void arm(std::string_view point, Action action, int skip) {
  std::lock_guard lock(g_mutex);
  g_point = point;
  g_action = action;
  g_skip = skip;
  g_armed = true;
}

void disarm() {
  std::lock_guard lock(g_mutex);
  g_armed = false;
}

void hit(std::string_view point) {
  Action action;
  {
    std::lock_guard lock(g_mutex);
    if (!g_armed || point != g_point) return;
    if (g_skip-- > 0) return;
    g_armed = false;
    action = g_action;
  }
  if (action == Action::exit_process) ::_exit(kCrashExitCode);
  throw SimulatedCrash(std::string(point));
}

}  // namespace ransim::fault

#endif
