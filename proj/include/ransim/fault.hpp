#pragma once

#include <exception>
#include <string>
#include <string_view>

// Crash-injection points for the atomic write protocols. Compiled to nothing
// unless RANSIM_TEST_HOOKS is defined.

namespace ransim::fault {

struct SimulatedCrash : std::exception {
  explicit SimulatedCrash(std::string point) : point(std::move(point)) {}
  const char* what() const noexcept override { return point.c_str(); }
  std::string point;
};

enum class Action {
  throw_crash,   // throw SimulatedCrash (in-process)
  exit_process,  // _exit(kCrashExitCode) with no cleanup; use from a forked child
};

inline constexpr int kCrashExitCode = 77;

#ifdef RANSIM_TEST_HOOKS
/// Fires at the (skip + 1)-th time `point` is reached.
void arm(std::string_view point, Action action = Action::throw_crash, int skip = 0);
void disarm();
void hit(std::string_view point);
#define RANSIM_FAULT_POINT(name) ::ransim::fault::hit(name)
#else
#define RANSIM_FAULT_POINT(name) ((void)0)
#endif

}  // namespace ransim::fault
