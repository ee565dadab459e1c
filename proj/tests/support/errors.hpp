#pragma once

#include <doctest.h>

#include <functional>
#include <optional>

#include "ransim/error.hpp"

namespace ransim::test {

/// Code of the ransim::Error thrown by `fn`, or nullopt if it returned normally.
inline std::optional<Errc> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace ransim::test
