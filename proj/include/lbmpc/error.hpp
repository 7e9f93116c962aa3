#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lbmpc {

/// Failure classes raised by the toolkit. The CLI maps each class onto an
/// exit code, see `exit_code_for`.
enum class ErrorKind {
  InvalidArgument,
  UnboundedFPS,
  EmptyFPS,
  UnstableRealization,
  SingularGain,
  WeightsInfeasible,
  EmptyTightenedSet,
  QPInfeasible,
  Numerical,
  Io,
  Config,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// 0 success, 2 infeasibility class, 3 numerical failure, 4 I/O or config.
int exit_code_for(ErrorKind kind);

#define LBMPC_REQUIRE(cond, msg)                                          \
  do {                                                                    \
    if (!(cond)) throw ::lbmpc::Error(::lbmpc::ErrorKind::InvalidArgument, \
                                      (msg));                             \
  } while (false)

}  // namespace lbmpc
