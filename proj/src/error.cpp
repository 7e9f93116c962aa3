#include "lbmpc/error.hpp"

namespace lbmpc {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::UnboundedFPS: return "UnboundedFPS";
    case ErrorKind::EmptyFPS: return "EmptyFPS";
    case ErrorKind::UnstableRealization: return "UnstableRealization";
    case ErrorKind::SingularGain: return "SingularGain";
    case ErrorKind::WeightsInfeasible: return "WeightsInfeasible";
    case ErrorKind::EmptyTightenedSet: return "EmptyTightenedSet";
    case ErrorKind::QPInfeasible: return "QPInfeasible";
    case ErrorKind::Numerical: return "Numerical";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Config: return "Config";
  }
  return "Unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnboundedFPS:
    case ErrorKind::EmptyFPS:
    case ErrorKind::WeightsInfeasible:
    case ErrorKind::EmptyTightenedSet:
    case ErrorKind::QPInfeasible:
      return 2;
    case ErrorKind::UnstableRealization:
    case ErrorKind::SingularGain:
    case ErrorKind::Numerical:
      return 3;
    case ErrorKind::Io:
    case ErrorKind::Config:
    case ErrorKind::InvalidArgument:
      return 4;
  }
  return 1;
}

}  // namespace lbmpc
