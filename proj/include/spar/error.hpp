#pragma once

#include <stdexcept>
#include <string>

namespace spar {

/// Base of every error thrown by the library. `kind()` is a stable short tag
/// that the CLI maps to exit codes and structured error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  [[nodiscard]] const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define SPAR_DEFINE_ERROR(Name, tag)                                          \
  class Name : public Error {                                                 \
   public:                                                                    \
    explicit Name(const std::string& what) : Error(tag, what) {}              \
  }

SPAR_DEFINE_ERROR(DomainError, "domain");
SPAR_DEFINE_ERROR(NonPositiveDataError, "nonpositive_data");
SPAR_DEFINE_ERROR(DegenerateMarginError, "degenerate_margin");
SPAR_DEFINE_ERROR(DegeneratePointError, "degenerate_point");
SPAR_DEFINE_ERROR(ShapeError, "shape");
SPAR_DEFINE_ERROR(InsufficientDataError, "insufficient_data");
SPAR_DEFINE_ERROR(InitializationError, "initialization");
SPAR_DEFINE_ERROR(CalibrationError, "calibration");
SPAR_DEFINE_ERROR(StateError, "state");
SPAR_DEFINE_ERROR(ResolutionError, "resolution");
SPAR_DEFINE_ERROR(InfeasibleRegionError, "infeasible_region");
SPAR_DEFINE_ERROR(ParseError, "parse");
SPAR_DEFINE_ERROR(DataError, "data");
SPAR_DEFINE_ERROR(FileError, "file");
SPAR_DEFINE_ERROR(FormatError, "format");
SPAR_DEFINE_ERROR(BootstrapError, "bootstrap");

#undef SPAR_DEFINE_ERROR

}  // namespace spar
