#pragma once

#include <stdexcept>
#include <string>

namespace cp2 {

// Error taxonomy shared across the library. The CLI maps InvalidConfig to
// exit code 2 and every other Error to exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInput : Error {
  using Error::Error;
};
struct InvalidConfig : Error {
  using Error::Error;
};
struct InvalidState : Error {
  using Error::Error;
};
struct GenerationFailed : Error {
  using Error::Error;
};
struct DegenerateMask : Error {
  using Error::Error;
};
struct IOFailure : Error {
  using Error::Error;
};
struct IncompatibleCheckpoint : Error {
  using Error::Error;
};

}  // namespace cp2
