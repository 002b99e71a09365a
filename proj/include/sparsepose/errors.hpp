#pragma once

#include <stdexcept>
#include <string>

namespace sparsepose {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SPARSEPOSE_DEFINE_ERROR(Name)      \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
    explicit Name() : Error(#Name) {}      \
  }

SPARSEPOSE_DEFINE_ERROR(DegenerateRotation);
SPARSEPOSE_DEFINE_ERROR(NonUnitQuaternion);
SPARSEPOSE_DEFINE_ERROR(EmptySequence);
SPARSEPOSE_DEFINE_ERROR(TooShort);
SPARSEPOSE_DEFINE_ERROR(InvalidSensor);
SPARSEPOSE_DEFINE_ERROR(InvalidState);
SPARSEPOSE_DEFINE_ERROR(InsufficientSamples);
SPARSEPOSE_DEFINE_ERROR(InconsistentReadings);
SPARSEPOSE_DEFINE_ERROR(ShapeMismatch);
SPARSEPOSE_DEFINE_ERROR(EmptyDataset);
SPARSEPOSE_DEFINE_ERROR(InvalidConfig);
// Malformed or unsupported file contents (magic, version, checksum, truncation).
SPARSEPOSE_DEFINE_ERROR(FormatError);

#undef SPARSEPOSE_DEFINE_ERROR

}  // namespace sparsepose
