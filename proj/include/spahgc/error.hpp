#pragma once

#include <stdexcept>
#include <string>

namespace spahgc {

/// Root of every error raised by the library. The CLI maps IoError to exit
/// code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SPAHGC_DEFINE_ERROR(Name)       \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

SPAHGC_DEFINE_ERROR(DimensionError);
SPAHGC_DEFINE_ERROR(IndexError);
SPAHGC_DEFINE_ERROR(NumericError);
SPAHGC_DEFINE_ERROR(DegenerateError);
SPAHGC_DEFINE_ERROR(ConfigError);
SPAHGC_DEFINE_ERROR(FormatError);
SPAHGC_DEFINE_ERROR(ValidationError);
SPAHGC_DEFINE_ERROR(SchemaError);
SPAHGC_DEFINE_ERROR(StructuralError);
SPAHGC_DEFINE_ERROR(DivergenceError);
SPAHGC_DEFINE_ERROR(IoError);

#undef SPAHGC_DEFINE_ERROR

}  // namespace spahgc
