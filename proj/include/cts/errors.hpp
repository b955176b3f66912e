#pragma once

#include <stdexcept>
#include <string>

namespace cts {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CTS_DEFINE_ERROR(Name)                                        \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

CTS_DEFINE_ERROR(ShapeMismatch);
CTS_DEFINE_ERROR(NotScalar);
CTS_DEFINE_ERROR(MalformedPrompt);
CTS_DEFINE_ERROR(LengthExceeded);
CTS_DEFINE_ERROR(MaskNotBinary);
CTS_DEFINE_ERROR(IndivisibleGrid);
CTS_DEFINE_ERROR(BadRange);
CTS_DEFINE_ERROR(BadTimestep);
CTS_DEFINE_ERROR(BadGeometry);
CTS_DEFINE_ERROR(GeometryMismatch);
CTS_DEFINE_ERROR(CorruptCheckpoint);
CTS_DEFINE_ERROR(ConfigError);
CTS_DEFINE_ERROR(IoError);

#undef CTS_DEFINE_ERROR

}  // namespace cts
