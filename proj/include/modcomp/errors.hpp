#pragma once

#include <stdexcept>
#include <string>

namespace modcomp {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct StructureError : Error {
  using Error::Error;
};
struct ScoringError : Error {
  using Error::Error;
};
struct ArgumentError : Error {
  using Error::Error;
};
struct LookupError : Error {
  using Error::Error;
};
struct IndexError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct LengthError : Error {
  using Error::Error;
};

// A required on-disk artifact (checkpoint, corpus archive) is absent or unreadable.
struct SetupError : Error {
  using Error::Error;
};

// Malformed input file; carries a 1-based line number when known.
struct ParseError : Error {
  long line = 0;
  ParseError(const std::string& msg, long line_no = 0) : Error(msg), line(line_no) {}
};

}  // namespace modcomp
