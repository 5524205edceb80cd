#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rfe {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or spatial extents.
struct DimensionError : Error {
  using Error::Error;
};

// Semantically invalid arguments: masked targets, unknown task ids,
// out-of-order training, missing snapshots, degenerate spectra.
struct InvalidArgument : Error {
  using Error::Error;
};

// Invalid or inconsistent experiment configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Training produced a non-finite loss or gradient.
struct DivergenceError : Error {
  using Error::Error;
};

// Filesystem and serialization failures.
struct IoError : Error {
  using Error::Error;
};

// Malformed container file; carries the byte offset of the failure.
struct ParseError : IoError {
  ParseError(const std::string& what, std::size_t byte_offset)
      : IoError(what + " at byte " + std::to_string(byte_offset)),
        offset(byte_offset) {}
  std::size_t offset;
};

}  // namespace rfe
