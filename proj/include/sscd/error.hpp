#pragma once

#include <stdexcept>
#include <string>

namespace sscd {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad flags, bad config values or malformed user-supplied files.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage could not complete (I/O, provider, parse failures).
class StageError : public Error {
 public:
  using Error::Error;
};

/// Malformed payload from an embedding provider.
class ProtocolError : public StageError {
 public:
  using StageError::StageError;
};

/// Recorded artifacts no longer match their hashes, or a result violates a
/// structural guarantee (e.g. an ensemble losing recall).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kSuccess = 0,
  kUsage = 1,
  kStageFailure = 2,
  kIntegrityFailure = 3,
};

}  // namespace sscd
