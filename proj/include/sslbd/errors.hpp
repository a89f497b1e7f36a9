#pragma once

#include <stdexcept>
#include <string>

namespace sslbd {

/// Process exit codes used by the command line tool.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kDivergence = 4,
  kProvenance = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid configuration or violated call contract.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

/// Anything wrong with data on disk or in a manifest.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

class IoError : public DataError {
 public:
  explicit IoError(const std::string& what) : DataError("io error: " + what) {}
};

class PlacementError : public DataError {
 public:
  explicit PlacementError(const std::string& what) : DataError("placement error: " + what) {}
};

class FormatError : public DataError {
 public:
  explicit FormatError(const std::string& what) : DataError("format error: " + what) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error(ExitCode::kDivergence, what) {}
};

class ProvenanceError : public Error {
 public:
  explicit ProvenanceError(const std::string& what) : Error(ExitCode::kProvenance, what) {}
};

}  // namespace sslbd
