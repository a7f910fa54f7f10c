#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cellguard {

// Process exit codes surfaced by the CLI. Every exception below maps to one.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kInputValidation = 3,
  kGateway = 4,
  kUnderCoverage = 5,
  kVersionMismatch = 6,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kInputValidation)
      : std::runtime_error(what), code_(code) {}

  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Malformed input (bad line, bad JSON, wrong shape).
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(what, ExitCode::kInputValidation) {}
};

// Well-formed input that violates an invariant (duplicate id, ragged matrix, ...).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(what, ExitCode::kInputValidation) {}
};

// File written by a different tool or an incompatible format version.
class VersionMismatchError : public Error {
 public:
  explicit VersionMismatchError(const std::string& what) : Error(what, ExitCode::kVersionMismatch) {}
};

class GatewayError : public Error {
 public:
  explicit GatewayError(const std::string& what) : Error(what, ExitCode::kGateway) {}
};

class ReplayMissError : public GatewayError {
 public:
  explicit ReplayMissError(const std::string& fingerprint)
      : GatewayError("replay miss: no transcript for fingerprint " + fingerprint),
        fingerprint_(fingerprint) {}

  const std::string& fingerprint() const noexcept { return fingerprint_; }

 private:
  std::string fingerprint_;
};

// Transport failure that survived all retry attempts.
class RetriableHttpError : public GatewayError {
 public:
  RetriableHttpError(const std::string& what, int attempts)
      : GatewayError(what + " (after " + std::to_string(attempts) + " attempts)"), attempts_(attempts) {}

  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

// The server answered but the body was not a chat-completion payload.
class ProtocolError : public GatewayError {
 public:
  explicit ProtocolError(const std::string& what) : GatewayError("protocol error: " + what) {}
};

// A model reply lacked required labeled fields or could not be read at all.
class StructuredParseError : public Error {
 public:
  StructuredParseError(const std::string& what, std::vector<std::string> missing)
      : Error(what, ExitCode::kInputValidation), missing_(std::move(missing)) {}

  const std::vector<std::string>& missing_fields() const noexcept { return missing_; }

 private:
  std::vector<std::string> missing_;
};

// A reply parsed fine but proposed something the prompt contract forbids.
class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& what) : Error(what, ExitCode::kInputValidation) {}
};

}  // namespace cellguard
