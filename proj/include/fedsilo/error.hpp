#pragma once

#include <stdexcept>
#include <string>

namespace fedsilo {

enum class ErrorCode {
  kInvalidArgument,   // rejected input: bad dims, bad config, empty where non-empty required
  kNumeric,           // non-finite value encountered
  kParse,             // malformed text input (CSV, JSON config)
  kValidation,        // well-formed input violating a domain constraint
  kIo,                // file open/read/write failure
  kBadMagic,          // wire: wrong magic bytes
  kBadVersion,        // wire: unsupported version
  kBadCrc,            // wire: checksum mismatch
  kTruncated,         // wire: input shorter than declared content
  kMalformedMessage,  // wire: kind/field inconsistency
  kProtocol,          // channel: duplicate update for a (round, client)
  kTimeout,           // channel: missing update at synchronization barrier
  kClientFailure,     // a client aborted its round; the run aborts
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace fedsilo
