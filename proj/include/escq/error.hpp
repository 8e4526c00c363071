#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace escq {

enum class ErrorCode {
  kInvalidArgument,
  kIndexOutOfRange,
  kMissingQuery,
  kInvalidEpisode,
  kEmptyEpisode,
  kEmptyCorpus,
  kContextOverflow,
  kBackendMismatch,
  kMissingNextState,
  kInsufficientData,
  kCatalogTooSmall,
  kJudgeFailure,
  kTimeout,
  kMalformedReply,
  kOutOfRange,
  kEpisodeFinished,
  kStateSpaceTooLarge,
  kParseError,
  kUnknownStrategy,
  kUnknownEmotion,
  kLengthMismatch,
  kEmpty,
  kCheckpointMismatch,
  kIo,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this type; `code()` lets callers
// branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace escq
