#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace entbias {

enum class ErrorCode {
  kInvalidInput,
  kEmptyRegistry,
  kDuplicateId,
  kMissingSurfaceForm,
  kUnknownMetadataKey,
  kUnknownMetadataValue,
  kInvalidSchema,
  kMissingPlaceholder,
  kUnknownTask,
  kUnknownLabel,
  kUnknownLanguage,
  kVocabularyTooSmall,
  kPrecondition,
  kDegenerate,
  kNotFound,
  kDigestMismatch,
  kIo,
};

std::string_view to_string(ErrorCode code);

// All recoverable failures in the library surface as this exception. The code
// lets callers (and tests) branch without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace entbias
