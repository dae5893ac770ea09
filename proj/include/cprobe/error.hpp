#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cprobe {

enum class ErrorCode {
  parse,
  schema,
  invariant,
  missing_variant,
  precondition,
  provider,
  cache_miss,
  capability,
  empty_input,
  out_of_range,
  ragged_matrix,
  too_few_raters,
  incomplete_annotation,
  empty_lexicon,
  dimension_mismatch,
  too_few_samples,
  missing_word,
  zero_mass,
  dimensionality_mismatch,
  zero_vector,
  digest_mismatch,
  io,
  address_in_use,
  empty_run,
};

std::string_view to_string(ErrorCode code);

/// CLI exit status for an error: 1 for validation/user errors, 2 for
/// provider and I/O failures.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::vector<std::string> subjects = {});

  ErrorCode code() const noexcept { return code_; }

  // The message without the error-name prefix that what() carries.
  const std::string& message() const noexcept { return message_; }

  // Offending identifiers (probe ids, words, ...) when the error names any.
  const std::vector<std::string>& subjects() const noexcept { return subjects_; }

 private:
  ErrorCode code_;
  std::string message_;
  std::vector<std::string> subjects_;
};

}  // namespace cprobe
