#include "cprobe/error.hpp"

#include <utility>

namespace cprobe {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse: return "ParseError";
    case ErrorCode::schema: return "SchemaError";
    case ErrorCode::invariant: return "InvariantError";
    case ErrorCode::missing_variant: return "MissingVariant";
    case ErrorCode::precondition: return "PreconditionError";
    case ErrorCode::provider: return "ProviderError";
    case ErrorCode::cache_miss: return "CacheMiss";
    case ErrorCode::capability: return "CapabilityError";
    case ErrorCode::empty_input: return "EmptyInput";
    case ErrorCode::out_of_range: return "OutOfRange";
    case ErrorCode::ragged_matrix: return "RaggedMatrix";
    case ErrorCode::too_few_raters: return "TooFewRaters";
    case ErrorCode::incomplete_annotation: return "IncompleteAnnotation";
    case ErrorCode::empty_lexicon: return "EmptyLexicon";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::too_few_samples: return "TooFewSamples";
    case ErrorCode::missing_word: return "MissingWord";
    case ErrorCode::zero_mass: return "ZeroMass";
    case ErrorCode::dimensionality_mismatch: return "DimensionalityMismatch";
    case ErrorCode::zero_vector: return "ZeroVector";
    case ErrorCode::digest_mismatch: return "DigestMismatch";
    case ErrorCode::io: return "IOError";
    case ErrorCode::address_in_use: return "AddressInUse";
    case ErrorCode::empty_run: return "EmptyRun";
  }
  return "Error";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::provider:
    case ErrorCode::cache_miss:
    case ErrorCode::io:
    case ErrorCode::address_in_use:
      return 2;
    default:
      return 1;
  }
}

Error::Error(ErrorCode code, const std::string& message, std::vector<std::string> subjects)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      message_(message),
      subjects_(std::move(subjects)) {}

}  // namespace cprobe
