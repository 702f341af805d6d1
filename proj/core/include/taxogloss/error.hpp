#pragma once

#include <stdexcept>
#include <string>

namespace taxogloss {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (taxonomy files, corpora, checkpoints).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input is well-formed but violates a data invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A named gloss, morpheme or id does not exist.
class LookupError : public Error {
 public:
  using Error::Error;
};

}  // namespace taxogloss
