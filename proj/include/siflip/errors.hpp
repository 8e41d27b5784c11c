#pragma once

#include <stdexcept>
#include <string>

namespace siflip {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (bad dims, unknown keys, N mismatch).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class LexiconError : public Error {
 public:
  using Error::Error;
};

/// Word boundaries that do not tile the frame range.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class VocabError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Data pipeline problems, e.g. a sample without negative labels.
class PipelineError : public Error {
 public:
  using Error::Error;
};

/// A required input file or directory is missing or empty.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace siflip
