#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace refine {

// Malformed input files (bad JSON, bad binary layout). Messages carry the
// offending path and line where available.
class ParseError : public std::runtime_error {
public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Violated invariants, bad configuration, unusable arguments.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// HTTP endpoint unreachable or persistently failing after retries.
class TransportError : public std::runtime_error {
public:
  explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

// The generator produced no usable queries for a document.
class GenerationError : public std::runtime_error {
public:
  explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value in a numeric computation (degenerate embedding, overflow).
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss; carries the micro-batch step index.
class DivergenceError : public std::runtime_error {
public:
  DivergenceError(const std::string& what, std::size_t step)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

private:
  std::size_t step_;
};

// Filesystem failures (open, write, rename).
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace refine
