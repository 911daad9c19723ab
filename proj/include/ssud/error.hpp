#pragma once

#include <stdexcept>
#include <string>

namespace ssud {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input that cannot be recovered from (stream-level).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Matrix or tensor shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// An attention row with no mass left once special tokens are dropped.
class DegenerateRowError : public Error {
 public:
  using Error::Error;
};

// Failure talking to the model service. Callers may retry.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Offline mode asked for something the caches do not hold.
class CacheMissError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssud
