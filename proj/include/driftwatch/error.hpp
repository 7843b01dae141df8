#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace driftwatch {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// invalid shapes: dimension mismatch, non-rectangular groups, k/n disagreement
class ShapeError : public Error {
 public:
  using Error::Error;
};

// zero-norm vector fed to cosine or produced as a group mean
class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

// exact enumeration refused: arrangement count above the guard
class GuardExceededError : public Error {
 public:
  using Error::Error;
};

// bundled data table failed validation at load time
class DataError : public Error {
 public:
  using Error::Error;
};

// ---- model client ----------------------------------------------------------

// network / timeout / 5xx / rate limit: retryable
class TransportError : public Error {
 public:
  using Error::Error;
};

// bad or missing credentials: fatal
class AuthError : public Error {
 public:
  using Error::Error;
};

// provider returned a refusal instead of a completion: fatal
class RefusalError : public Error {
 public:
  using Error::Error;
};

inline bool retryable(const Error& e) {
  return dynamic_cast<const TransportError*>(&e) != nullptr;
}

// one response grid slot: task prompt j, replicate i
struct Cell {
  std::size_t j = 0;
  std::size_t i = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

// a batch that still has holes after retries were exhausted
class BatchIncompleteError : public Error {
 public:
  BatchIncompleteError(std::string msg, std::vector<Cell> missing)
      : Error(std::move(msg)), missing_(std::move(missing)) {}
  const std::vector<Cell>& missing() const { return missing_; }

 private:
  std::vector<Cell> missing_;
};

// ---- store -----------------------------------------------------------------

class CorruptRecordError : public Error {
 public:
  CorruptRecordError(std::string msg, std::size_t line)
      : Error(std::move(msg)), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class DuplicateRecordError : public Error {
 public:
  using Error::Error;
};

class LockError : public Error {
 public:
  using Error::Error;
};

}  // namespace driftwatch
