#pragma once

#include <stdexcept>
#include <string>

namespace feddrl {

// Every failure raised by the library derives from Error so callers can catch
// the family or a single category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Raised when a federated client produces non-finite parameters.
class ClientDivergedError : public NumericError {
 public:
  ClientDivergedError(std::size_t client_id, std::size_t epoch)
      : NumericError("client " + std::to_string(client_id) +
                     " produced non-finite parameters at epoch " +
                     std::to_string(epoch)),
        client_id_(client_id),
        epoch_(epoch) {}

  std::size_t client_id() const { return client_id_; }
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t client_id_;
  std::size_t epoch_;
};

}  // namespace feddrl
