#pragma once

#include <stdexcept>
#include <string>

namespace fsl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data: negative times, non-finite covariates, malformed rows.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

// A non-finite gradient, loss or parameter was produced during training.
class TrainingDivergence : public Error {
 public:
  using Error::Error;
};

class CalibrationFailure : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised by the federation loop; carries where the failure happened.
class RoundFailure : public Error {
 public:
  RoundFailure(const std::string& what, int round, int client_id)
      : Error(what), round_(round), client_id_(client_id) {}
  int round() const { return round_; }
  int client_id() const { return client_id_; }

 private:
  int round_;
  int client_id_;
};

}  // namespace fsl
