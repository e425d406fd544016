#ifndef APIVR_ERRORS_HPP_
#define APIVR_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace apivr {

// Error categories map onto CLI exit codes: config -> 2, data -> 3, numeric -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DimMismatch : public DataError {
 public:
  using DataError::DataError;
};

class ZeroNormRow : public DataError {
 public:
  using DataError::DataError;
};

class BadTruncation : public DataError {
 public:
  using DataError::DataError;
};

class NoNegativeAvailable : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientDiversity : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class LabelOutOfRange : public DataError {
 public:
  using DataError::DataError;
};

class EmptyGallery : public DataError {
 public:
  using DataError::DataError;
};

class NoRelevantItems : public DataError {
 public:
  using DataError::DataError;
};

class SingularGram : public NumericError {
 public:
  using NumericError::NumericError;
};

class NonFiniteLoss : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace apivr

#endif  // APIVR_ERRORS_HPP_
