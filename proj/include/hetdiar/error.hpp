#ifndef HETDIAR_ERROR_HPP
#define HETDIAR_ERROR_HPP

#include <stdexcept>
#include <string>

namespace hetdiar {

/// Bad input data: malformed files, violated preconditions on data shape.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure produced a non-finite or singular result.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or command-line usage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hetdiar

#endif  // HETDIAR_ERROR_HPP
