#pragma once

#include <stdexcept>
#include <string>

namespace clampcal {

// Raised for malformed input data, invalid parameters and dimension mismatches.
// Front ends map it to "bad request" style outcomes (HTTP 400, CLI exit 2).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a referenced artifact (file, id) does not exist.
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace clampcal
