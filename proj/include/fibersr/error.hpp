#pragma once

#include <stdexcept>
#include <string>

namespace fibersr {

// Raised for malformed inputs and violated preconditions. The CLI maps it to
// exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(message);
}

}  // namespace fibersr
