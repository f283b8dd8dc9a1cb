#pragma once

#include <stdexcept>
#include <string>

namespace mapfm {

/// Raised for every contract violation inside the library. The CLI maps it
/// to exit code 2.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mapfm
