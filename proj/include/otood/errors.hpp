#ifndef OTOOD_ERRORS_HPP_
#define OTOOD_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace otood {

// Error taxonomy mirrored by the CLI exit codes:
//   1 usage, 2 I/O, 3 validation, 4 numerical failure.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace otood

#endif  // OTOOD_ERRORS_HPP_
