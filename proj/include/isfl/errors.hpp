#pragma once

#include <stdexcept>
#include <string>

namespace isfl {

/// Invalid arguments or configuration (CLI exit code 1).
class ArgumentError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// File or stream failures (CLI exit code 2).
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Not enough samples to satisfy a request (CLI exit code 3).
class CapacityError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ArgumentError(what);
}

}  // namespace detail
}  // namespace isfl
