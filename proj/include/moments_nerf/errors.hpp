#pragma once

#include <stdexcept>
#include <string>

namespace moments_nerf {

/// Precondition violated by the caller (bad shape, bad size, invalid index).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scene, image, or checkpoint could not be read. The message names the field.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ArgumentError(what);
}

}  // namespace moments_nerf
