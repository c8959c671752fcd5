#pragma once

#include <stdexcept>
#include <string>

#include "xhved/tensor.hpp"

namespace xhved {

/// File-system or format problems (CLI exit code 2).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A malformed input; `field()` names the offending header field or key.
class ParseError : public IoError {
 public:
  ParseError(std::string field, const std::string& what)
      : IoError(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace xhved
