// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace revive {

// Base for every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

// Operation called on an object in the wrong lifecycle state.
class StateError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API precondition that the recovery path never should.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Recovery cannot proceed (no survivors, no healthy dense-FFN group, ...).
class UnrecoverableError : public Error {
 public:
  using Error::Error;
};

class OutOfBlocks : public Error {
 public:
  using Error::Error;
};

class RoutingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A simulation invariant was violated. Never expected in a correct run.
class IntegrityViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Scenario file problem with a position: line is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::string field, const std::string& what)
      : Error(format(line, field, what)), line_(line), field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(std::size_t line, const std::string& field,
                            const std::string& what) {
    std::string out = "parse error";
    if (line > 0) out += " at line " + std::to_string(line);
    if (!field.empty()) out += " (field '" + field + "')";
    return out + ": " + what;
  }

  std::size_t line_;
  std::string field_;
};

}  // namespace revive
