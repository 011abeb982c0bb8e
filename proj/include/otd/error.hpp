// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace otd {

/// File missing, unreadable or unwritable.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (truncated binary, bad pose line, bad header).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a precondition (length mismatch, frame order, invalid config).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace otd
