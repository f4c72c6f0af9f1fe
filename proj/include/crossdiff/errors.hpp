#pragma once

#include <stdexcept>
#include <string>

namespace crossdiff {

// Invalid arguments are reported with std::invalid_argument throughout.

/// Bad magic bytes or unsupported version in a container file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File content inconsistent with its own header or manifest.
class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input for which a metric is undefined (zero band mean, flat image, ...).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace crossdiff
